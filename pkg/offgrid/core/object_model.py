"""
Object model: application state as a directed, possibly cyclic graph of
ObjectNodes, its reachable closure, the canonical binary encoding and the
proxy substitution applied when state travels to the server.

Canonical node encoding (big-endian):
    guid(16) | class_id(4) | flags(1) | ref_count(4) | refs(16 x ref_count) | payload_len(4) | payload
Graph stream:
    magic "COG1"(4) | node_count(4) | nodes in closure order
"""
from __future__ import annotations

import hashlib
import struct
import uuid
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum

from offgrid import config
from offgrid.core.errors import IllegalState, ProtocolError, UnknownObject
from offgrid.utils.logger_setup import log_debug

log_debug("core.object_model module initialized.")

GUID_LEN = 16
FLAG_EMPTY_CONTAINER = 0x01
FLAG_IS_IN_CACHE = 0x02
FLAG_PROXYABLE = 0x04
_KNOWN_FLAGS = FLAG_EMPTY_CONTAINER | FLAG_IS_IN_CACHE | FLAG_PROXYABLE

_NODE_HEAD = struct.Struct('>16sIBI')
_U32 = struct.Struct('>I')
_MAX_U32 = 0xFFFFFFFF


class TransmissionStrategy(IntEnum):
    EAGER = 0
    LAZY = 1
    PIPELINED = 2

    @property
    def label(self):
        return self.name.lower()

    @classmethod
    def parse(cls, text):
        try:
            return cls[str(text).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown transmission strategy '{text}'") from None


def new_guid(rng=None):
    """Fresh 16-byte Guid; drawn from `rng` (a random.Random) when deterministic ids are needed."""
    if rng is None:
        return uuid.uuid4().bytes
    return rng.getrandbits(128).to_bytes(GUID_LEN, 'big')


def derive_guid(base, counter):
    """Guid for the counter-th node created while running a task rooted at `base`.

    Local and remote executions of the same task derive the same ids, so
    created nodes compare equal across placements.
    """
    return hashlib.md5(b'offgrid.derive' + base + counter.to_bytes(8, 'big')).digest()


@dataclass
class ObjectNode:
    guid: bytes
    class_id: int = 0
    payload: bytes = b''
    refs: list = field(default_factory=list)
    proxyable: bool = False
    empty_container: bool = False
    is_in_cache: bool = False

    def __post_init__(self):
        if len(self.guid) != GUID_LEN:
            raise ValueError(f"guid must be {GUID_LEN} bytes, got {len(self.guid)}")
        if not 0 <= self.class_id <= _MAX_U32:
            raise ValueError(f"class_id out of range: {self.class_id}")
        self.payload = bytes(self.payload)
        self.refs = list(self.refs)

    @property
    def is_proxy(self):
        return self.empty_container or self.is_in_cache

    @property
    def flags(self):
        value = 0
        if self.empty_container:
            value |= FLAG_EMPTY_CONTAINER
        if self.is_in_cache:
            value |= FLAG_IS_IN_CACHE
        if self.proxyable:
            value |= FLAG_PROXYABLE
        return value

    def as_proxy(self, in_cache=False):
        # A proxy carries identity only; payload and refs travel on hydration.
        return ObjectNode(self.guid, self.class_id, b'', [], proxyable=True,
                          empty_container=True, is_in_cache=in_cache)

    def copy(self):
        return ObjectNode(self.guid, self.class_id, self.payload, list(self.refs),
                          self.proxyable, self.empty_container, self.is_in_cache)


@dataclass
class ProxyPolicy:
    mode: TransmissionStrategy = TransmissionStrategy.EAGER
    cache_enabled: bool = False

    @property
    def proxies_by_strategy(self):
        return self.mode in (TransmissionStrategy.LAZY, TransmissionStrategy.PIPELINED)


class ObjectGraph:
    """Guid -> ObjectNode map plus named static roots. Iteration follows insertion order."""

    def __init__(self, nodes=None):
        self.nodes = {}
        self.statics = {}
        for node in nodes or ():
            self.add(node)

    def __contains__(self, guid):
        return guid in self.nodes

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes.values())

    def add(self, node):
        if node.guid in self.nodes:
            raise IllegalState(f"duplicate guid {node.guid.hex()}")
        self.nodes[node.guid] = node
        return node

    def put(self, node):
        self.nodes[node.guid] = node
        return node

    def node(self, guid):
        try:
            return self.nodes[guid]
        except KeyError:
            raise UnknownObject(guid) from None

    def set_static(self, name, guid):
        self.node(guid)
        self.statics[name] = guid

    def static_roots(self, names=None):
        """Guids of the named statics (all of them, in registration order, when names is None)."""
        if names is None:
            return list(self.statics.values())
        roots = []
        for name in names:
            if name not in self.statics:
                raise UnknownObject(name.encode('utf-8'))
            roots.append(self.statics[name])
        return roots

    def copy(self):
        clone = ObjectGraph()
        for node in self.nodes.values():
            clone.nodes[node.guid] = node.copy()
        clone.statics = dict(self.statics)
        return clone


# --- Encoding ---

def encode_node(node, flags=None):
    if flags is None:
        flags = node.flags
    for ref in node.refs:
        if len(ref) != GUID_LEN:
            raise ValueError(f"node {node.guid.hex()} has a malformed ref")
    return b''.join((
        _NODE_HEAD.pack(node.guid, node.class_id, flags, len(node.refs)),
        b''.join(node.refs),
        _U32.pack(len(node.payload)),
        node.payload,
    ))


def decode_node(buffer, offset=0):
    """Decode one node starting at `offset`; returns (ObjectNode, next_offset)."""
    end = len(buffer)
    if offset + _NODE_HEAD.size > end:
        raise ProtocolError("truncated node header", offset)
    guid, class_id, flags, ref_count = _NODE_HEAD.unpack_from(buffer, offset)
    pos = offset + _NODE_HEAD.size
    if flags & ~_KNOWN_FLAGS:
        raise ProtocolError(f"unknown flag bits 0x{flags:02x}", offset + 20)
    if pos + GUID_LEN * ref_count > end:
        raise ProtocolError("truncated refs", pos)
    refs = [bytes(buffer[pos + i * GUID_LEN:pos + (i + 1) * GUID_LEN]) for i in range(ref_count)]
    pos += GUID_LEN * ref_count
    if pos + _U32.size > end:
        raise ProtocolError("truncated payload length", pos)
    (payload_len,) = _U32.unpack_from(buffer, pos)
    pos += _U32.size
    if pos + payload_len > end:
        raise ProtocolError("truncated payload", pos)
    payload = bytes(buffer[pos:pos + payload_len])
    pos += payload_len

    empty = bool(flags & FLAG_EMPTY_CONTAINER)
    in_cache = bool(flags & FLAG_IS_IN_CACHE)
    proxyable = bool(flags & FLAG_PROXYABLE)
    if empty and (payload or refs):
        raise ProtocolError("empty container carries payload or refs", offset)
    if in_cache and not empty:
        raise ProtocolError("is_in_cache without empty_container", offset)
    if (empty or in_cache) and not proxyable:
        raise ProtocolError("proxy of a non-proxyable node", offset)
    node = ObjectNode(bytes(guid), class_id, payload, refs, proxyable, empty, in_cache)
    return node, pos


def encode_stream(nodes):
    nodes = list(nodes)
    parts = [config.GRAPH_MAGIC, _U32.pack(len(nodes))]
    parts.extend(encode_node(n) for n in nodes)
    return b''.join(parts)


def decode_stream(data):
    if len(data) < 8:
        raise ProtocolError("truncated graph stream header", 0)
    if bytes(data[:4]) != config.GRAPH_MAGIC:
        raise ProtocolError("bad graph stream magic", 0)
    (count,) = _U32.unpack_from(data, 4)
    pos = 8
    seen = set()
    nodes = []
    for _ in range(count):
        start = pos
        node, pos = decode_node(data, pos)
        if node.guid in seen:
            raise ProtocolError(f"duplicate guid {node.guid.hex()} in stream", start)
        seen.add(node.guid)
        nodes.append(node)
    if pos != len(data):
        raise ProtocolError("trailing bytes after graph stream", pos)
    return nodes


def content_hash(node):
    """MD5 of the canonical encoding with the proxy flags zeroed (proxyable bit kept)."""
    return hashlib.md5(encode_node(node, flags=FLAG_PROXYABLE if node.proxyable else 0)).digest()


# --- Closure and serialization ---

def reachable_closure(graph, roots):
    """Transitive closure of `roots` over refs in BFS order (first visit wins)."""
    order = []
    seen = set()
    queue = deque()
    for root in roots:
        graph.node(root)
        if root not in seen:
            seen.add(root)
            queue.append(root)
    while queue:
        guid = queue.popleft()
        order.append(guid)
        for ref in graph.node(guid).refs:
            if ref not in seen:
                seen.add(ref)
                queue.append(ref)
    return order


@dataclass
class SerializedState:
    data: bytes
    closure: list
    elided: list
    cached: list
    full_sizes: dict

    @property
    def strategy_proxies(self):
        cached = set(self.cached)
        return [g for g in self.elided if g not in cached]


def encode_state(graph, roots, policy, cache=None):
    """serialize_graph with the bookkeeping the client runtime needs.

    `cache` is any object with should_elide(node); it is consulted only when
    policy.cache_enabled.
    """
    closure = reachable_closure(graph, roots)
    parts = [config.GRAPH_MAGIC, _U32.pack(len(closure))]
    elided, cached, full_sizes = [], [], {}
    for guid in closure:
        node = graph.node(guid)
        full = encode_node(node)
        full_sizes[guid] = len(full)
        if not node.proxyable:
            parts.append(full)
        elif policy.cache_enabled and cache is not None and cache.should_elide(node):
            parts.append(encode_node(node.as_proxy(in_cache=True)))
            elided.append(guid)
            cached.append(guid)
        elif policy.proxies_by_strategy:
            parts.append(encode_node(node.as_proxy()))
            elided.append(guid)
        else:
            parts.append(full)
    return SerializedState(b''.join(parts), closure, elided, cached, full_sizes)


def serialize_graph(graph, roots, policy, cache=None):
    state = encode_state(graph, roots, policy, cache)
    return state.data, state.elided


def deserialize_graph(data):
    graph = ObjectGraph()
    for node in decode_stream(data):
        graph.nodes[node.guid] = node
    return graph


def hydrate_proxy(graph, guid, node_bytes):
    """Replace proxy `guid` with the first node of the stream `node_bytes`.

    Further nodes in the stream are inserted when the graph lacks them.
    """
    node = graph.node(guid)
    if not node.is_proxy:
        raise IllegalState(f"node {guid.hex()} is not a proxy")
    nodes = decode_stream(node_bytes)
    if not nodes:
        raise ProtocolError("empty hydration stream", 0)
    real = nodes[0]
    if real.guid != guid:
        raise ProtocolError(f"hydration guid mismatch: expected {guid.hex()}, got {real.guid.hex()}")
    if real.is_proxy:
        raise ProtocolError(f"hydration stream for {guid.hex()} carries a proxy")
    node.class_id = real.class_id
    node.payload = real.payload
    node.refs = list(real.refs)
    node.proxyable = real.proxyable
    node.empty_container = False
    node.is_in_cache = False
    for extra in nodes[1:]:
        if extra.guid not in graph:
            graph.nodes[extra.guid] = extra
    return node


def apply_result_state(local, returned):
    """Overwrite local nodes with the returned ones; insert nodes the client has not seen."""
    nodes = decode_stream(returned)
    for node in nodes:
        if node.is_proxy:
            raise ProtocolError(f"returned state carries proxy {node.guid.hex()}")
    for node in nodes:
        existing = local.nodes.get(node.guid)
        if existing is None:
            local.nodes[node.guid] = node
            continue
        existing.class_id = node.class_id
        existing.payload = node.payload
        existing.refs = list(node.refs)
        existing.proxyable = node.proxyable
    return [n.guid for n in nodes]


def graph_hash(graph, roots):
    """Hex MD5 of the eager, flag-normalised encoding of the closure of `roots`."""
    digest = hashlib.md5()
    closure = reachable_closure(graph, roots)
    digest.update(_U32.pack(len(closure)))
    for guid in closure:
        node = graph.node(guid)
        digest.update(encode_node(node, flags=FLAG_PROXYABLE if node.proxyable else 0))
    return digest.hexdigest()
