"""
Task registry types. A task body never touches an ObjectGraph directly: it
receives a TaskContext, which is where the client reads its local graph and
where the server faults proxies in.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from offgrid.core.errors import ConfigError, IllegalState
from offgrid.core.object_model import ObjectNode, derive_guid
from offgrid.utils.logger_setup import log_debug

log_debug("runtime.tasks module initialized.")

# A hint is either a constant or computed from (graph, target_root, param_roots).
Hint = Union[int, float, Callable]


@dataclass
class TaskDescriptor:
    task_id: int
    name: str
    local_impl: Callable
    offloadable: bool = True
    alternative_impl_id: Optional[int] = None
    access_order_hint: Optional[Union[list, Callable]] = None
    compute_hint: Hint = 0
    expected_down: Hint = 0
    private: bool = False

    def __post_init__(self):
        if not 0 <= self.task_id <= 0xFFFFFFFF:
            raise ConfigError(f"task_id out of range: {self.task_id}")
        if self.alternative_impl_id is not None and not 0 <= self.alternative_impl_id <= 0xFFFFFFFF:
            raise ConfigError(f"alternative_impl_id out of range: {self.alternative_impl_id}")

    @property
    def remotable(self):
        return self.offloadable and not self.private

    def _resolve(self, value, graph, target_root, param_roots):
        return value(graph, target_root, param_roots) if callable(value) else value

    def work_units(self, graph, target_root, param_roots):
        return float(self._resolve(self.compute_hint, graph, target_root, param_roots))

    def down_bytes(self, graph, target_root, param_roots):
        return float(self._resolve(self.expected_down, graph, target_root, param_roots))

    def access_order(self, graph, target_root, param_roots):
        if self.access_order_hint is None:
            return []
        return list(self._resolve(self.access_order_hint, graph, target_root, param_roots))


class TaskContext:
    """What a running task sees of the object graph.

    `fault` is called with a Guid when the task touches a proxy; without one
    (local execution) touching a proxy is an IllegalState.
    """

    def __init__(self, graph, target_root, param_roots, static_roots=(), charge=None, fault=None):
        self.graph = graph
        self.target_root = target_root
        self.param_roots = list(param_roots)
        self.static_roots = list(static_roots)
        self._charge = charge
        self._fault = fault
        self._created = 0
        self.modified = []
        self.work_units = 0.0

    def load(self, guid):
        node = self.graph.node(guid)
        if node.is_proxy:
            if self._fault is None:
                raise IllegalState(f"task touched proxy {guid.hex()} outside a server session")
            node = self._fault(guid)
        return node

    def payload(self, guid):
        return self.load(guid).payload

    def store(self, guid, payload=None, refs=None):
        node = self.load(guid)
        if payload is not None:
            node.payload = bytes(payload)
        if refs is not None:
            for ref in refs:
                self.graph.node(ref)
            node.refs = list(refs)
        self._mark(guid)
        return node

    def create(self, class_id, payload=b'', refs=(), proxyable=False):
        """Insert a new node; its Guid depends only on the target and the creation order."""
        guid = derive_guid(self.target_root, self._created)
        self._created += 1
        for ref in refs:
            self.graph.node(ref)
        self.graph.add(ObjectNode(guid, class_id, payload, list(refs), proxyable=proxyable))
        self._mark(guid)
        return guid

    def charge(self, units):
        self.work_units += units
        if self._charge is not None:
            self._charge(units)

    def _mark(self, guid):
        if guid not in self.modified:
            self.modified.append(guid)


def build_bundle(descriptors):
    """Code bundle for a set of tasks: one `task_id:name` line per offloadable task.

    Alternative implementations are listed as `<alt_id>:<name>.alternative`.
    Private tasks never leave the device.
    """
    lines = []
    for task in sorted(descriptors, key=lambda t: t.task_id):
        if not task.remotable:
            continue
        lines.append(f"{task.task_id}:{task.name}")
        if task.alternative_impl_id is not None:
            lines.append(f"{task.alternative_impl_id}:{task.name}.alternative")
    return ''.join(line + '\n' for line in lines).encode('utf-8')


def parse_bundle(bundle):
    """task_id -> name for every line of a bundle manifest."""
    try:
        text = bytes(bundle).decode('utf-8')
    except UnicodeDecodeError:
        raise ConfigError("code bundle is not utf-8") from None
    entries = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        task_id, sep, name = line.partition(':')
        if not sep or not task_id.isdigit():
            raise ConfigError(f"malformed bundle line '{line}'")
        entries[int(task_id)] = name
    return entries


def bundle_hash(bundle):
    return hashlib.md5(bytes(bundle)).digest()
