"""
Client side of the middleware: task registry, code registration, network
profiling, placement, the three transmission strategies and the fallback to
local execution.
"""
from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field

from offgrid import config
from offgrid.core import globals as app_globals
from offgrid.core.errors import Conflict, ProtocolError, RemoteError, RemoteFailure, IllegalState
from offgrid.core.object_model import (ProxyPolicy, TransmissionStrategy, apply_result_state, content_hash,
                                       encode_state, encode_stream)
from offgrid.core.wire_protocol import (CodeUpload, ExecuteBody, MessageKind, RemoteErrorCode, ResultStatus,
                                        WireMessage, ping, probe, push)
from offgrid.runtime.decision import NetworkProfile, Placement, decide, profile_from_samples
from offgrid.runtime.tasks import TaskContext, build_bundle, bundle_hash
from offgrid.utils.logger_setup import log_debug, log_warning

log_debug("runtime.client module initialized.")

_REPLY_KINDS = {MessageKind.CODE_OK, MessageKind.CODE_NEED, MessageKind.PONG, MessageKind.PROBE}


@dataclass
class TransferMetrics:
    bytes_up: int = 0
    bytes_down: int = 0
    wall_time: float = 0.0
    placement: Placement = field(default_factory=Placement.local)
    fetch_round_trips: int = 0
    cache_hits: int = 0
    pushes: int = 0
    code_bytes_up: int = 0
    exec_nanos: int = 0
    alt_used: bool = False
    work_units: float = 0.0

    @property
    def fell_back(self):
        return self.placement.fallback


class ClientCacheView:
    """Guid -> digest of the copy the server last acknowledged holding."""

    def __init__(self, enabled=False):
        self.enabled = enabled
        self.entries = {}

    def should_elide(self, node):
        return should_elide(node, self)

    def acknowledge(self, graph, guids):
        for guid in guids:
            node = graph.nodes.get(guid)
            if node is not None and node.proxyable and not node.is_proxy:
                self.entries[guid] = content_hash(node)

    def clear(self):
        self.entries.clear()


def should_elide(node, cache):
    if cache is None or not cache.enabled or not node.proxyable:
        return False
    digest = cache.entries.get(node.guid)
    return digest is not None and digest == content_hash(node)


class _Offload:
    """Bookkeeping for the one offload in flight."""

    def __init__(self, graph, stream_order):
        self.graph = graph
        self.queue = deque(stream_order)
        self.sent = set()
        self.result = None
        self.error = None
        self.fetches = 0
        self.pushes = 0
        self.stop = threading.Event()
        self.lock = threading.Lock()

    @property
    def done(self):
        return self.result is not None or self.error is not None


class ClientRuntime:

    def __init__(self, channel=None, cache_enabled=False, timeout_s=config.DEFAULT_TIMEOUT_S,
                 static_names=None, strategy='auto', profile=None):
        self.channel = channel
        self.tasks = {}
        self.cache = ClientCacheView(cache_enabled)
        self.timeout_s = timeout_s
        self.static_names = static_names
        self.strategy_override = strategy
        self.profile = profile
        self.code_hash = None
        self.code_bytes_up = 0
        self.last_registration_bytes = 0
        self._bundle = None
        self._offload = None
        self._replies = deque()
        self._replies_lock = threading.Lock()
        self._offline_clock = 0.0
        if channel is not None:
            channel.on_frame = self.on_frame

    # --- Registry ---

    def register_task(self, descriptor):
        if descriptor.task_id in self.tasks:
            raise Conflict(f"task {descriptor.task_id} already registered")
        self.tasks[descriptor.task_id] = descriptor
        log_debug(f"Registered task {descriptor.task_id} ({descriptor.name})")

    def _task(self, task_id):
        try:
            return self.tasks[task_id]
        except KeyError:
            raise IllegalState(f"task {task_id} is not registered") from None

    # --- Clock ---

    def now(self):
        return self.channel.now() if self.channel is not None else self._offline_clock

    def _charge_local(self, units):
        seconds = units / app_globals.local_speed
        if self.channel is None:
            self._offline_clock += seconds
        else:
            self.channel.charge(seconds)

    # --- Frames ---

    def on_frame(self, message):
        off = self._offload
        kind = message.kind
        if kind is MessageKind.OBJECT_FETCH:
            if off is None:
                log_debug(f"Ignoring fetch of {message.body.hex()}: no offload running")
                return
            self.channel.spawn(lambda: self._answer_fetch(off, message.body), 'fetch-reply')
        elif kind is MessageKind.RESULT and off is not None:
            off.result = message.body
            off.stop.set()
        elif kind is MessageKind.REMOTE_ERROR and off is not None:
            off.error = message.body
            off.stop.set()
        elif kind in _REPLY_KINDS or kind is MessageKind.REMOTE_ERROR:
            with self._replies_lock:
                self._replies.append(message)
        else:
            log_debug(f"Discarding stale {kind.name}")

    def _send(self, message):
        try:
            return self.channel.send(message)
        except OSError as e:
            raise RemoteFailure(f"send failed: {e}") from e

    def _await_reply(self, kinds):
        found = []

        def arrived():
            with self._replies_lock:
                for i, message in enumerate(self._replies):
                    if message.kind in kinds:
                        del self._replies[i]
                        found.append(message)
                        return True
            return False

        timeout = self.channel.effective_timeout(self.timeout_s)
        if not self.channel.wait_until(arrived, timeout):
            raise RemoteFailure(f"no {'/'.join(k.name for k in kinds)} within {timeout:.1f}s")
        return found[0]

    def _require_channel(self):
        if self.channel is None or self.channel.closed:
            raise RemoteFailure("not connected")

    def _mark_unreachable(self):
        if self.profile is None:
            self.profile = NetworkProfile(reachable=False, last_updated=self.now())
        else:
            self.profile.mark_unreachable(self.now())

    # --- Code registration ---

    def current_bundle(self):
        return build_bundle(self.tasks.values())

    def register_code(self, bundle=None):
        """CODE_CHECK, and CODE_UPLOAD when the server asks for it. False on failure."""
        self._require_channel()
        bundle = self.current_bundle() if bundle is None else bytes(bundle)
        code_hash = bundle_hash(bundle)
        before = self.channel.bytes_sent
        try:
            self._send(WireMessage(MessageKind.CODE_CHECK, code_hash))
            reply = self._await_reply({MessageKind.CODE_OK, MessageKind.CODE_NEED, MessageKind.REMOTE_ERROR})
            if reply.kind is MessageKind.CODE_NEED:
                log_debug(f"Server needs code {code_hash.hex()}, uploading {len(bundle)} bytes")
                self._send(WireMessage(MessageKind.CODE_UPLOAD, CodeUpload(code_hash, bundle)))
                reply = self._await_reply({MessageKind.CODE_OK, MessageKind.REMOTE_ERROR})
            if reply.kind is MessageKind.REMOTE_ERROR:
                raise RemoteError(reply.body.code, reply.body.message)
        except RemoteError as e:
            log_warning(f"Code registration rejected: {e}")
            self.code_hash = None
            return False
        except RemoteFailure as e:
            log_warning(f"Code registration failed: {e}")
            self.code_hash = None
            self._mark_unreachable()
            return False
        finally:
            self.last_registration_bytes = self.channel.bytes_sent - before
            self.code_bytes_up += self.last_registration_bytes
        self.code_hash = code_hash
        self._bundle = bundle
        return True

    def _ensure_code(self):
        if self.code_hash is not None and self._bundle == self.current_bundle():
            return
        if not self.register_code():
            raise RemoteFailure("code registration failed")

    # --- Profiling ---

    def profile_network(self):
        """Measure rtt and both bandwidths; the result is smoothed into self.profile."""
        self._require_channel()
        with self._replies_lock:
            self._replies.clear()
        try:
            rtts = []
            for _ in range(config.PING_COUNT):
                started = self.now()
                self._send(ping())
                self._await_reply({MessageKind.PONG})
                rtts.append(self.now() - started)
            started = self.now()
            self._send(probe(config.PROBE_BYTES))
            self._await_reply({MessageKind.PONG})
            up_elapsed = self.now() - started
            started = self.now()
            self._send(probe(0))
            self._await_reply({MessageKind.PROBE})
            down_elapsed = self.now() - started
            measured = profile_from_samples(rtts, up_elapsed, down_elapsed, now=self.now())
        except RemoteFailure as e:
            log_warning(f"Network profiling failed: {e}")
            measured = NetworkProfile(reachable=False, last_updated=self.now())
        prior = self.profile if self.profile is not None else NetworkProfile()
        self.profile = prior.smoothed(measured)
        log_debug(f"Profile: {self.profile}")
        return self.profile

    # --- Placement ---

    def _static_guids(self, graph):
        return graph.static_roots(self.static_names)

    def _roots(self, graph, target_root, param_roots):
        roots = [target_root, *param_roots, *self._static_guids(graph)]
        for root in roots:
            graph.node(root)
        return roots

    def _profile_due(self, override):
        """Whether an existing profile is old enough to measure again."""
        if self.profile is None or self.profile.age(self.now()) < config.PROFILE_INTERVAL_S:
            return False
        # Forced strategies only need the profile to learn the server is back.
        return override == 'auto' or not self.profile.reachable

    def place(self, task, graph, target_root, param_roots):
        if not task.remotable or self.channel is None or self.channel.closed:
            return Placement.local()
        override = (self.strategy_override or 'auto').lower()
        if override == 'local':
            return Placement.local()
        if self._profile_due(override):
            self.profile_network()
        if self.profile is not None and not self.profile.reachable:
            return Placement.local()
        if override != 'auto':
            return Placement.remote(TransmissionStrategy.parse(override))
        if self.profile is None:
            self.profile_network()
        roots = self._roots(graph, target_root, param_roots)
        cache = self.cache if self.cache.enabled else None
        state = encode_state(graph, roots, ProxyPolicy(TransmissionStrategy.EAGER, self.cache.enabled), cache)
        cached = set(state.cached)
        elidable = [g for g in state.closure if graph.node(g).proxyable and g not in cached]
        return decide(
            task, self.profile, len(state.data), sum(state.full_sizes[g] for g in elidable),
            n_proxies=len(elidable),
            expected_down=task.down_bytes(graph, target_root, param_roots),
            task_units=task.work_units(graph, target_root, param_roots),
        )

    # --- Execution ---

    def invoke(self, task_id, graph, target_root, param_roots=()):
        """Run a task wherever the decision engine says; remote failures fall back to local."""
        task = self._task(task_id)
        param_roots = list(param_roots)
        self._roots(graph, target_root, param_roots)
        placement = self.place(task, graph, target_root, param_roots)
        if placement.is_local:
            return self.run_local(task, graph, target_root, param_roots, placement)

        started = self.now()
        sent, received = self.channel.bytes_sent, self.channel.bytes_received
        failure = None
        for attempt in range(2):
            try:
                return self.offload(task, placement.strategy, graph, target_root, param_roots)
            except RemoteError as e:
                if e.code is RemoteErrorCode.CODE_UNKNOWN and attempt == 0:
                    log_debug("Server lost our code, registering again")
                    self.code_hash = None
                    continue
                failure = e
            except RemoteFailure as e:
                failure = e
            break
        log_warning(f"Offload of task {task_id} failed, running locally: {failure}")
        self._mark_unreachable()
        payload, metrics = self.run_local(task, graph, target_root, param_roots, Placement.local(fallback=True))
        metrics.wall_time = self.now() - started
        metrics.bytes_up = self.channel.bytes_sent - sent
        metrics.bytes_down = self.channel.bytes_received - received
        return payload, metrics

    def run_local(self, task, graph, target_root, param_roots, placement=None):
        started = self.now()
        ctx = TaskContext(graph, target_root, param_roots, self._static_guids(graph), charge=self._charge_local)
        payload = task.local_impl(ctx)
        metrics = TransferMetrics(wall_time=self.now() - started, placement=placement or Placement.local(),
                                  work_units=ctx.work_units)
        return bytes(payload or b''), metrics

    def _stream_order(self, task, graph, target_root, param_roots, state):
        pending = state.strategy_proxies
        remaining = set(pending)
        order = []
        for guid in task.access_order(graph, target_root, param_roots):
            if guid in remaining:
                order.append(guid)
                remaining.discard(guid)
        order.extend(g for g in pending if g in remaining)
        return order

    def offload(self, task, strategy, graph, target_root, param_roots):
        """One remote execution with the given strategy. Raises RemoteFailure on timeout or REMOTE_ERROR."""
        self._require_channel()
        strategy = TransmissionStrategy(strategy)
        self._ensure_code()
        statics = self._static_guids(graph)
        roots = [target_root, *param_roots, *statics]
        cache = self.cache if self.cache.enabled else None
        state = encode_state(graph, roots, ProxyPolicy(strategy, self.cache.enabled), cache)
        stream = []
        if strategy is TransmissionStrategy.PIPELINED:
            stream = self._stream_order(task, graph, target_root, param_roots, state)
        body = ExecuteBody(
            task_id=task.task_id,
            strategy=strategy,
            code_hash=self.code_hash,
            target_root=target_root,
            param_roots=list(param_roots),
            static_roots=statics,
            state=state.data,
            alternative_impl_id=task.alternative_impl_id,
            push_order=stream,
        )
        off = _Offload(graph, stream)
        started = self.now()
        sent, received = self.channel.bytes_sent, self.channel.bytes_received
        timeout = self.channel.effective_timeout(self.timeout_s)
        self._offload = off
        worker = None
        try:
            self._send(WireMessage(MessageKind.EXECUTE, body))
            if stream:
                worker = self.channel.stream(lambda: self._next_push(off), off.stop)
            arrived = self.channel.wait_until(lambda: off.done, timeout)
        finally:
            off.stop.set()
            self._offload = None
            if worker is not None:
                # No push of this offload may follow the next EXECUTE.
                worker.join(timeout)
        if not arrived:
            raise RemoteFailure(f"no result within {timeout:.1f}s")
        if off.error is not None:
            raise RemoteError(off.error.code, off.error.message)
        result = off.result
        if result.status is not ResultStatus.OK:
            raise RemoteFailure("server reported an error status")
        try:
            apply_result_state(graph, result.modified_state)
        except ProtocolError as e:
            raise RemoteFailure(f"unusable result state: {e}") from e
        if self.cache.enabled:
            self.cache.acknowledge(graph, result.held)
        metrics = TransferMetrics(
            bytes_up=self.channel.bytes_sent - sent,
            bytes_down=self.channel.bytes_received - received,
            wall_time=self.now() - started,
            placement=Placement.remote(strategy),
            fetch_round_trips=off.fetches,
            cache_hits=len(state.cached),
            pushes=off.pushes,
            exec_nanos=result.exec_nanos,
            alt_used=task.alternative_impl_id is not None,
        )
        log_debug(f"Offloaded task {task.task_id} ({strategy.label}): up={metrics.bytes_up} "
                  f"down={metrics.bytes_down} fetches={metrics.fetch_round_trips} wall={metrics.wall_time:.6f}s")
        return bytes(result.return_payload), metrics

    def _answer_fetch(self, off, guid):
        with off.lock:
            off.fetches += 1
            if off.done or guid in off.sent:
                # Already on the link as a push.
                return
            node = off.graph.nodes.get(guid)
            if node is None:
                log_warning(f"Server fetched unknown object {guid.hex()}")
                return
            off.sent.add(guid)
            data = encode_stream([node])
        try:
            self._send(push(guid, data))
        except RemoteFailure as e:
            log_warning(f"Fetch reply for {guid.hex()} failed: {e}")

    def _next_push(self, off):
        with off.lock:
            while off.queue:
                guid = off.queue.popleft()
                if guid in off.sent:
                    continue
                off.sent.add(guid)
                off.pushes += 1
                node = off.graph.node(guid)
                break
            else:
                return None
        # Serialized only now, once the previous push is on the link.
        return push(guid, encode_stream([node]))
