"""
Server side of the middleware: code registry, object cache, execution
sessions with proxy faulting and pipelined push ingestion.
"""
import os
import socket
import threading
from collections import Counter

from offgrid import config
from offgrid.core import globals as app_globals
from offgrid.core.errors import Conflict, ProtocolError, RemoteError, IllegalState
from offgrid.core.object_model import (TransmissionStrategy, content_hash, decode_stream, deserialize_graph,
                                       encode_stream, hydrate_proxy)
from offgrid.core.wire_protocol import (MessageKind, RemoteErrorCode, ResultBody, ResultStatus, WireMessage,
                                        fetch, pong, probe, remote_error)
from offgrid.netsim.channels import SocketChannel
from offgrid.runtime.tasks import TaskContext, bundle_hash, parse_bundle
from offgrid.utils.logger_setup import log_debug, log_warning

log_debug("runtime.server module initialized.")

CACHE_FILE = 'server_cache.cog'


class CodeRegistry:
    """hash -> bundle. Persisted as <hex>.bundle files when a directory is given."""

    def __init__(self, directory=None):
        self.directory = directory
        self._bundles = {}
        self._lock = threading.Lock()
        if directory:
            os.makedirs(directory, exist_ok=True)
            log_debug(f"Code registry at {directory}")

    def _path(self, code_hash):
        return os.path.join(self.directory, code_hash.hex() + '.bundle')

    def __contains__(self, code_hash):
        return self.get(code_hash) is not None

    def get(self, code_hash):
        with self._lock:
            bundle = self._bundles.get(code_hash)
            if bundle is None and self.directory:
                try:
                    with open(self._path(code_hash), 'rb') as f:
                        bundle = f.read()
                except FileNotFoundError:
                    return None
                if bundle_hash(bundle) != code_hash:
                    log_warning(f"Ignoring corrupted registry file {self._path(code_hash)}")
                    return None
                self._bundles[code_hash] = bundle
            return bundle

    def put(self, code_hash, bundle):
        if bundle_hash(bundle) != code_hash:
            raise ProtocolError(f"code bundle does not hash to {code_hash.hex()}")
        with self._lock:
            if code_hash in self._bundles:
                return False
            self._bundles[code_hash] = bytes(bundle)
            if self.directory:
                with open(self._path(code_hash), 'wb') as f:
                    f.write(bundle)
        log_debug(f"Registered code bundle {code_hash.hex()} ({len(bundle)} bytes)")
        return True


class ServerCache:
    """Guid -> (digest, canonical node bytes) for every proxyable node the server held in full."""

    def __init__(self):
        self.entries = {}
        self._lock = threading.Lock()

    def __contains__(self, guid):
        return guid in self.entries

    def __len__(self):
        return len(self.entries)

    def put(self, node):
        # Stored as a one-node stream, the same form hydrate_proxy consumes.
        data = encode_stream([node])
        with self._lock:
            self.entries[node.guid] = (content_hash(node), data)

    def get(self, guid):
        with self._lock:
            entry = self.entries.get(guid)
        return None if entry is None else entry[1]

    def digest(self, guid):
        entry = self.entries.get(guid)
        return None if entry is None else entry[0]

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        with self._lock:
            nodes = [decode_stream(data)[0] for _, data in self.entries.values()]
        path = os.path.join(directory, CACHE_FILE)
        with open(path, 'wb') as f:
            f.write(encode_stream(nodes))
        log_debug(f"Saved {len(nodes)} cache entries to {path}")

    def load(self, directory):
        path = os.path.join(directory, CACHE_FILE)
        try:
            with open(path, 'rb') as f:
                data = f.read()
        except FileNotFoundError:
            return 0
        try:
            nodes = decode_stream(data)
        except ProtocolError as e:
            log_warning(f"Discarding unreadable server cache {path}: {e}")
            return 0
        for node in nodes:
            self.put(node)
        log_debug(f"Loaded {len(nodes)} cache entries from {path}")
        return len(nodes)


class _SessionAborted(Exception):
    pass


class _FetchTimeout(Exception):
    pass


class ExecutionSession:
    """State of one EXECUTE while its task runs."""

    def __init__(self, body, graph):
        self.task_id = body.task_id
        self.strategy = body.strategy
        self.graph = graph
        self.push_order = list(body.push_order)
        self.pre_hashes = {}
        self.pending_faults = {}
        self.outstanding_fetches = set()
        self.hydrations = Counter()
        self.duplicates = 0
        self.fetches = 0
        self.cache_hits = 0
        self.cache_misses = 0
        self.done = False
        self.aborted = None
        self.lock = threading.RLock()

    def snapshot(self, guid):
        self.pre_hashes[guid] = content_hash(self.graph.node(guid))

    def stream_head(self):
        """First Guid of the push stream the server has not received yet."""
        for guid in self.push_order:
            node = self.graph.nodes.get(guid)
            if node is not None and node.is_proxy:
                return guid
        return None

    def should_fetch(self, guid):
        if guid in self.outstanding_fetches:
            return False
        if self.strategy is TransmissionStrategy.PIPELINED and guid == self.stream_head():
            return False
        return True

    def hydrated(self, guid):
        with self.lock:
            return self.aborted is not None or not self.graph.node(guid).is_proxy

    def abort(self, reason):
        with self.lock:
            if self.aborted is None:
                self.aborted = reason
                log_warning(f"Session for task {self.task_id} aborted: {reason}")


class ServerRuntime:
    """One connection's server endpoint."""

    def __init__(self, channel, registry=None, cache=None, timeout_s=config.DEFAULT_TIMEOUT_S, impls=None):
        self.channel = channel
        self.registry = registry if registry is not None else CodeRegistry()
        self.cache = cache if cache is not None else ServerCache()
        self.timeout_s = timeout_s
        self.impls = dict(impls or {})
        self.session = None
        self.last_session = None
        self.stats = Counter()
        self._exec_lock = threading.Lock()
        self._handlers = {
            MessageKind.CODE_CHECK: self._on_code,
            MessageKind.CODE_UPLOAD: self._on_code,
            MessageKind.EXECUTE: self._on_execute,
            MessageKind.OBJECT_PUSH: self._on_push,
            MessageKind.PING: self._on_ping,
            MessageKind.PROBE: self._on_probe,
        }
        channel.on_frame = self.on_frame

    def register_impl(self, task_id, name, fn):
        if task_id in self.impls:
            raise Conflict(f"server implementation {task_id} already registered")
        self.impls[task_id] = (name, fn)

    def on_frame(self, message):
        handler = self._handlers.get(message.kind)
        if handler is None:
            log_warning(f"Server ignoring unexpected {message.kind.name}")
            return
        handler(message)

    def _send(self, message):
        try:
            self.channel.send(message)
        except OSError as e:
            log_warning(f"Server send of {message.kind.name} failed: {e}")

    # --- Probes ---

    def _on_ping(self, message):
        self._send(pong())

    def _on_probe(self, message):
        # A loaded probe measures the uplink; an empty one asks for a loaded one back.
        if message.body:
            self._send(pong())
        else:
            self._send(probe(config.PROBE_BYTES))

    # --- Code registration ---

    def handle_code(self, message):
        if message.kind is MessageKind.CODE_CHECK:
            code_hash = message.body
            if code_hash in self.registry:
                self.stats['code_ok'] += 1
                return WireMessage(MessageKind.CODE_OK, code_hash)
            self.stats['code_need'] += 1
            return WireMessage(MessageKind.CODE_NEED, code_hash)
        upload = message.body
        try:
            self.registry.put(upload.code_hash, upload.bundle)
        except ProtocolError as e:
            self.stats['code_rejected'] += 1
            return remote_error(RemoteErrorCode.HASH_MISMATCH, str(e))
        return WireMessage(MessageKind.CODE_OK, upload.code_hash)

    def _on_code(self, message):
        self._send(self.handle_code(message))

    # --- Execution ---

    def _on_execute(self, message):
        body = message.body
        baseline = self.channel.bytes_received - self.channel.last_frame_size
        # The session is opened on the ingest thread: pushes queued right
        # behind the EXECUTE frame must find it.
        try:
            impl, session = self.begin_execute(body)
        except RemoteError as e:
            self._send(remote_error(e.code, e.remote_message))
            return
        self.channel.spawn(lambda: self._run_execute(body, impl, session, baseline), 'executor')

    def _run_execute(self, body, impl, session, baseline):
        with self._exec_lock:
            try:
                result = self.handle_execute(body, impl, session)
                result.bytes_received = self.channel.bytes_received - baseline
                reply = WireMessage(MessageKind.RESULT, result)
            except RemoteError as e:
                reply = remote_error(e.code, e.remote_message)
            except Exception as e:
                log_warning(f"Execution of task {body.task_id} failed: {e}", exc_info=True)
                reply = remote_error(RemoteErrorCode.TASK_FAILED, f"{type(e).__name__}: {e}")
            self._send(reply)

    def _resolve_impl(self, body):
        bundle = self.registry.get(body.code_hash)
        if bundle is None:
            raise RemoteError(RemoteErrorCode.CODE_UNKNOWN, f"code {body.code_hash.hex()} is not registered")
        manifest = parse_bundle(bundle)
        impl_id = body.task_id if body.alternative_impl_id is None else body.alternative_impl_id
        for wanted in {body.task_id, impl_id}:
            if wanted not in manifest or wanted not in self.impls:
                raise RemoteError(RemoteErrorCode.TASK_UNKNOWN, f"task {wanted} is not in the registered code")
        return self.impls[impl_id][1]

    def _open_session(self, body):
        try:
            graph = deserialize_graph(body.state)
        except ProtocolError as e:
            raise RemoteError(RemoteErrorCode.PROTOCOL, f"bad state: {e}") from None
        for root in [body.target_root, *body.param_roots, *body.static_roots]:
            if root not in graph:
                raise RemoteError(RemoteErrorCode.PROTOCOL, f"root {root.hex()} missing from state")
        session = ExecutionSession(body, graph)
        for node in list(graph):
            if node.is_in_cache:
                data = self.cache.get(node.guid)
                if data is None:
                    # Unknown here: fetch it on first touch like any other proxy.
                    node.is_in_cache = False
                    session.cache_misses += 1
                    continue
                hydrate_proxy(graph, node.guid, data)
                session.cache_hits += 1
                session.snapshot(node.guid)
            elif not node.is_proxy:
                session.snapshot(node.guid)
        return session

    def begin_execute(self, body):
        """Resolve the implementation and publish the session that incoming pushes hydrate."""
        impl = self._resolve_impl(body)
        session = self._open_session(body)
        with session.lock:
            self.session = session
        return impl, session

    def handle_execute(self, body, impl=None, session=None):
        """Run one EXECUTE to completion; RemoteError for every failure the client must see."""
        if session is None:
            impl, session = self.begin_execute(body)
        log_debug(f"Executing task {body.task_id} ({body.strategy.label}, "
                  f"{len(session.graph)} nodes, {session.cache_hits} from cache)")
        ctx = TaskContext(session.graph, body.target_root, body.param_roots, body.static_roots,
                          charge=self._charge, fault=lambda guid: self.proxy_fault(session, guid))
        started = self.channel.now()
        try:
            payload = impl(ctx)
        except _FetchTimeout as e:
            raise RemoteError(RemoteErrorCode.FETCH_TIMEOUT, f"no reply for object {e}") from None
        except _SessionAborted:
            raise RemoteError(RemoteErrorCode.PROTOCOL, session.aborted) from None
        except RemoteError:
            raise
        except Exception as e:
            log_warning(f"Task {body.task_id} raised: {e}", exc_info=True)
            raise RemoteError(RemoteErrorCode.TASK_FAILED, f"{type(e).__name__}: {e}") from None
        finally:
            with session.lock:
                session.done = True
                if self.session is session:
                    self.session = None
                self.last_session = session
        exec_nanos = int(round((self.channel.now() - started) * 1e9))

        graph = session.graph
        modified = [node for node in graph
                    if not node.is_proxy and session.pre_hashes.get(node.guid) != content_hash(node)]
        held = [node.guid for node in graph if node.proxyable and not node.is_proxy]
        for guid in held:
            self.cache.put(graph.node(guid))
        self.stats['executions'] += 1
        self.stats['fetches'] += session.fetches
        return ResultBody(
            status=ResultStatus.OK,
            return_payload=bytes(payload or b''),
            modified_state=encode_stream(modified),
            exec_nanos=exec_nanos,
            held=held,
        )

    def _charge(self, units):
        self.channel.charge(units / app_globals.server_speed)

    def proxy_fault(self, session, guid):
        """Block the running task until proxy `guid` is hydrated; returns the node."""
        node = session.graph.node(guid)
        self.channel.catch_up()
        with session.lock:
            if session.aborted is not None:
                raise _SessionAborted()
            if not node.is_proxy:
                return node
            send_fetch = session.should_fetch(guid)
            if send_fetch:
                session.outstanding_fetches.add(guid)
                session.fetches += 1
            session.pending_faults[guid] = session.pending_faults.get(guid, 0) + 1
        if send_fetch:
            log_debug(f"Fault on {guid.hex()}: fetching")
            self._send(fetch(guid))
        else:
            log_debug(f"Fault on {guid.hex()}: waiting for push in flight")
        arrived = self.channel.wait_until(lambda: session.hydrated(guid),
                                          self.channel.effective_timeout(self.timeout_s))
        with session.lock:
            session.pending_faults.pop(guid, None)
            if session.aborted is not None:
                raise _SessionAborted()
            if not arrived or node.is_proxy:
                raise _FetchTimeout(guid.hex())
        return node

    def handle_object_push(self, session, guid, node_bytes):
        if session is None or session.done:
            self.stats['late_pushes'] += 1
            log_debug(f"Discarding push of {guid.hex()}: no session running")
            return
        with session.lock:
            node = session.graph.nodes.get(guid)
            if node is None:
                session.abort(f"push for unknown object {guid.hex()}")
                return
            session.outstanding_fetches.discard(guid)
            if not node.is_proxy:
                session.duplicates += 1
                self.stats['duplicate_pushes'] += 1
                return
            known = set(session.graph.nodes)
            try:
                hydrate_proxy(session.graph, guid, node_bytes)
            except (ProtocolError, IllegalState) as e:
                session.abort(f"bad push for {guid.hex()}: {e}")
                return
            session.hydrations[guid] += 1
            session.snapshot(guid)
            for extra in session.graph.nodes.keys() - known:
                session.snapshot(extra)

    def _on_push(self, message):
        self.handle_object_push(self.session, message.body.guid, message.body.node_bytes)


class TcpServer:
    """Accept loop: one SocketChannel and ServerRuntime per connection.

    Registry and cache are shared by all connections and survive restarts
    when a registry directory is set.
    """

    def __init__(self, host=config.DEFAULT_SERVER_IP, port=config.DEFAULT_PORT, registry_dir=None,
                 setup=None, timeout_s=config.DEFAULT_TIMEOUT_S):
        self.host = host
        self.port = port
        self.registry_dir = registry_dir
        self.registry = CodeRegistry(registry_dir)
        self.cache = ServerCache()
        if registry_dir:
            self.cache.load(registry_dir)
        self.setup = setup
        self.timeout_s = timeout_s
        self.connections = []
        self.stop_event = threading.Event()
        self._socket = None
        self._thread = None

    def bind(self):
        self._socket = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._socket.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._socket.bind((self.host, self.port))
        self._socket.listen(5)
        self._socket.settimeout(0.5)
        self.port = self._socket.getsockname()[1]
        return self.port

    def serve_forever(self):
        if self._socket is None:
            self.bind()
        print(f"Listening on {self.host}:{self.port}...")
        try:
            while not self.stop_event.is_set():
                try:
                    client, addr = self._socket.accept()
                except socket.timeout:
                    continue
                except OSError:
                    break
                print(f"Accepted connection from {addr[0]}:{addr[1]}")
                client.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                channel = SocketChannel(client, f"server-{addr[1]}")
                runtime = ServerRuntime(channel, self.registry, self.cache, self.timeout_s)
                if self.setup is not None:
                    self.setup(runtime)
                self.connections.append(runtime)
                channel.start()
        finally:
            self._socket.close()
            for runtime in self.connections:
                runtime.channel.close()
            if self.registry_dir:
                self.cache.save(self.registry_dir)

    def start(self):
        self.bind()
        self._thread = threading.Thread(target=self.serve_forever, name='tcp-server', daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.stop_event.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
