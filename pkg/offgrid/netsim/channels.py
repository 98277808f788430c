"""
Endpoint channels. A runtime (client or server) owns one channel; incoming
frames are handed to `channel.on_frame` and the runtime blocks with
`wait_until`. Three flavours share the interface:

  VirtualChannel    discrete-event link on a virtual clock (deterministic)
  RealClockChannel  in-process link that sleeps the emulated delays
  SocketChannel     TCP connection, real network
"""
import queue
import socket
import threading
import time

from offgrid import config
from offgrid.core.errors import ProtocolError
from offgrid.core.wire_protocol import FrameReader, decode, encode
from offgrid.netsim.link import Direction, Link
from offgrid.netsim.simulator import Simulator
from offgrid.utils.logger_setup import log_debug, log_warning

log_debug("netsim.channels module initialized.")


class Channel:
    virtual = False

    def __init__(self, name):
        self.name = name
        self.on_frame = None
        self.bytes_sent = 0
        self.bytes_received = 0
        self.frames_sent = 0
        self.frames_received = 0
        self.bytes_dropped = 0
        self.frames_dropped = 0
        self.last_frame_size = 0
        self.closed = False
        self._last_tx = 0.0
        self._last_rx = 0.0

    def now(self):
        raise NotImplementedError

    def send(self, message):
        """Hand one frame to the link; returns the time its transmission completed."""
        raise NotImplementedError

    def charge(self, seconds):
        """Account `seconds` of local compute. Only the virtual clock needs this."""

    def catch_up(self):
        """Deliver every frame due by this endpoint's clock. Threaded channels deliver on their own."""

    def wait_until(self, predicate, timeout):
        raise NotImplementedError

    def spawn(self, fn, name):
        raise NotImplementedError

    def stream(self, produce, stop_event, name='push-stream'):
        """Send produce()'s frames one at a time until it returns None or stop_event is set."""
        raise NotImplementedError

    def effective_timeout(self, timeout_s):
        return timeout_s

    def close(self):
        self.closed = True

    def _dispatch(self, frame):
        self.bytes_received += len(frame)
        self.last_frame_size = len(frame)
        self.frames_received += 1
        self._last_rx = self.now()
        try:
            message = decode(frame)
        except ProtocolError as e:
            log_warning(f"{self.name}: dropping undecodable frame: {e}")
            return
        handler = self.on_frame
        if handler is None:
            log_debug(f"{self.name}: no handler for {message!r}")
            return
        handler(message)

    def _dropped(self, frame):
        # Only frames the link accepted count as sent.
        self.bytes_dropped += len(frame)
        self.frames_dropped += 1

    def _idle_anchor(self, wait_started):
        return max(self._last_tx, self._last_rx, wait_started)


# --- Virtual clock ---

class VirtualChannel(Channel):
    virtual = True

    def __init__(self, sim, link, direction, name):
        super().__init__(name)
        self.sim = sim
        self.link = link
        self.direction = direction
        self.peer = None
        self._clock = 0.0

    def now(self):
        return max(self._clock, self.sim.now)

    def charge(self, seconds):
        self._clock = self.now() + seconds

    def effective_timeout(self, timeout_s):
        return timeout_s + config.VIRTUAL_TIMEOUT_RTT_FACTOR * self.link.config.rtt

    def send(self, message):
        frame = encode(message)
        t = self.now()
        delivery = self.link.deliver(self.direction, frame, t)
        if delivery is None:
            self._dropped(frame)
            return t
        self.bytes_sent += len(frame)
        self.frames_sent += 1
        tx_done = self.link.free_time(self.direction)
        self._last_tx = max(self._last_tx, tx_done)
        peer = self.peer
        self.sim.schedule(delivery, lambda: peer._arrive(frame))
        return tx_done

    def _arrive(self, frame):
        self.link.mark_delivered(self.direction, len(frame))
        self._dispatch(frame)

    def catch_up(self):
        """Process every event due by this endpoint's local clock."""
        self.sim.run_until(lambda: False, deadline=self.now())

    def wait_until(self, predicate, timeout):
        self.catch_up()
        started = self.now()
        while not predicate():
            deadline = self._idle_anchor(started) + timeout
            if not self.sim.run_one(deadline):
                self.sim.advance_to(deadline)
                return predicate()
        return True

    def spawn(self, fn, name):
        fn()

    def stream(self, produce, stop_event, name='push-stream'):
        def _next():
            if stop_event.is_set():
                return
            message = produce()
            if message is None:
                return
            tx_done = self.send(message)
            self.sim.schedule(tx_done, _next)
        _next()


class VirtualNetwork:
    """A client/server channel pair over one Link on one Simulator."""

    def __init__(self, link_config, sim=None):
        self.sim = sim or Simulator()
        self.link = Link(link_config)
        self.client = VirtualChannel(self.sim, self.link, Direction.UP, 'client')
        self.server = VirtualChannel(self.sim, self.link, Direction.DOWN, 'server')
        self.client.peer = self.server
        self.server.peer = self.client

    def close(self):
        self.client.close()
        self.server.close()


# --- Threaded channels (real clock) ---

class _ThreadedChannel(Channel):

    def __init__(self, name):
        super().__init__(name)
        self._cond = threading.Condition()
        self._send_lock = threading.Lock()

    def now(self):
        return time.monotonic()

    def _dispatch(self, frame):
        super()._dispatch(frame)
        with self._cond:
            self._cond.notify_all()

    def wait_until(self, predicate, timeout):
        started = self.now()
        with self._cond:
            while not predicate():
                if self.closed:
                    return predicate()
                remaining = self._idle_anchor(started) + timeout - self.now()
                if remaining <= 0:
                    return False
                self._cond.wait(min(remaining, 0.25))
            return True

    def spawn(self, fn, name):
        worker = threading.Thread(target=fn, name=name, daemon=True)
        worker.start()
        return worker

    def stream(self, produce, stop_event, name='push-stream'):
        def _loop():
            try:
                while not stop_event.is_set() and not self.closed:
                    message = produce()
                    if message is None:
                        break
                    self.send(message)
            except Exception as e:
                log_warning(f"{self.name}: push stream stopped: {e}", exc_info=True)
        return self.spawn(_loop, name)

    def close(self):
        super().close()
        with self._cond:
            self._cond.notify_all()


class _DeliveryWorker(threading.Thread):
    """Delivers one direction's frames in FIFO order at their emulated arrival times."""

    def __init__(self, name):
        super().__init__(name=name, daemon=True)
        self.queue = queue.Queue()

    def run(self):
        while True:
            item = self.queue.get()
            if item is None:
                break
            at, frame, target = item
            delay = at - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            try:
                target._arrive(frame)
            except Exception as e:
                log_warning(f"{self.name}: frame handler failed: {e}", exc_info=True)


class RealClockChannel(_ThreadedChannel):

    def __init__(self, link, direction, worker, name):
        super().__init__(name)
        self.link = link
        self.direction = direction
        self.worker = worker
        self.peer = None

    def effective_timeout(self, timeout_s):
        return timeout_s + config.VIRTUAL_TIMEOUT_RTT_FACTOR * self.link.config.rtt

    def send(self, message):
        frame = encode(message)
        with self._send_lock:
            t = self.now()
            delivery = self.link.deliver(self.direction, frame, t)
            if delivery is None:
                self._dropped(frame)
                return t
            self.bytes_sent += len(frame)
            self.frames_sent += 1
            tx_done = self.link.free_time(self.direction)
            self.worker.queue.put((delivery, frame, self.peer))
            # The sender is busy until the frame is serialized onto the link.
            delay = tx_done - self.now()
            if delay > 0:
                time.sleep(delay)
            self._last_tx = max(self._last_tx, tx_done)
            return tx_done

    def _arrive(self, frame):
        self.link.mark_delivered(self.direction, len(frame))
        self._dispatch(frame)


class RealClockNetwork:
    """In-process client/server pair whose link sleeps the emulated delays.

    Link times are time.monotonic() values, so a blackhole_at is given
    relative to network creation.
    """

    def __init__(self, link_config):
        if link_config.blackhole_at is not None:
            link_config = link_config.replace(blackhole_at=time.monotonic() + link_config.blackhole_at)
        self.link = Link(link_config)
        self._up = _DeliveryWorker('link-up')
        self._down = _DeliveryWorker('link-down')
        self.client = RealClockChannel(self.link, Direction.UP, self._up, 'client')
        self.server = RealClockChannel(self.link, Direction.DOWN, self._down, 'server')
        self.client.peer = self.server
        self.server.peer = self.client
        self._up.start()
        self._down.start()

    def close(self):
        self._up.queue.put(None)
        self._down.queue.put(None)
        self.client.close()
        self.server.close()


class SocketChannel(_ThreadedChannel):
    """One TCP connection; a reader thread dispatches incoming frames."""

    def __init__(self, sock, name):
        super().__init__(name)
        self.sock = sock
        self._reader = threading.Thread(target=self._read_loop, name=f"{name}-reader", daemon=True)

    def start(self):
        self._reader.start()
        return self

    def _read_loop(self):
        reader = FrameReader(self.sock.makefile('rb'))
        try:
            while not self.closed:
                item = reader.read_frame()
                if item is None:
                    log_debug(f"{self.name}: peer closed the connection")
                    break
                message, size = item
                self.bytes_received += size
                self.last_frame_size = size
                self.frames_received += 1
                self._last_rx = self.now()
                if self.on_frame is not None:
                    self.on_frame(message)
                with self._cond:
                    self._cond.notify_all()
        except (OSError, ProtocolError) as e:
            if not self.closed:
                log_warning(f"{self.name}: connection failed: {e}")
        finally:
            self.close()

    def send(self, message):
        frame = encode(message)
        with self._send_lock:
            self.sock.sendall(frame)
            self.bytes_sent += len(frame)
            self.frames_sent += 1
            self._last_tx = self.now()
            return self._last_tx

    def close(self):
        if self.closed:
            return
        super().close()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def connect(host, port, timeout_s=config.DEFAULT_TIMEOUT_S):
    sock = socket.create_connection((host, port), timeout=timeout_s)
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    log_debug(f"connected to {host}:{port}")
    return SocketChannel(sock, 'client').start()
