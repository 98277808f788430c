"""
Point-to-point link model: propagation delay of rtt/2, per-direction FIFO
serialization at the direction's bandwidth, optional blackhole.
"""
from __future__ import annotations

import dataclasses
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from offgrid import config
from offgrid.core.errors import ConfigError
from offgrid.utils.logger_setup import log_debug

log_debug("netsim.link module initialized.")


class Direction(Enum):
    UP = 'up'       # client -> server
    DOWN = 'down'   # server -> client


@dataclass
class LinkConfig:
    rtt: float
    up_bandwidth: float
    down_bandwidth: float
    blackhole_after: Optional[int] = None   # bytes entering the link, both directions
    blackhole_at: Optional[float] = None    # link time in seconds
    name: str = 'custom'

    def __post_init__(self):
        if self.rtt < 0:
            raise ConfigError(f"link rtt must be >= 0, got {self.rtt}")
        if self.up_bandwidth <= 0 or self.down_bandwidth <= 0:
            raise ConfigError(f"link bandwidths must be > 0, got up={self.up_bandwidth} down={self.down_bandwidth}")
        if self.blackhole_after is not None and self.blackhole_after < 0:
            raise ConfigError("blackhole_after must be >= 0")

    def bandwidth(self, direction):
        return self.up_bandwidth if direction is Direction.UP else self.down_bandwidth

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def presets():
    """Fresh LinkConfigs for every named preset."""
    return {name: LinkConfig(name=name, **values) for name, values in config.LINK_PRESETS.items()}


def parse_network(text, blackhole_after=None):
    """`wifi`, `3g`, `loopback` or `custom:<rtt_ms>,<up_Bps>,<down_Bps>`."""
    text = (text or '').strip()
    available = presets()
    if text.lower() in available:
        link = available[text.lower()]
    elif text.lower().startswith('custom:'):
        fields = text.split(':', 1)[1].split(',')
        if len(fields) != 3:
            raise ConfigError(f"custom network needs <rtt_ms>,<up_Bps>,<down_Bps>, got '{text}'")
        try:
            rtt_ms, up, down = (float(f) for f in fields)
        except ValueError:
            raise ConfigError(f"custom network fields must be numbers, got '{text}'") from None
        link = LinkConfig(rtt=rtt_ms / 1000.0, up_bandwidth=up, down_bandwidth=down, name=text)
    else:
        raise ConfigError(f"unknown network '{text}' (expected {', '.join(available)} or custom:...)")
    if blackhole_after is not None:
        link = link.replace(blackhole_after=int(blackhole_after))
    return link


class Link:
    """FIFO per direction; both directions independent. Thread-safe."""

    def __init__(self, link_config):
        self.config = link_config
        self._free = {Direction.UP: 0.0, Direction.DOWN: 0.0}
        self.bytes_in = {Direction.UP: 0, Direction.DOWN: 0}
        self.bytes_out = {Direction.UP: 0, Direction.DOWN: 0}
        self.frames_dropped = 0
        self.bytes_dropped = 0
        self._dead = False
        self._lock = threading.Lock()

    @property
    def total_in(self):
        return self.bytes_in[Direction.UP] + self.bytes_in[Direction.DOWN]

    @property
    def blackholed(self):
        return self._dead

    def _drops(self, size, enqueue_time):
        if self._dead:
            return True
        cfg = self.config
        if cfg.blackhole_after is not None and self.total_in + size > cfg.blackhole_after:
            self._dead = True
        elif cfg.blackhole_at is not None and enqueue_time >= cfg.blackhole_at:
            self._dead = True
        return self._dead

    def deliver(self, direction, frame, enqueue_time):
        """Delivery time of `frame` (bytes or a size), or None when the link drops it."""
        size = frame if isinstance(frame, int) else len(frame)
        with self._lock:
            if self._drops(size, enqueue_time):
                self.frames_dropped += 1
                self.bytes_dropped += size
                log_debug(f"link {self.config.name}: dropped {size}-byte frame ({direction.value}) at t={enqueue_time:.6f}")
                return None
            start = max(enqueue_time, self._free[direction])
            finished = start + size / self.config.bandwidth(direction)
            self._free[direction] = finished
            self.bytes_in[direction] += size
            return finished + self.config.rtt / 2.0

    def restore(self):
        """End a blackhole; frames entering from now on are delivered again."""
        with self._lock:
            self._dead = False
            self.config = self.config.replace(blackhole_after=None, blackhole_at=None)

    def free_time(self, direction):
        """Time at which the last accepted frame in `direction` has been fully serialized."""
        with self._lock:
            return self._free[direction]

    def mark_delivered(self, direction, size):
        with self._lock:
            self.bytes_out[direction] += size

    def in_flight(self, direction):
        with self._lock:
            return self.bytes_in[direction] - self.bytes_out[direction]


def deliver(link, direction, frame, enqueue_time):
    return link.deliver(direction, frame, enqueue_time)
