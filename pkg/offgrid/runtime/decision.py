"""
Decision engine: chooses Local or Remote(strategy) from the profiled link,
the task's compute hint and the size of its state.
"""
from __future__ import annotations

import hashlib
import statistics
import sys
import time
from dataclasses import dataclass, replace
from typing import Optional

from offgrid import config
from offgrid.core import globals as app_globals
from offgrid.core.object_model import TransmissionStrategy
from offgrid.utils.logger_setup import log_debug

log_debug("runtime.decision module initialized.")

# Checked in this order; the first strict minimum wins an exact tie.
_REMOTE_PREFERENCE = (TransmissionStrategy.EAGER, TransmissionStrategy.PIPELINED, TransmissionStrategy.LAZY)


@dataclass
class NetworkProfile:
    rtt: float = 0.0
    uplink: float = 0.0
    downlink: float = 0.0
    last_updated: float = 0.0
    reachable: bool = False

    def mark_unreachable(self, now=None):
        self.reachable = False
        if now is not None:
            self.last_updated = now
        return self

    def age(self, now):
        return now - self.last_updated

    def smoothed(self, measured, alpha=config.PROFILE_EWMA_ALPHA):
        """EWMA of `measured` over this profile; a prior that was never reachable is replaced."""
        if not measured.reachable:
            return replace(self, reachable=False, last_updated=measured.last_updated)
        if not self.reachable or self.uplink <= 0 or self.downlink <= 0:
            return measured
        mix = lambda new, old: alpha * new + (1.0 - alpha) * old
        return NetworkProfile(
            rtt=mix(measured.rtt, self.rtt),
            uplink=mix(measured.uplink, self.uplink),
            downlink=mix(measured.downlink, self.downlink),
            last_updated=measured.last_updated,
            reachable=True,
        )


@dataclass(frozen=True)
class Placement:
    strategy: Optional[TransmissionStrategy] = None
    fallback: bool = False

    @classmethod
    def local(cls, fallback=False):
        return cls(None, fallback)

    @classmethod
    def remote(cls, strategy):
        return cls(TransmissionStrategy(strategy))

    @property
    def is_local(self):
        return self.strategy is None

    @property
    def label(self):
        if self.is_local:
            return 'local(fallback)' if self.fallback else 'local'
        return self.strategy.label


def estimate_times(task_units, profile, state_size, elidable_size, n_proxies=0,
                   expected_down=0.0, local_speed=None, server_speed=None):
    """Estimated seconds for Local and each remote strategy (keys: None and TransmissionStrategy)."""
    local_speed = local_speed or app_globals.local_speed
    server_speed = server_speed or app_globals.server_speed
    compute_remote = task_units / server_speed
    down = expected_down / profile.downlink
    up = profile.uplink
    head = state_size - elidable_size + config.PROXY_OVERHEAD * n_proxies
    return {
        None: task_units / local_speed,
        TransmissionStrategy.EAGER: profile.rtt + state_size / up + compute_remote + down,
        TransmissionStrategy.LAZY: profile.rtt + head / up + compute_remote + down,
        TransmissionStrategy.PIPELINED: profile.rtt + head / up + max(elidable_size / up, compute_remote) + down,
    }


def _constant(hint):
    # Graph-dependent hints need the graph; without one they count as zero.
    return 0.0 if callable(hint) else float(hint)


def decide(task, profile, state_size, elidable_size, n_proxies=0, expected_down=None,
           task_units=None, local_speed=None, server_speed=None):
    """Placement for one invocation of `task`.

    `task_units` and `expected_down` default to the descriptor's constant
    hints; the client passes values resolved against the actual graph.
    """
    if profile is None or not profile.reachable or not task.remotable:
        return Placement.local()
    if profile.uplink <= 0 or profile.downlink <= 0:
        return Placement.local()
    units = task_units if task_units is not None else _constant(task.compute_hint)
    down = expected_down if expected_down is not None else _constant(task.expected_down)
    times = estimate_times(units, profile, state_size, elidable_size, n_proxies, down,
                           local_speed, server_speed)
    best = None
    for strategy in _REMOTE_PREFERENCE:
        if best is None or times[strategy] < times[best]:
            best = strategy
    log_debug(f"decide task {task.task_id}: local={times[None]:.6f}s "
              + ' '.join(f"{s.label}={times[s]:.6f}s" for s in _REMOTE_PREFERENCE))
    if times[best] < times[None]:
        return Placement.remote(best)
    return Placement.local()


def profile_from_samples(rtts, up_elapsed, down_elapsed, probe_bytes=config.PROBE_BYTES, now=0.0):
    """Turn raw probe timings into a NetworkProfile.

    Each probe's elapsed time includes one round trip; what is left is the
    probe's serialization time.
    """
    rtt = statistics.median(rtts)
    floor = 1e-9
    return NetworkProfile(
        rtt=rtt,
        uplink=probe_bytes / max(up_elapsed - rtt, floor),
        downlink=probe_bytes / max(down_elapsed - rtt, floor),
        last_updated=now,
        reachable=True,
    )


def calibration_work(units=config.CALIBRATION_UNITS):
    """The fixed calibration loop: MD5 over `units` zero bytes in 64 KiB chunks."""
    chunk = bytes(64 * 1024)
    digest = hashlib.md5()
    remaining = units
    while remaining > 0:
        step = min(remaining, len(chunk))
        digest.update(chunk[:step])
        remaining -= step
    return digest.digest()


def calibrate(client, graph, target_root, task_id=0, units=config.CALIBRATION_UNITS):
    """Measure LOCAL_SPEED and SERVER_SPEED once and store them in core.globals.

    Local speed times the calibration loop on this machine; server speed
    comes from the exec time the server reports for the same task run
    remotely. On a virtual clock the configured speeds are already exact
    and are left alone.
    """
    with app_globals.calibration_lock:
        if app_globals.speeds_calibrated:
            return app_globals.local_speed, app_globals.server_speed
    if client.channel is not None and client.channel.virtual:
        return app_globals.local_speed, app_globals.server_speed

    started = time.perf_counter()
    calibration_work(units)
    local_speed = units / max(time.perf_counter() - started, 1e-9)

    server_speed = app_globals.server_speed
    try:
        _, metrics = client.offload(client.tasks[task_id], TransmissionStrategy.EAGER, graph, target_root, [])
        if metrics.exec_nanos > 0:
            server_speed = units / (metrics.exec_nanos / 1e9)
    except Exception as e:
        log_debug(f"Remote calibration failed, keeping server speed {server_speed}: {e}", exc_info=True)
    app_globals.set_speeds(local_speed, server_speed, calibrated=True)
    print(f"Calibrated speeds: local {local_speed:,.0f} units/s, server {server_speed:,.0f} units/s", file=sys.stderr)
    return local_speed, server_speed
