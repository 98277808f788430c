"""
Experiment driver: runs every (workload, strategy, link, cache) cell on fresh
client/server pairs, averages the trials and checks that every placement of
a workload produced the same result.
"""
import hashlib
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from offgrid import config
from offgrid.core import globals as app_globals
from offgrid.core.errors import ConfigError, EquivalenceViolation
from offgrid.core.object_model import graph_hash
from offgrid.netsim import RealClockNetwork, VirtualNetwork, parse_network
from offgrid.processing.workload_loader import (AVAILABLE_WORKLOADS, LINSOLVE_TASK, WorkloadSpec, build_calibration,
                                                build_graph, install_workloads, register_workloads)
from offgrid.runtime.client import ClientRuntime
from offgrid.runtime.decision import calibrate
from offgrid.runtime.server import ServerRuntime
from offgrid.utils.logger_setup import log_debug

log_debug("bench.matrix module initialized.")

STRATEGIES = ('local', 'eager', 'lazy', 'pipelined', 'auto')
CLOCKS = ('virtual', 'real')


@dataclass
class BenchConfig:
    workloads: list = field(default_factory=lambda: ['blob_detect'])
    strategies: list = field(default_factory=lambda: ['local', 'eager', 'lazy', 'pipelined'])
    links: list = field(default_factory=lambda: [config.DEFAULT_NETWORK])
    cache: list = field(default_factory=lambda: [False])
    trials: int = config.DEFAULT_TRIALS
    seed: int = config.DEFAULT_SEED
    scale: dict = field(default_factory=dict)
    timeout_s: float = config.DEFAULT_TIMEOUT_S
    blackhole_after: Optional[int] = None
    clock: str = 'virtual'
    local_speed: Optional[float] = None
    server_speed: Optional[float] = None
    with_alternative: bool = True

    def validate(self):
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.clock not in CLOCKS:
            raise ConfigError(f"clock must be one of {', '.join(CLOCKS)}, got '{self.clock}'")
        for name in self.strategies:
            if name not in STRATEGIES:
                raise ConfigError(f"unknown strategy '{name}' (expected one of {', '.join(STRATEGIES)})")
        for name in self.workloads:
            if name not in AVAILABLE_WORKLOADS:
                raise ConfigError(f"unknown workload '{name}'")
        if not (self.workloads and self.strategies and self.links and self.cache):
            raise ConfigError("every matrix dimension needs at least one value")
        for link in self.links:
            parse_network(link)
        for name in self.workloads:
            self.spec_for(name)
        return self

    def spec_for(self, name):
        known = AVAILABLE_WORKLOADS[name]["scale"]
        scale = {k: v for k, v in self.scale.items() if k in known and v is not None}
        return WorkloadSpec(name, self.seed, scale)


@dataclass
class ExperimentRow:
    workload: str
    strategy: str
    link: str
    cache: bool
    trials: int
    wall_time: float
    bytes_up: float
    bytes_down: float
    fetch_round_trips: float
    speedup: Optional[float] = None
    result_hash: str = ''
    alt_used: bool = False
    clock: str = 'virtual'
    flops: Optional[float] = None
    compute_time: float = 0.0
    code_bytes_up: int = 0
    fallbacks: int = 0


@dataclass
class _Trial:
    wall_time: float = 0.0
    bytes_up: int = 0
    bytes_down: int = 0
    fetches: int = 0
    compute_time: float = 0.0
    fallbacks: int = 0
    alt_used: bool = False
    labels: list = field(default_factory=list)
    payload: bytes = b''
    result_hash: str = ''


class _Pair:
    """A fresh client/server pair over one emulated link."""

    def __init__(self, link_config, bench, cache_enabled, strategy):
        if bench.clock == 'virtual':
            self.network = VirtualNetwork(link_config)
        else:
            self.network = RealClockNetwork(link_config)
        self.server = install_workloads(ServerRuntime(self.network.server, timeout_s=bench.timeout_s))
        self.client = ClientRuntime(self.network.client, cache_enabled=cache_enabled, timeout_s=bench.timeout_s,
                                    strategy=strategy)
        register_workloads(self.client, bench.with_alternative)

    def close(self):
        self.network.close()


def _outcome_hash(payload, graph, roots):
    digest = hashlib.md5(payload)
    digest.update(graph_hash(graph, roots).encode('ascii'))
    return digest.hexdigest()


def _invoke_all(client, spec, graph, target, params, trial):
    payload = b''
    for _ in range(spec.invocations):
        payload, metrics = client.invoke(spec.task_id, graph, target, params)
        trial.wall_time += metrics.wall_time
        trial.bytes_up += metrics.bytes_up
        trial.bytes_down += metrics.bytes_down
        trial.fetches += metrics.fetch_round_trips
        trial.fallbacks += int(metrics.fell_back)
        trial.alt_used = trial.alt_used or metrics.alt_used
        trial.labels.append(metrics.placement.label)
        if metrics.placement.is_local:
            trial.compute_time += metrics.wall_time
        else:
            trial.compute_time += metrics.exec_nanos / 1e9
    return payload


def run_trial(bench, spec, link_config, strategy, cache_enabled):
    pair = _Pair(link_config, bench, cache_enabled, strategy)
    trial = _Trial()
    try:
        client = pair.client
        code_bytes = 0
        if strategy != 'local':
            client.register_code()
            code_bytes = client.code_bytes_up
        if strategy == 'auto':
            client.profile_network()
        graph, target, params = build_graph(spec)
        if cache_enabled and spec.warmable and strategy != 'local':
            _invoke_all(client, spec, graph, target, params, _Trial())
        trial.payload = _invoke_all(client, spec, graph, target, params, trial)
        trial.result_hash = _outcome_hash(trial.payload, graph, [target, *params])
        return trial, code_bytes
    finally:
        pair.close()


def _row_label(strategy, trials):
    if strategy != 'auto':
        return strategy
    chosen = Counter(label for t in trials for label in t.labels).most_common(1)[0][0]
    return f"auto:{chosen}"


def run_cell(bench, workload, strategy, link, cache_enabled):
    spec = bench.spec_for(workload)
    link_config = parse_network(link, bench.blackhole_after)
    trials = []
    code_bytes = 0
    for index in range(bench.trials):
        trial, code_bytes = run_trial(bench, spec, link_config, strategy, cache_enabled)
        trials.append(trial)
        log_debug(f"{workload}/{strategy}/{link}/cache={cache_enabled} trial {index + 1}: "
                  f"wall={trial.wall_time:.6f}s up={trial.bytes_up} down={trial.bytes_down}")
    hashes = {t.result_hash for t in trials}
    if len(hashes) != 1:
        raise EquivalenceViolation(f"{workload}/{strategy}/{link}: trials disagree ({len(hashes)} distinct results)")
    count = len(trials)
    row = ExperimentRow(
        workload=workload,
        strategy=_row_label(strategy, trials),
        link=link,
        cache=cache_enabled,
        trials=count,
        wall_time=sum(t.wall_time for t in trials) / count,
        bytes_up=sum(t.bytes_up for t in trials) / count,
        bytes_down=sum(t.bytes_down for t in trials) / count,
        fetch_round_trips=sum(t.fetches for t in trials) / count,
        result_hash=trials[0].result_hash,
        alt_used=trials[0].alt_used,
        clock=bench.clock,
        compute_time=sum(t.compute_time for t in trials) / count,
        code_bytes_up=code_bytes,
        fallbacks=sum(t.fallbacks for t in trials),
    )
    if spec.task_id == LINSOLVE_TASK:
        _, flops = struct.unpack('>dQ', trials[0].payload)
        row.flops = float(flops) * spec.invocations
    return row


def check_equivalence(rows):
    """Every row of a workload must agree on the outcome, except rows that ran an alternative implementation."""
    groups = {}
    for row in rows:
        groups.setdefault((row.workload, row.alt_used), []).append(row)
    for (workload, alt_used), members in groups.items():
        if len({r.result_hash for r in members}) > 1:
            detail = ', '.join(f"{r.strategy}/{r.link}/cache={'on' if r.cache else 'off'}={r.result_hash[:8]}"
                               for r in members)
            raise EquivalenceViolation(f"{workload}{' (alternative)' if alt_used else ''}: "
                                       f"placements disagree: {detail}")


def fill_speedups(rows):
    for row in rows:
        baseline = None
        for candidate in rows:
            if candidate.workload == row.workload and candidate.link == row.link and candidate.strategy == 'local':
                if baseline is None or candidate.cache == row.cache:
                    baseline = candidate
        if baseline is not None and row.wall_time > 0:
            row.speedup = baseline.wall_time / row.wall_time
    return rows


def calibrate_speeds(bench):
    """Measure LOCAL_SPEED and SERVER_SPEED on a loopback pair; kept for the rest of the process."""
    pair = _Pair(parse_network('loopback'), bench, False, 'eager')
    try:
        graph, target, _ = build_calibration()
        return calibrate(pair.client, graph, target)
    finally:
        pair.close()


def run_matrix(bench):
    """Rows for the whole matrix, in workload, link, cache, strategy order."""
    bench.validate()
    if bench.clock == 'real' and not (bench.local_speed or bench.server_speed):
        calibrate_speeds(bench)
    saved = (app_globals.local_speed, app_globals.server_speed, app_globals.speeds_calibrated)
    if bench.local_speed or bench.server_speed:
        app_globals.set_speeds(bench.local_speed or saved[0], bench.server_speed or saved[1])
    try:
        rows = []
        for workload in bench.workloads:
            for link in bench.links:
                for cache_enabled in bench.cache:
                    for strategy in bench.strategies:
                        rows.append(run_cell(bench, workload, strategy, link, cache_enabled))
    finally:
        app_globals.set_speeds(saved[0], saved[1], saved[2])
    check_equivalence(rows)
    return fill_speedups(rows)
