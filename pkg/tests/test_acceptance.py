"""
End-to-end properties of the middleware on the virtual clock: transfer
savings, strategy orderings, placement decisions, result equivalence,
code caching, alternative fidelity and fault fallback.
"""
import shutil
import tempfile
import unittest

import mpmath

from offgrid import config
from offgrid.core import globals as app_globals
from offgrid.core.object_model import encode_stream, graph_hash
from offgrid.core.wire_protocol import encode, push
from offgrid.netsim import VirtualNetwork, parse_network
from offgrid.processing.workload_loader import (AVAILABLE_WORKLOADS, LINSOLVE_TASK, WorkloadSpec, build_graph,
                                                install_workloads, register_workloads)
from offgrid.runtime.client import ClientRuntime
from offgrid.runtime.decision import NetworkProfile, decide
from offgrid.runtime.server import CodeRegistry, ServerRuntime

BLOBS = {'count': 10, 'blob_bytes': 150_000, 'rounds': 2}


class Pair:

    def __init__(self, link='3g', strategy='eager', cache_enabled=False, with_alternative=True, registry=None,
                 timeout_s=config.DEFAULT_TIMEOUT_S):
        self.network = VirtualNetwork(parse_network(link))
        self.server = install_workloads(ServerRuntime(self.network.server, registry=registry, timeout_s=timeout_s))
        self.client = register_workloads(
            ClientRuntime(self.network.client, cache_enabled=cache_enabled, timeout_s=timeout_s, strategy=strategy),
            with_alternative)

    def run(self, spec, graph=None):
        if graph is None:
            graph = build_graph(spec)
        graph, target, params = graph
        payload = metrics = None
        self.history = []
        for _ in range(spec.invocations):
            payload, metrics = self.client.invoke(spec.task_id, graph, target, params)
            self.history.append(metrics)
        return payload, metrics, graph_hash(graph, [target, *params])

    def blackhole_now(self):
        self.network.link.config = self.network.link.config.replace(blackhole_after=self.network.link.total_in)


def local_run(spec, with_alternative=True):
    client = register_workloads(ClientRuntime(None, strategy='local'), with_alternative)
    graph, target, params = build_graph(spec)
    payload = None
    for _ in range(spec.invocations):
        payload, _ = client.invoke(spec.task_id, graph, target, params)
    return payload, graph_hash(graph, [target, *params])


class TestTransferSavings(unittest.TestCase):

    def test_lazy_uploads_a_tenth_for_one_of_ten(self):
        spec = WorkloadSpec('blob_detect_1ofN', scale=BLOBS)
        _, eager, _ = Pair(strategy='eager').run(spec)
        _, lazy, _ = Pair(strategy='lazy').run(spec)
        graph, target, _ = build_graph(spec)
        blobs = [graph.node(guid) for guid in graph.node(target).refs]
        fetched = blobs[-1]
        # Both EXECUTE frames share the album, the selection and a node header
        # per blob; lazy adds one push frame for the blob it fetches.
        shared = eager.bytes_up - sum(len(blob.payload) for blob in blobs)
        push_frame = len(encode(push(fetched.guid, encode_stream([fetched]))))
        self.assertLessEqual(lazy.bytes_up, shared + push_frame)
        overhead = shared + push_frame - len(fetched.payload)
        self.assertLessEqual(lazy.bytes_up / eager.bytes_up, 1 / len(blobs) + overhead / eager.bytes_up)
        self.assertEqual(lazy.fetch_round_trips, 1)

    def test_warm_cache_uploads_under_one_percent(self):
        spec = WorkloadSpec('blob_detect', scale=BLOBS)
        pair = Pair(strategy='eager', cache_enabled=True)
        graph = build_graph(spec)
        _, cold, _ = pair.run(spec, graph)
        _, warm, _ = pair.run(spec, graph)
        self.assertEqual(warm.cache_hits, 10)
        self.assertLessEqual(warm.bytes_up / cold.bytes_up, 0.01)


class TestStrategyOrdering(unittest.TestCase):

    def setUp(self):
        # Per-blob compute (1.5 s) exceeds per-blob upload on 3g (1.2 s).
        self.saved = (app_globals.local_speed, app_globals.server_speed, app_globals.speeds_calibrated)
        app_globals.set_speeds(2.0e6, 2.0e5)

    def tearDown(self):
        app_globals.set_speeds(*self.saved)

    def walls(self, name):
        spec = WorkloadSpec(name, scale=BLOBS)
        return {strategy: Pair(strategy=strategy).run(spec)[1].wall_time
                for strategy in ('eager', 'lazy', 'pipelined')}

    def test_all_blobs_pipelined_beats_eager_beats_lazy(self):
        walls = self.walls('blob_detect')
        self.assertLess(walls['pipelined'] * 1.01, walls['eager'])
        self.assertLess(walls['eager'] * 1.01, walls['lazy'])

    def test_one_blob_lazy_wins(self):
        walls = self.walls('blob_detect_1ofN')
        self.assertLess(walls['lazy'], walls['eager'])
        self.assertLess(walls['lazy'], walls['pipelined'])


class TestPlacementDecision(unittest.TestCase):

    def setUp(self):
        app_globals.reset_speeds()
        preset = parse_network('3g')
        self.profile = NetworkProfile(preset.rtt, preset.up_bandwidth, preset.down_bandwidth, reachable=True)

    def decision(self, k):
        spec = WorkloadSpec('linsolve', scale={'n': 32, 'k': k})
        graph, target, params = build_graph(spec)
        client = register_workloads(ClientRuntime(None))
        task = client.tasks[LINSOLVE_TASK]
        units = task.work_units(graph, target, params)
        return decide(task, self.profile, 64, 0, task_units=units,
                      expected_down=task.down_bytes(graph, target, params)), units

    def test_small_linsolve_stays_local(self):
        placement, units = self.decision(10)
        self.assertLess(units / app_globals.server_speed, self.profile.rtt)
        self.assertTrue(placement.is_local)

    def test_large_linsolve_goes_remote(self):
        placement, _ = self.decision(1000)
        self.assertFalse(placement.is_local)

    def test_client_decides_from_measured_profile(self):
        for k, local in ((10, True), (1000, False)):
            pair = Pair(strategy='auto')
            _, metrics, _ = pair.run(WorkloadSpec('linsolve', scale={'n': 32, 'k': k}))
            self.assertEqual(metrics.placement.is_local, local)


class TestEquivalence(unittest.TestCase):

    SCALES = {
        'game_tree': {'depth': 3, 'moves': 2},
        'linsolve': {'n': 12, 'k': 2},
        'blob_detect': {'count': 4, 'blob_bytes': 3000, 'rounds': 2},
        'blob_detect_1ofN': {'count': 4, 'blob_bytes': 3000, 'rounds': 2},
        'pi_machin': {'digits': 300},
    }

    def test_every_placement_matches_local_over_twenty_seeds(self):
        for name in AVAILABLE_WORKLOADS:
            for seed in range(20):
                spec = WorkloadSpec(name, seed * 7919 + 1, self.SCALES[name])
                expected = local_run(spec, with_alternative=False)
                for strategy in ('local', 'eager', 'lazy', 'pipelined', 'fallback'):
                    with self.subTest(workload=name, seed=seed, placement=strategy):
                        pair = Pair(strategy='eager' if strategy == 'fallback' else strategy,
                                    with_alternative=False)
                        if strategy == 'fallback':
                            pair.client.register_code()
                            pair.blackhole_now()
                        payload, _, digest = pair.run(spec)
                        self.assertEqual(pair.history[0].fell_back, strategy == 'fallback')
                        self.assertFalse(any(m.fell_back for m in pair.history[1:]))
                        self.assertEqual((payload, digest), expected)


class TestCodeCaching(unittest.TestCase):

    def test_second_session_sends_only_the_hash(self):
        directory = tempfile.mkdtemp()
        try:
            first = Pair(registry=CodeRegistry(directory))
            self.assertTrue(first.client.register_code())
            second = Pair(registry=CodeRegistry(directory))
            self.assertTrue(second.client.register_code())
            self.assertLessEqual(second.client.last_registration_bytes, 64)
            self.assertEqual(second.server.stats['code_need'], 0)
        finally:
            shutil.rmtree(directory)


class TestAlternativeFidelity(unittest.TestCase):

    def test_remote_alternative_doubles_the_digits(self):
        with mpmath.workdps(4040):
            oracle = mpmath.nstr(mpmath.pi, 4020, strip_zeros=False)
        spec = WorkloadSpec('pi_machin', scale={'digits': 2000})

        payload, metrics, _ = Pair(strategy='eager').run(spec)
        self.assertTrue(metrics.alt_used)
        self.assertEqual(payload.decode('ascii'), oracle[:4002])

        local, _ = local_run(spec)
        self.assertEqual(local.decode('ascii'), oracle[:2002])


class TestFaultFallback(unittest.TestCase):

    def test_blackhole_mid_offload(self):
        spec = WorkloadSpec('blob_detect', scale={'count': 6, 'blob_bytes': 20_000, 'rounds': 1})
        pair = Pair(strategy='pipelined')
        pair.client.register_code()
        link = pair.network.link
        link.config = link.config.replace(blackhole_after=link.total_in + 50_000)
        payload, metrics, digest = pair.run(spec)
        self.assertTrue(link.blackholed)
        self.assertTrue(metrics.fell_back)
        self.assertFalse(pair.client.profile.reachable)
        self.assertEqual((payload, digest), local_run(spec))


if __name__ == '__main__':
    unittest.main()
