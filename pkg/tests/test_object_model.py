import random
import unittest

from offgrid.core.errors import IllegalState, ProtocolError, UnknownObject
from offgrid.core.object_model import (FLAG_IS_IN_CACHE, ObjectGraph, ObjectNode, ProxyPolicy, TransmissionStrategy,
                                       apply_result_state, content_hash, decode_node, decode_stream, derive_guid,
                                       deserialize_graph, encode_node, encode_state, encode_stream, graph_hash,
                                       hydrate_proxy, new_guid, reachable_closure, serialize_graph)


def random_graph(rng, max_nodes=50):
    count = rng.randint(1, max_nodes)
    guids = [new_guid(rng) for _ in range(count)]
    graph = ObjectGraph()
    for guid in guids:
        refs = [rng.choice(guids) for _ in range(rng.randint(0, 4))]
        payload = bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 24)))
        graph.add(ObjectNode(guid, rng.randint(0, 9), payload, refs, proxyable=rng.random() < 0.4))
    roots = rng.sample(guids, rng.randint(1, min(3, count)))
    return graph, roots


def fixpoint_closure(graph, roots):
    reached = set(roots)
    while True:
        grown = set(reached)
        for guid in reached:
            grown.update(graph.node(guid).refs)
        if grown == reached:
            return reached
        reached = grown


class TestClosure(unittest.TestCase):

    def test_closure_matches_fixpoint_on_random_graphs(self):
        rng = random.Random(1234)
        for _ in range(1000):
            graph, roots = random_graph(rng)
            closure = reachable_closure(graph, roots)
            self.assertEqual(len(closure), len(set(closure)))
            self.assertEqual(set(closure), fixpoint_closure(graph, roots))
            self.assertEqual(closure[0], roots[0])

    def test_cycle_is_visited_once(self):
        a, b = bytes([1] * 16), bytes([2] * 16)
        graph = ObjectGraph([ObjectNode(a, refs=[b]), ObjectNode(b, refs=[a, b])])
        self.assertEqual(reachable_closure(graph, [a]), [a, b])

    def test_unknown_root(self):
        with self.assertRaises(UnknownObject):
            reachable_closure(ObjectGraph(), [bytes(16)])


class TestEncoding(unittest.TestCase):

    def test_content_hash_of_empty_node(self):
        node = ObjectNode(bytes(16))
        self.assertEqual(len(encode_node(node)), 29)
        self.assertEqual(content_hash(node).hex(), '4aa476a72347ba44c9bd20c974d0f181')

    def test_content_hash_follows_payload(self):
        node = ObjectNode(bytes(16), 3, b'abc', proxyable=True)
        before = content_hash(node)
        node.payload = b'abd'
        self.assertNotEqual(before, content_hash(node))

    def test_node_round_trip_with_offset(self):
        node = ObjectNode(bytes(range(16)), 7, b'payload', [bytes([9] * 16)], proxyable=True)
        data = b'junk' + encode_node(node)
        decoded, end = decode_node(data, 4)
        self.assertEqual(decoded, node)
        self.assertEqual(end, len(data))

    def test_stream_errors_carry_offsets(self):
        node = encode_stream([ObjectNode(bytes(16))])
        with self.assertRaises(ProtocolError):
            decode_stream(b'XXXX' + node[4:])
        with self.assertRaises(ProtocolError) as ctx:
            decode_stream(node + b'\x00')
        self.assertEqual(ctx.exception.offset, len(node))
        flagged = bytearray(node)
        flagged[8 + 20] = 0x80
        with self.assertRaises(ProtocolError) as ctx:
            decode_stream(bytes(flagged))
        self.assertEqual(ctx.exception.offset, 28)

    def test_duplicate_guid_in_stream(self):
        node = ObjectNode(bytes(16))
        data = encode_stream([node, node])
        with self.assertRaises(ProtocolError):
            decode_stream(data)

    def test_proxy_with_payload_is_rejected(self):
        raw = bytearray(encode_stream([ObjectNode(bytes(16), payload=b'x', proxyable=True)]))
        raw[8 + 20] = 0x05
        with self.assertRaises(ProtocolError):
            decode_stream(bytes(raw))

    def test_derive_guid_is_stable(self):
        base = bytes([5] * 16)
        self.assertEqual(derive_guid(base, 1), derive_guid(base, 1))
        self.assertNotEqual(derive_guid(base, 1), derive_guid(base, 2))
        self.assertEqual(len(derive_guid(base, 0)), 16)

    def test_seeded_guids_repeat(self):
        self.assertEqual(new_guid(random.Random(3)), new_guid(random.Random(3)))


class TestStateTransfer(unittest.TestCase):

    def setUp(self):
        self.root = bytes([1] * 16)
        self.blob = bytes([2] * 16)
        self.leaf = bytes([3] * 16)
        self.graph = ObjectGraph([
            ObjectNode(self.root, 1, b'root', [self.blob, self.leaf]),
            ObjectNode(self.blob, 2, b'b' * 100, proxyable=True),
            ObjectNode(self.leaf, 3, b'leaf', [self.root]),
        ])

    def test_eager_round_trip_keeps_hash(self):
        data, elided = serialize_graph(self.graph, [self.root], ProxyPolicy(TransmissionStrategy.EAGER))
        self.assertEqual(elided, [])
        copy = deserialize_graph(data)
        self.assertEqual(graph_hash(copy, [self.root]), graph_hash(self.graph, [self.root]))

    def test_random_graphs_round_trip(self):
        rng = random.Random(99)
        for _ in range(1000):
            graph, roots = random_graph(rng)
            for mode in TransmissionStrategy:
                state = encode_state(graph, roots, ProxyPolicy(mode))
                copy = deserialize_graph(state.data)
                for guid in state.elided:
                    hydrate_proxy(copy, guid, encode_stream([graph.node(guid)]))
                self.assertEqual(graph_hash(copy, roots), graph_hash(graph, roots))

    def test_lazy_elides_proxyable_nodes(self):
        state = encode_state(self.graph, [self.root], ProxyPolicy(TransmissionStrategy.LAZY))
        self.assertEqual(state.elided, [self.blob])
        copy = deserialize_graph(state.data)
        proxy = copy.node(self.blob)
        self.assertTrue(proxy.empty_container)
        self.assertEqual(proxy.payload, b'')
        self.assertEqual(len(state.data), 8 + state.full_sizes[self.root] + 29 + state.full_sizes[self.leaf])

    def test_cached_node_becomes_in_cache_proxy(self):
        class Cache:
            def should_elide(self, node):
                return node.proxyable

        policy = ProxyPolicy(TransmissionStrategy.EAGER, cache_enabled=True)
        state = encode_state(self.graph, [self.root], policy, Cache())
        self.assertEqual(state.cached, [self.blob])
        self.assertEqual(state.strategy_proxies, [])
        node = deserialize_graph(state.data).node(self.blob)
        self.assertTrue(node.flags & FLAG_IS_IN_CACHE)

    def test_hydrate_proxy(self):
        state = encode_state(self.graph, [self.root], ProxyPolicy(TransmissionStrategy.LAZY))
        copy = deserialize_graph(state.data)
        node = hydrate_proxy(copy, self.blob, encode_stream([self.graph.node(self.blob)]))
        self.assertEqual(node.payload, b'b' * 100)
        self.assertFalse(node.is_proxy)
        with self.assertRaises(IllegalState):
            hydrate_proxy(copy, self.blob, encode_stream([self.graph.node(self.blob)]))

    def test_hydrate_rejects_wrong_guid(self):
        state = encode_state(self.graph, [self.root], ProxyPolicy(TransmissionStrategy.LAZY))
        copy = deserialize_graph(state.data)
        with self.assertRaises(ProtocolError):
            hydrate_proxy(copy, self.blob, encode_stream([self.graph.node(self.leaf)]))

    def test_apply_result_state(self):
        fresh = bytes([4] * 16)
        returned = encode_stream([ObjectNode(self.blob, 2, b'changed', proxyable=True), ObjectNode(fresh, 5, b'new')])
        guids = apply_result_state(self.graph, returned)
        self.assertEqual(guids, [self.blob, fresh])
        self.assertEqual(self.graph.node(self.blob).payload, b'changed')
        self.assertEqual(self.graph.node(fresh).payload, b'new')

    def test_apply_result_state_rejects_proxies(self):
        returned = encode_stream([ObjectNode(self.blob, 2, proxyable=True).as_proxy()])
        with self.assertRaises(ProtocolError):
            apply_result_state(self.graph, returned)

    def test_graph_hash_tracks_payload(self):
        copy = self.graph.copy()
        copy.node(self.leaf).payload = b'other'
        self.assertNotEqual(graph_hash(copy, [self.root]), graph_hash(self.graph, [self.root]))

    def test_statics(self):
        self.graph.set_static('palette', self.leaf)
        self.assertEqual(self.graph.static_roots(), [self.leaf])
        self.assertEqual(self.graph.static_roots(['palette']), [self.leaf])
        with self.assertRaises(UnknownObject):
            self.graph.static_roots(['missing'])


if __name__ == '__main__':
    unittest.main()
