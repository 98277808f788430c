import io
import os
import random
import struct
import unittest
from unittest import mock

from offgrid.core.errors import OversizeMessage, ProtocolError
from offgrid.core.object_model import TransmissionStrategy, decode_stream
from offgrid.core.wire_protocol import (CodeUpload, ExecuteBody, FrameReader, MessageKind, ObjectPush,
                                        RemoteErrorBody, RemoteErrorCode, ResultBody, ResultStatus, WireMessage,
                                        decode, decode_frame, encode, fetch, ping, probe)

FIXTURES = os.path.join(os.path.dirname(__file__), 'fixtures', 'wire')


def fixture(name):
    with open(os.path.join(FIXTURES, name), 'rb') as f:
        return f.read()


def random_message(rng):
    guid = lambda: bytes(rng.getrandbits(8) for _ in range(16))
    blob = lambda limit=64: bytes(rng.getrandbits(8) for _ in range(rng.randint(0, limit)))
    kind = rng.choice(list(MessageKind))
    if kind in (MessageKind.CODE_CHECK, MessageKind.CODE_NEED, MessageKind.CODE_OK, MessageKind.OBJECT_FETCH):
        body = guid()
    elif kind is MessageKind.CODE_UPLOAD:
        body = CodeUpload(guid(), blob())
    elif kind is MessageKind.EXECUTE:
        body = ExecuteBody(
            task_id=rng.getrandbits(32),
            strategy=rng.choice(list(TransmissionStrategy)),
            code_hash=guid(),
            target_root=guid(),
            param_roots=[guid() for _ in range(rng.randint(0, 3))],
            static_roots=[guid() for _ in range(rng.randint(0, 2))],
            state=blob(),
            alternative_impl_id=rng.choice([None, rng.getrandbits(32)]),
            push_order=[guid() for _ in range(rng.randint(0, 3))],
        )
    elif kind is MessageKind.OBJECT_PUSH:
        body = ObjectPush(guid(), blob())
    elif kind is MessageKind.RESULT:
        body = ResultBody(rng.choice(list(ResultStatus)), blob(), blob(), rng.getrandbits(64), rng.getrandbits(64),
                          [guid() for _ in range(rng.randint(0, 3))])
    elif kind is MessageKind.REMOTE_ERROR:
        body = RemoteErrorBody(rng.choice(list(RemoteErrorCode)), ''.join(rng.choice('abcé ') for _ in range(10)))
    elif kind is MessageKind.PROBE:
        body = bytes(rng.randint(0, 32))
    else:
        body = b''
    return WireMessage(kind, body)


class TestRoundTrip(unittest.TestCase):

    def test_fuzz_round_trip(self):
        rng = random.Random(2024)
        for _ in range(10000):
            message = random_message(rng)
            frame = encode(message)
            decoded = decode(frame)
            self.assertEqual(decoded.kind, message.kind)
            self.assertEqual(decoded.body, message.body)
            self.assertEqual(struct.unpack('>I', frame[:4])[0], len(frame) - 4)

    def test_frames_back_to_back(self):
        data = encode(ping()) + encode(fetch(bytes(16)))
        first, offset = decode_frame(data)
        second, end = decode_frame(data, offset)
        self.assertEqual(first.kind, MessageKind.PING)
        self.assertEqual(second.kind, MessageKind.OBJECT_FETCH)
        self.assertEqual(end, len(data))


class TestGoldenFrames(unittest.TestCase):

    def test_ping(self):
        self.assertEqual(encode(ping()), fixture('ping.bin'))

    def test_object_fetch(self):
        self.assertEqual(encode(fetch(bytes(16))), fixture('object_fetch.bin'))

    def test_execute(self):
        data = fixture('execute.bin')
        message = decode(data)
        body = message.body
        self.assertEqual(message.kind, MessageKind.EXECUTE)
        self.assertEqual(body.task_id, 3)
        self.assertEqual(body.strategy, TransmissionStrategy.LAZY)
        self.assertIsNone(body.alternative_impl_id)
        self.assertEqual(body.code_hash, b'\x11' * 16)
        self.assertEqual(body.target_root, b'\xaa' * 16)
        self.assertEqual(body.param_roots, [b'\xbb' * 16])
        self.assertEqual(body.static_roots, [])
        self.assertEqual(body.push_order, [])
        nodes = decode_stream(body.state)
        self.assertEqual([n.guid for n in nodes], [b'\xaa' * 16, b'\xbb' * 16])
        self.assertEqual(nodes[0].refs, [b'\xbb' * 16])
        self.assertEqual(nodes[0].payload, b'x')
        self.assertTrue(nodes[1].empty_container)
        self.assertEqual(encode(message), data)


class TestMalformedFrames(unittest.TestCase):

    def test_truncated_header(self):
        with self.assertRaises(ProtocolError) as ctx:
            decode(b'\x00\x00')
        self.assertEqual(ctx.exception.offset, 0)

    def test_truncated_body(self):
        frame = encode(fetch(bytes(16)))
        with self.assertRaises(ProtocolError):
            decode(frame[:-1])

    def test_unknown_kind(self):
        with self.assertRaises(ProtocolError) as ctx:
            decode(b'\x00\x00\x00\x01\x63')
        self.assertEqual(ctx.exception.offset, 4)

    def test_zero_length_frame(self):
        with self.assertRaises(ProtocolError):
            decode(b'\x00\x00\x00\x00')

    def test_oversize_length(self):
        with self.assertRaises(ProtocolError):
            decode(b'\xff\xff\xff\xff\x0c')

    def test_ping_with_body(self):
        with self.assertRaises(ProtocolError):
            decode(b'\x00\x00\x00\x02\x0a\x00')

    def test_trailing_bytes(self):
        with self.assertRaises(ProtocolError):
            decode(encode(ping()) + b'\x00')

    def test_bad_alternative_flag(self):
        frame = bytearray(fixture('execute.bin'))
        frame[10] = 2
        with self.assertRaises(ProtocolError) as ctx:
            decode(bytes(frame))
        self.assertEqual(ctx.exception.offset, 10)

    def test_bad_utf8_error_message(self):
        with self.assertRaises(ProtocolError):
            decode(b'\x00\x00\x00\x03\x09\x01\xff')

    def test_oversize_body_is_refused(self):
        with mock.patch('offgrid.core.wire_protocol.MAX_BODY', 8):
            with self.assertRaises(OversizeMessage):
                encode(probe(16))


class TestFrameReader(unittest.TestCase):

    def test_reads_frames_until_eof(self):
        data = encode(ping()) + encode(fetch(bytes(16)))
        reader = FrameReader(io.BytesIO(data))
        first = reader.read_frame()
        second = reader.read_frame()
        self.assertEqual(first[0].kind, MessageKind.PING)
        self.assertEqual(first[1], 5)
        self.assertEqual(second[1], 21)
        self.assertIsNone(reader.read_frame())

    def test_stream_cut_inside_frame(self):
        reader = FrameReader(io.BytesIO(encode(fetch(bytes(16)))[:10]))
        with self.assertRaises(ProtocolError):
            reader.read_frame()


if __name__ == '__main__':
    unittest.main()
