"""
Binary client/server message catalog.

Frame: len(4, big-endian, length of kind+body) | kind(1) | body.
OBJECT_FETCH is the only request the server sends; every other request
originates at the client.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

from offgrid.core.errors import OversizeMessage, ProtocolError
from offgrid.core.object_model import GUID_LEN, TransmissionStrategy
from offgrid.utils.logger_setup import log_debug

log_debug("core.wire_protocol module initialized.")

MAX_BODY = 2 ** 31 - 1
HEADER_SIZE = 4

_U32 = struct.Struct('>I')
_U64 = struct.Struct('>Q')


class MessageKind(IntEnum):
    CODE_CHECK = 1
    CODE_NEED = 2
    CODE_UPLOAD = 3
    CODE_OK = 4
    EXECUTE = 5
    OBJECT_FETCH = 6
    OBJECT_PUSH = 7
    RESULT = 8
    REMOTE_ERROR = 9
    PING = 10
    PONG = 11
    PROBE = 12


class ResultStatus(IntEnum):
    OK = 0
    ERROR = 1


class RemoteErrorCode(IntEnum):
    CODE_UNKNOWN = 1
    TASK_UNKNOWN = 2
    TASK_FAILED = 3
    PROTOCOL = 4
    FETCH_TIMEOUT = 5
    HASH_MISMATCH = 6


@dataclass
class CodeUpload:
    code_hash: bytes
    bundle: bytes


@dataclass
class ExecuteBody:
    task_id: int
    strategy: TransmissionStrategy
    code_hash: bytes
    target_root: bytes
    param_roots: list = field(default_factory=list)
    static_roots: list = field(default_factory=list)
    state: bytes = b''
    alternative_impl_id: Optional[int] = None
    push_order: list = field(default_factory=list)


@dataclass
class ObjectPush:
    guid: bytes
    node_bytes: bytes


@dataclass
class ResultBody:
    status: ResultStatus
    return_payload: bytes = b''
    modified_state: bytes = b''
    bytes_received: int = 0
    exec_nanos: int = 0
    held: list = field(default_factory=list)


@dataclass
class RemoteErrorBody:
    code: RemoteErrorCode
    message: str = ''


@dataclass
class WireMessage:
    kind: MessageKind
    body: object = b''

    def __repr__(self):
        size = len(self.body) if isinstance(self.body, (bytes, bytearray)) else '-'
        return f"WireMessage({self.kind.name}, body={type(self.body).__name__}[{size}])"


# --- Encoding ---

def _guids(values):
    parts = [_U32.pack(len(values))]
    for g in values:
        if len(g) != GUID_LEN:
            raise ValueError("guid must be 16 bytes")
        parts.append(bytes(g))
    return b''.join(parts)


def _sized(blob):
    return _U32.pack(len(blob)) + bytes(blob)


def _fixed(blob, size, what):
    if len(blob) != size:
        raise ValueError(f"{what} must be {size} bytes, got {len(blob)}")
    return bytes(blob)


def _encode_execute(body):
    has_alt = body.alternative_impl_id is not None
    return b''.join((
        _U32.pack(body.task_id),
        bytes((int(body.strategy), 1 if has_alt else 0)),
        _U32.pack(body.alternative_impl_id if has_alt else 0),
        _fixed(body.code_hash, 16, 'code_hash'),
        _fixed(body.target_root, GUID_LEN, 'target_root'),
        _guids(body.param_roots),
        _guids(body.static_roots),
        _guids(body.push_order),
        _sized(body.state),
    ))


def _encode_result(body):
    return b''.join((
        bytes((int(body.status),)),
        _U64.pack(body.bytes_received),
        _U64.pack(body.exec_nanos),
        _sized(body.return_payload),
        _sized(body.modified_state),
        _guids(body.held),
    ))


_BODY_ENCODERS = {
    MessageKind.CODE_CHECK: lambda b: _fixed(b, 16, 'code hash'),
    MessageKind.CODE_NEED: lambda b: _fixed(b, 16, 'code hash'),
    MessageKind.CODE_UPLOAD: lambda b: _fixed(b.code_hash, 16, 'code hash') + bytes(b.bundle),
    MessageKind.CODE_OK: lambda b: _fixed(b, 16, 'code hash'),
    MessageKind.EXECUTE: _encode_execute,
    MessageKind.OBJECT_FETCH: lambda b: _fixed(b, GUID_LEN, 'guid'),
    MessageKind.OBJECT_PUSH: lambda b: _fixed(b.guid, GUID_LEN, 'guid') + bytes(b.node_bytes),
    MessageKind.RESULT: _encode_result,
    MessageKind.REMOTE_ERROR: lambda b: bytes((int(b.code),)) + b.message.encode('utf-8'),
    MessageKind.PING: lambda b: b'',
    MessageKind.PONG: lambda b: b'',
    MessageKind.PROBE: lambda b: bytes(b),
}


def encode(message):
    body = _BODY_ENCODERS[message.kind](message.body)
    if len(body) > MAX_BODY:
        raise OversizeMessage(f"{message.kind.name} body of {len(body)} bytes exceeds {MAX_BODY}")
    return _U32.pack(len(body) + 1) + bytes((int(message.kind),)) + body


# --- Decoding ---

class _BodyReader:
    def __init__(self, buffer, start, end):
        self.buffer = buffer
        self.pos = start
        self.end = end

    def take(self, n, what):
        if self.pos + n > self.end:
            raise ProtocolError(f"truncated {what}", self.pos)
        chunk = bytes(self.buffer[self.pos:self.pos + n])
        self.pos += n
        return chunk

    def u8(self, what):
        return self.take(1, what)[0]

    def u32(self, what):
        return _U32.unpack(self.take(4, what))[0]

    def u64(self, what):
        return _U64.unpack(self.take(8, what))[0]

    def guids(self, what):
        count = self.u32(f"{what} count")
        if count * GUID_LEN > self.end - self.pos:
            raise ProtocolError(f"truncated {what}", self.pos)
        return [self.take(GUID_LEN, what) for _ in range(count)]

    def sized(self, what):
        return self.take(self.u32(f"{what} length"), what)

    def rest(self):
        return self.take(self.end - self.pos, 'body')

    def finish(self):
        if self.pos != self.end:
            raise ProtocolError("frame length does not match body", self.pos)


def _enum(enum_type, value, what, offset):
    try:
        return enum_type(value)
    except ValueError:
        raise ProtocolError(f"unknown {what} {value}", offset) from None


def _decode_execute(r):
    task_id = r.u32('task_id')
    strategy_at = r.pos
    strategy = _enum(TransmissionStrategy, r.u8('strategy'), 'strategy', strategy_at)
    alt_at = r.pos
    alt_flag = r.u8('alternative flag')
    alt_id = r.u32('alternative id')
    if alt_flag not in (0, 1) or (alt_flag == 0 and alt_id != 0):
        raise ProtocolError("malformed alternative implementation field", alt_at)
    return ExecuteBody(
        task_id=task_id,
        strategy=strategy,
        alternative_impl_id=alt_id if alt_flag else None,
        code_hash=r.take(16, 'code_hash'),
        target_root=r.take(GUID_LEN, 'target_root'),
        param_roots=r.guids('param_roots'),
        static_roots=r.guids('static_roots'),
        push_order=r.guids('push_order'),
        state=r.sized('state'),
    )


def _decode_result(r):
    status_at = r.pos
    status = _enum(ResultStatus, r.u8('status'), 'result status', status_at)
    return ResultBody(
        status=status,
        bytes_received=r.u64('bytes_received'),
        exec_nanos=r.u64('exec_nanos'),
        return_payload=r.sized('return payload'),
        modified_state=r.sized('modified state'),
        held=r.guids('held'),
    )


def _decode_remote_error(r):
    code_at = r.pos
    code = _enum(RemoteErrorCode, r.u8('error code'), 'error code', code_at)
    raw_at = r.pos
    try:
        message = r.rest().decode('utf-8')
    except UnicodeDecodeError:
        raise ProtocolError("error message is not utf-8", raw_at) from None
    return RemoteErrorBody(code, message)


def _empty(r):
    r.finish()
    return b''


_BODY_DECODERS = {
    MessageKind.CODE_CHECK: lambda r: r.take(16, 'code hash'),
    MessageKind.CODE_NEED: lambda r: r.take(16, 'code hash'),
    MessageKind.CODE_UPLOAD: lambda r: CodeUpload(r.take(16, 'code hash'), r.rest()),
    MessageKind.CODE_OK: lambda r: r.take(16, 'code hash'),
    MessageKind.EXECUTE: _decode_execute,
    MessageKind.OBJECT_FETCH: lambda r: r.take(GUID_LEN, 'guid'),
    MessageKind.OBJECT_PUSH: lambda r: ObjectPush(r.take(GUID_LEN, 'guid'), r.rest()),
    MessageKind.RESULT: _decode_result,
    MessageKind.REMOTE_ERROR: _decode_remote_error,
    MessageKind.PING: _empty,
    MessageKind.PONG: _empty,
    MessageKind.PROBE: lambda r: r.rest(),
}


def decode_frame(buffer, offset=0):
    """Decode the frame starting at `offset`; returns (WireMessage, next_offset)."""
    if offset + HEADER_SIZE > len(buffer):
        raise ProtocolError("truncated frame header", offset)
    (length,) = _U32.unpack_from(buffer, offset)
    if length == 0:
        raise ProtocolError("frame without kind byte", offset)
    if length - 1 > MAX_BODY:
        raise ProtocolError(f"frame length {length} exceeds limit", offset)
    end = offset + HEADER_SIZE + length
    if end > len(buffer):
        raise ProtocolError(f"truncated frame: need {length} bytes", offset + HEADER_SIZE)
    kind_at = offset + HEADER_SIZE
    kind = _enum(MessageKind, buffer[kind_at], 'kind', kind_at)
    reader = _BodyReader(buffer, kind_at + 1, end)
    body = _BODY_DECODERS[kind](reader)
    reader.finish()
    return WireMessage(kind, body), end


def decode(data):
    """Decode exactly one frame."""
    message, end = decode_frame(data, 0)
    if end != len(data):
        raise ProtocolError("bytes after frame", end)
    return message


def frame_length(header):
    """Declared kind+body length from a 4-byte frame header."""
    return _U32.unpack(bytes(header))[0]


class FrameReader:
    """Reads whole frames from a blocking binary stream (e.g. socket.makefile('rb'))."""

    def __init__(self, stream):
        self.stream = stream
        self.offset = 0

    def _read_exact(self, n):
        chunks = []
        remaining = n
        while remaining:
            chunk = self.stream.read(remaining)
            if not chunk:
                return b''.join(chunks), False
            chunks.append(chunk)
            remaining -= len(chunk)
        return b''.join(chunks), True

    def read_frame(self):
        """Next (message, frame_size), or None on a clean end of stream."""
        header, complete = self._read_exact(HEADER_SIZE)
        if not header:
            return None
        if not complete:
            raise ProtocolError("stream ended inside frame header", self.offset)
        length = frame_length(header)
        if length == 0 or length - 1 > MAX_BODY:
            raise ProtocolError(f"bad frame length {length}", self.offset)
        rest, complete = self._read_exact(length)
        if not complete:
            raise ProtocolError("stream ended inside frame", self.offset + HEADER_SIZE)
        frame = header + rest
        try:
            message, _ = decode_frame(frame, 0)
        except ProtocolError as e:
            raise ProtocolError(f"bad frame: {e}", self.offset) from e
        self.offset += len(frame)
        return message, len(frame)


# --- Convenience constructors ---

def ping():
    return WireMessage(MessageKind.PING, b'')


def pong():
    return WireMessage(MessageKind.PONG, b'')


def probe(size):
    return WireMessage(MessageKind.PROBE, bytes(size))


def fetch(guid):
    return WireMessage(MessageKind.OBJECT_FETCH, bytes(guid))


def push(guid, node_bytes):
    return WireMessage(MessageKind.OBJECT_PUSH, ObjectPush(bytes(guid), bytes(node_bytes)))


def remote_error(code, message):
    return WireMessage(MessageKind.REMOTE_ERROR, RemoteErrorBody(RemoteErrorCode(code), message))
