"""Request/response codec for the registry and publisher control sockets.

Every message is ``length u32 | verb u8 | field_count u16 | fields``; a field
is ``0 | i64`` or ``1 | len u32 | utf-8``. Requests and replies use the same
shape, replies carry the verb OK or ERROR.
"""

from __future__ import annotations

import enum
import socket
import struct
from typing import Sequence, Union

from .wire import Disconnected, recv_exact

_LEN = struct.Struct("<I")
_HEAD = struct.Struct("<BH")
_INT = struct.Struct("<Bq")
_STR = struct.Struct("<BI")
MAX_MESSAGE = 1 << 20

Field = Union[int, str]


class Verb(enum.IntEnum):
    OK = 0
    ERROR = 1
    REGISTER = 2
    LOOKUP = 3
    SUBSCRIBE = 4
    QUEUE_INFO = 5
    BARRIER = 6
    UNREGISTER = 7
    PING = 8


class BarrierOp(enum.IntEnum):
    SETUP = 0
    JOIN = 1
    TURN_WAIT = 2
    TURN_DONE = 3


class ProtocolError(RuntimeError):
    pass


class RemoteError(RuntimeError):
    """The peer answered with ERROR."""


def encode(verb: int, fields: Sequence[Field] = ()) -> bytes:
    body = [_HEAD.pack(verb, len(fields))]
    for f in fields:
        if isinstance(f, bool) or isinstance(f, int):
            body.append(_INT.pack(0, int(f)))
        elif isinstance(f, str):
            raw = f.encode()
            body.append(_STR.pack(1, len(raw)) + raw)
        else:
            raise TypeError(f"unsupported field type {type(f).__name__}")
    data = b"".join(body)
    return _LEN.pack(len(data)) + data


def decode(body) -> tuple[int, list]:
    if len(body) < _HEAD.size:
        raise ProtocolError("short message")
    verb, n = _HEAD.unpack_from(body)
    pos = _HEAD.size
    fields: list = []
    for _ in range(n):
        if pos >= len(body):
            raise ProtocolError("truncated field list")
        tag = body[pos]
        if tag == 0:
            if pos + _INT.size > len(body):
                raise ProtocolError("truncated int field")
            fields.append(_INT.unpack_from(body, pos)[1])
            pos += _INT.size
        elif tag == 1:
            if pos + _STR.size > len(body):
                raise ProtocolError("truncated string field")
            slen = _STR.unpack_from(body, pos)[1]
            pos += _STR.size
            if pos + slen > len(body):
                raise ProtocolError("truncated string field")
            fields.append(bytes(body[pos : pos + slen]).decode())
            pos += slen
        else:
            raise ProtocolError(f"unknown field tag {tag}")
    if pos != len(body):
        raise ProtocolError("trailing bytes after fields")
    try:
        verb = Verb(verb)
    except ValueError:
        raise ProtocolError(f"unknown verb {verb}") from None
    return verb, fields


def send_message(sock: socket.socket, verb: int, fields: Sequence[Field] = ()) -> None:
    sock.sendall(encode(verb, fields))


def recv_message(sock: socket.socket) -> tuple[int, list]:
    (n,) = _LEN.unpack(recv_exact(sock, _LEN.size))
    if n > MAX_MESSAGE:
        raise ProtocolError(f"message of {n} bytes exceeds limit")
    return decode(recv_exact(sock, n))


def call(sock: socket.socket, verb: int, fields: Sequence[Field] = ()) -> list:
    """Send a request and return the OK reply's fields; raise RemoteError on ERROR."""
    send_message(sock, verb, fields)
    rverb, rfields = recv_message(sock)
    if rverb == Verb.ERROR:
        raise RemoteError(rfields[0] if rfields else "remote error")
    if rverb != Verb.OK:
        raise ProtocolError(f"unexpected reply verb {rverb!r}")
    return rfields


def connect_unix(path: str, timeout: float | None = 5.0) -> socket.socket:
    s = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    s.settimeout(timeout)
    try:
        s.connect(path)
    except OSError:
        s.close()
        raise
    return s


__all__ = [
    "BarrierOp",
    "Disconnected",
    "ProtocolError",
    "RemoteError",
    "Verb",
    "call",
    "connect_unix",
    "decode",
    "encode",
    "recv_message",
    "send_message",
]
