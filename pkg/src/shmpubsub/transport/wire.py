"""Byte-level framing for the socket transports.

A frame is::

    magic u32 | kind u8 | topic_len u16 | topic | seq u64 | stamp_ns u64 | payload_len u64 | payload

all little-endian. HYBRID descriptor frames carry ``name_len u16 | segment
name | control block offset u64`` as their payload instead of image bytes.

UDP carries frames in datagrams of at most 60 KiB, each prefixed by a chunk
header ``magic u32 | seq u64 | idx u32 | count u32 | frame_len u64``.

Payload copies made in user space or across the socket boundary are counted
per process (see :func:`copy_count`) so tests can tell the zero-copy path from
the others.
"""

from __future__ import annotations

import enum
import socket
import struct
from typing import Callable, Iterator, Optional

FRAME_MAGIC = 0x46425350  # "PSBF"
CHUNK_MAGIC = 0x43425350  # "PSBC"
MAX_DATAGRAM = 60 * 1024

_PREFIX = struct.Struct("<IBH")
_TRAILER = struct.Struct("<QQQ")
_CHUNK = struct.Struct("<IQIIQ")
CHUNK_HEADER_SIZE = _CHUNK.size
CHUNK_DATA = MAX_DATAGRAM - CHUNK_HEADER_SIZE
_DESC_NAME = struct.Struct("<H")
_U64 = struct.Struct("<Q")

MAX_TOPIC = 128


class FrameKind(enum.IntEnum):
    DATA = 1
    DESCRIPTOR = 2
    END = 3


class FrameError(ValueError):
    pass


class Disconnected(ConnectionError):
    pass


# -- copy accounting --------------------------------------------------------

_copies = {"count": 0, "bytes": 0}


def count_copy(nbytes: int) -> None:
    _copies["count"] += 1
    _copies["bytes"] += nbytes


def copy_count() -> int:
    return _copies["count"]


def copied_bytes() -> int:
    return _copies["bytes"]


def reset_copy_count() -> None:
    _copies["count"] = 0
    _copies["bytes"] = 0


# -- frames -----------------------------------------------------------------


def header_size(topic: str) -> int:
    return _PREFIX.size + len(topic.encode()) + _TRAILER.size


def frame_length(topic: str, payload_len: int) -> int:
    return header_size(topic) + payload_len


def encode_header(kind: int, topic: str, seq: int, stamp_ns: int, payload_len: int) -> bytes:
    raw = topic.encode()
    if len(raw) > MAX_TOPIC:
        raise FrameError(f"topic longer than {MAX_TOPIC} bytes")
    return (
        _PREFIX.pack(FRAME_MAGIC, kind, len(raw))
        + raw
        + _TRAILER.pack(seq, stamp_ns, payload_len)
    )


def serialize(topic: str, seq: int, stamp_ns: int, payload, kind: int = FrameKind.DATA) -> bytes:
    """Flatten one message into a single bytes object (one payload copy)."""
    n = len(payload)
    if n:
        count_copy(n)
    return encode_header(kind, topic, seq, stamp_ns, n) + bytes(payload)


def parse_header(buf, offset: int = 0) -> tuple[int, str, int, int, int, int]:
    """Return (kind, topic, seq, stamp_ns, payload_len, header_len)."""
    if len(buf) - offset < _PREFIX.size:
        raise FrameError("truncated frame header")
    magic, kind, tlen = _PREFIX.unpack_from(buf, offset)
    if magic != FRAME_MAGIC:
        raise FrameError(f"bad frame magic {magic:#x}")
    if kind not in FrameKind._value2member_map_:
        raise FrameError(f"unknown frame kind {kind}")
    end = offset + _PREFIX.size + tlen
    if len(buf) < end + _TRAILER.size:
        raise FrameError("truncated frame header")
    topic = bytes(buf[offset + _PREFIX.size : end]).decode()
    seq, stamp, plen = _TRAILER.unpack_from(buf, end)
    return kind, topic, seq, stamp, plen, end + _TRAILER.size - offset


def deserialize(buf) -> tuple[int, str, int, int, bytes]:
    """Inverse of :func:`serialize`: (kind, topic, seq, stamp_ns, payload)."""
    kind, topic, seq, stamp, plen, hlen = parse_header(buf)
    if len(buf) != hlen + plen:
        raise FrameError(f"frame is {len(buf)} bytes, header says {hlen + plen}")
    payload = bytes(buf[hlen:])
    if plen:
        count_copy(plen)
    return kind, topic, seq, stamp, payload


def encode_descriptor(segment_name: str, cb_offset: int) -> bytes:
    raw = segment_name.encode()
    return _DESC_NAME.pack(len(raw)) + raw + _U64.pack(cb_offset)


def decode_descriptor(buf) -> tuple[str, int]:
    if len(buf) < _DESC_NAME.size:
        raise FrameError("truncated descriptor")
    (n,) = _DESC_NAME.unpack_from(buf, 0)
    if len(buf) != _DESC_NAME.size + n + _U64.size:
        raise FrameError("descriptor length mismatch")
    name = bytes(buf[2 : 2 + n]).decode()
    return name, _U64.unpack_from(buf, 2 + n)[0]


# -- stream sockets ---------------------------------------------------------


def send_frame(sock: socket.socket, kind: int, topic: str, seq: int, stamp_ns: int, payload=b"") -> None:
    """Write one frame with a single gathering send: header and payload leave together."""
    n = len(payload)
    parts = [encode_header(kind, topic, seq, stamp_ns, n)]
    if n:
        parts.append(payload)
    if kind == FrameKind.DATA and n:
        count_copy(n)  # user space to kernel
    _sendmsg_all(sock, parts)


def _sendmsg_all(sock: socket.socket, parts: list) -> None:
    views = [memoryview(p).cast("B") for p in parts]
    while views:
        sent = sock.sendmsg(views)
        while sent:
            head = views[0]
            if sent >= len(head):
                sent -= len(head)
                views.pop(0)
            else:
                views[0] = head[sent:]
                sent = 0


def recv_exact(sock: socket.socket, n: int, into: Optional[bytearray] = None) -> bytearray:
    buf = into if into is not None else bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        r = sock.recv_into(view[got:n])
        if r == 0:
            raise Disconnected("peer closed the connection")
        got += r
    return buf


def recv_frame(sock: socket.socket) -> tuple[int, str, int, int, bytearray]:
    """Read one frame. The payload lands in a fresh private buffer."""
    prefix = recv_exact(sock, _PREFIX.size)
    magic, kind, tlen = _PREFIX.unpack_from(prefix)
    if magic != FRAME_MAGIC:
        raise FrameError(f"bad frame magic {magic:#x}")
    rest = recv_exact(sock, tlen + _TRAILER.size)
    topic = bytes(rest[:tlen]).decode()
    seq, stamp, plen = _TRAILER.unpack_from(rest, tlen)
    payload = recv_exact(sock, plen) if plen else bytearray()
    if kind == FrameKind.DATA and plen:
        count_copy(plen)  # kernel to user space
    return kind, topic, seq, stamp, payload


# -- datagrams --------------------------------------------------------------


def chunk_count(frame_len: int) -> int:
    return max(1, -(-frame_len // CHUNK_DATA))


def iter_chunks(parts: list, seq: int) -> Iterator[list]:
    """Split the concatenation of ``parts`` into datagrams, without copying.

    Each yielded item is a list of buffers (chunk header first) suitable for
    ``sendmsg``.
    """
    views = [memoryview(p).cast("B") for p in parts if len(p)]
    total = sum(len(v) for v in views)
    count = chunk_count(total)
    pi, po = 0, 0
    for idx in range(count):
        need = min(CHUNK_DATA, total - idx * CHUNK_DATA)
        out = [_CHUNK.pack(CHUNK_MAGIC, seq, idx, count, total)]
        while need:
            v = views[pi]
            take = min(need, len(v) - po)
            out.append(v[po : po + take])
            po += take
            need -= take
            if po == len(v):
                pi, po = pi + 1, 0
        yield out


def send_datagram_frame(
    sock: socket.socket,
    addr,
    kind: int,
    topic: str,
    seq: int,
    stamp_ns: int,
    payload=b"",
    drop: Optional[Callable[[int, int], bool]] = None,
) -> int:
    """Send one frame as chunks; returns the number of datagrams written.

    ``drop(seq, idx)`` is a fault-injection hook: chunks for which it returns
    True are skipped.
    """
    parts = [encode_header(kind, topic, seq, stamp_ns, len(payload)), payload]
    if kind == FrameKind.DATA and len(payload):
        count_copy(len(payload))
    sent = 0
    for idx, chunk in enumerate(iter_chunks(parts, seq)):
        if drop is not None and drop(seq, idx):
            continue
        try:
            sock.sendmsg(chunk, [], 0, addr)
        except (BlockingIOError, ConnectionRefusedError):
            continue
        sent += 1
    return sent


class Reassembler:
    """Rebuilds frames from chunks; at most ``max_inflight`` partial frames are kept.

    When a chunk for a new frame arrives and the buffer is full, the oldest
    partial frame is discarded and counted in ``discarded``. There is no
    retransmission.
    """

    def __init__(self, max_inflight: int = 2):
        self.max_inflight = max_inflight
        self._partial: dict[int, list] = {}
        self.discarded = 0
        self.bad = 0
        self._done_upto = -1

    def feed(self, datagram) -> Optional[bytearray]:
        if len(datagram) < CHUNK_HEADER_SIZE:
            self.bad += 1
            return None
        magic, seq, idx, count, total = _CHUNK.unpack_from(datagram)
        if magic != CHUNK_MAGIC or idx >= count:
            self.bad += 1
            return None
        if seq <= self._done_upto:
            # Stale chunk for a frame already completed or given up on.
            return None
        entry = self._partial.get(seq)
        if entry is None:
            while len(self._partial) >= self.max_inflight:
                oldest = min(self._partial)
                del self._partial[oldest]
                self.discarded += 1
                self._done_upto = max(self._done_upto, oldest)
            if seq <= self._done_upto:
                return None
            entry = [bytearray(total), set(), count]
            self._partial[seq] = entry
        buf, seen, count = entry
        if idx in seen:
            return None
        start = idx * CHUNK_DATA
        data = memoryview(datagram)[CHUNK_HEADER_SIZE:]
        buf[start : start + len(data)] = data
        seen.add(idx)
        if len(seen) < count:
            return None
        del self._partial[seq]
        # Anything older than a completed frame can no longer finish in order.
        for old in [s for s in self._partial if s < seq]:
            del self._partial[old]
            self.discarded += 1
        self._done_upto = seq
        return buf

    def flush(self) -> int:
        """Give up on every partial frame; returns how many were discarded."""
        n = len(self._partial)
        self.discarded += n
        self._partial.clear()
        return n

    @property
    def pending(self) -> int:
        return len(self._partial)
