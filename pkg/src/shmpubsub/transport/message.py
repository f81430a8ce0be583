"""Message types shared by every transport."""

from __future__ import annotations

import enum
import struct
import time
from dataclasses import dataclass, field
from typing import Any, Optional

from ..ptr import SharedHandle, make_shared
from ..segment import Segment

# Images in a segment start with [seq u64][stamp_ns u64], padded to one cache line.
IMAGE_HEADER = 64
_SEQ_STAMP = struct.Struct("<QQ")


class TransportKind(enum.Enum):
    SHM = "shm"
    TCP = "tcp"
    UDS = "uds"
    UDP = "udp"
    HYBRID = "hybrid"

    @classmethod
    def parse(cls, value) -> "TransportKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown transport {value!r}") from None

    @property
    def in_segment(self) -> bool:
        return self in (TransportKind.SHM, TransportKind.HYBRID)

    @property
    def code(self) -> int:
        return list(TransportKind).index(self) + 1

    @classmethod
    def from_code(cls, code: int) -> "TransportKind":
        return list(cls)[code - 1]


@dataclass
class ImageMessage:
    seq: int
    payload: Any
    stamp_ns: int = 0


class LoanedImage:
    """An image whose bytes live in a segment, owned through a SharedHandle.

    The publisher fills ``data`` in place; ``publish`` writes seq and stamp
    into the header and hands clones of the handle to subscribers.
    """

    __slots__ = ("handle", "size")

    def __init__(self, handle: SharedHandle):
        self.handle = handle
        self.size = handle.payload_size - IMAGE_HEADER

    @classmethod
    def allocate(cls, segment: Segment, size: int) -> "LoanedImage":
        return cls(make_shared(segment, IMAGE_HEADER + size))

    @property
    def data(self) -> memoryview:
        return self.handle.payload[IMAGE_HEADER:]

    @property
    def data_offset(self) -> int:
        return self.handle.payload_offset + IMAGE_HEADER

    @property
    def in_use(self) -> bool:
        """True while some subscriber still holds a reference."""
        return self.handle.use_count() > 1

    def stamp(self, seq: int) -> int:
        now = time.monotonic_ns()
        _SEQ_STAMP.pack_into(self.handle.payload, 0, seq, now)
        return now

    def drop(self) -> None:
        self.handle.drop()


def read_image_header(handle: SharedHandle) -> tuple[int, int]:
    return _SEQ_STAMP.unpack_from(handle.payload, 0)


@dataclass
class Delivery:
    """One message as handed to the subscribing application.

    ``payload`` is a view into the segment for SHM and HYBRID (``handle``
    then owns one strong count until ``release``), or a private buffer for
    socket transports.
    """

    topic: str
    publisher_id: str
    seq: int
    stamp_ns: int
    recv_ns: int
    payload: Any
    handle: Optional[SharedHandle] = None
    data_offset: int = -1
    extra: dict = field(default_factory=dict)

    @property
    def latency_ns(self) -> int:
        return self.recv_ns - self.stamp_ns

    def release(self) -> None:
        if self.handle is not None:
            self.payload = None
            if self.handle.live:
                self.handle.drop()
            self.handle = None
