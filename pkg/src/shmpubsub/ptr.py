"""Reference-counted ownership of segment allocations, usable from any process.

A shared allocation is a control block followed by the payload, allocated
together::

    +0   strong count   u32 (atomic)
    +4   weak count     u32 (atomic)
    +8   payload size   u64
    +16  magic          u64
    +64  payload

The stored weak count carries one extra reference collectively owned by the
strong holders, the usual trick that makes "last strong drop" and "last weak
drop" race-free: the allocation is freed by whichever drop takes the stored
weak count to zero. :meth:`SharedHandle.weak_count` reports only real weak
handles.

Handles are Python objects naming a control-block offset. Dropping is
explicit (``drop()``, or leaving a ``with`` block); a handle that is garbage
collected while still live drops itself as a safety net.
"""

from __future__ import annotations

import struct

from . import _atomic
from .segment import Segment, SegmentCorruptError

CONTROL_BLOCK_SIZE = 64
CONTROL_BLOCK_ALIGN = 64
_CB_MAGIC = 0x4B434F4C42524843  # b"CHRBLOCK" read little-endian
_UNIQUE_MAGIC = 0x4B434F4C42514E55
_STRONG = 0
_WEAK = 4
_SIZE = 8
_MAGIC = 16
_MAX_COUNT = 0xFFFFFFFF
_HDR = struct.Struct("<IIQQ")


class CountOverflowError(OverflowError):
    pass


class HandleReleasedError(RuntimeError):
    """Operation on a handle that was dropped, released or converted."""


def _check_block(segment: Segment, cb: int) -> None:
    if __debug__:
        magic = struct.unpack_from("<Q", segment.mm, cb + _MAGIC)[0]
        if magic != _CB_MAGIC:
            raise SegmentCorruptError(f"no control block at offset {cb}")


def _destroy(segment: Segment, cb: int) -> None:
    # Payloads are plain bytes: destruction is a no-op, then drop the weak
    # reference the strong holders shared.
    if _atomic.fetch_add_u32(segment.mm, cb + _WEAK, -1) == 1:
        _free(segment, cb)


def _free(segment: Segment, cb: int) -> None:
    struct.pack_into("<Q", segment.mm, cb + _MAGIC, 0)
    segment.deallocate(cb)


class SharedHandle:
    """Owns one strong reference to a control block."""

    __slots__ = ("segment", "_cb", "__weakref__")

    def __init__(self, segment: Segment, cb_offset: int):
        """Adopt one already-counted strong reference at ``cb_offset``."""
        self.segment = segment
        self._cb = cb_offset

    @classmethod
    def adopt(cls, segment: Segment, cb_offset: int) -> "SharedHandle":
        _check_block(segment, cb_offset)
        return cls(segment, cb_offset)

    @property
    def live(self) -> bool:
        return self._cb is not None

    @property
    def offset(self) -> int:
        """Segment offset of the control block."""
        if self._cb is None:
            raise HandleReleasedError("handle is no longer live")
        return self._cb

    @property
    def payload_offset(self) -> int:
        return self.offset + CONTROL_BLOCK_SIZE

    @property
    def payload_size(self) -> int:
        return struct.unpack_from("<Q", self.segment.mm, self.offset + _SIZE)[0]

    @property
    def payload(self) -> memoryview:
        """Writable view of the payload bytes, in place in the segment."""
        return self.segment.view(self.payload_offset, self.payload_size)

    @property
    def payload_address(self) -> int:
        return self.segment.address(self.payload_offset)

    def use_count(self) -> int:
        return _atomic.load_u32(self.segment.mm, self.offset + _STRONG)

    def weak_count(self) -> int:
        mm = self.segment.mm
        cb = self.offset
        stored = _atomic.load_u32(mm, cb + _WEAK)
        return stored - 1 if _atomic.load_u32(mm, cb + _STRONG) else stored

    def clone(self) -> "SharedHandle":
        cb = self.offset
        old = _atomic.fetch_add_u32(self.segment.mm, cb + _STRONG, 1)
        if old == _MAX_COUNT:
            _atomic.fetch_add_u32(self.segment.mm, cb + _STRONG, -1)
            raise CountOverflowError("strong count overflow")
        return SharedHandle(self.segment, cb)

    def drop(self) -> None:
        cb = self.offset
        self._cb = None
        if _atomic.fetch_add_u32(self.segment.mm, cb + _STRONG, -1) == 1:
            _destroy(self.segment, cb)

    def release(self) -> int:
        """Give up this handle without touching the count; returns the block offset.

        The caller becomes responsible for the strong reference (e.g. it now
        lives in a queue slot), to be re-adopted with :meth:`adopt`.
        """
        cb = self.offset
        self._cb = None
        return cb

    def downgrade(self) -> "WeakHandle":
        cb = self.offset
        old = _atomic.fetch_add_u32(self.segment.mm, cb + _WEAK, 1)
        if old == _MAX_COUNT:
            _atomic.fetch_add_u32(self.segment.mm, cb + _WEAK, -1)
            raise CountOverflowError("weak count overflow")
        return WeakHandle(self.segment, cb)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self._cb is not None:
            self.drop()

    def __del__(self):
        if self._cb is not None and not self.segment.closed:
            self.drop()

    def __eq__(self, other):
        if not isinstance(other, SharedHandle):
            return NotImplemented
        return self.segment is other.segment and self._cb == other._cb

    def __hash__(self):
        return hash((id(self.segment), self._cb))

    def __repr__(self):
        if self._cb is None:
            return "<SharedHandle released>"
        return f"<SharedHandle block={self._cb:#x} use_count={self.use_count()}>"


class WeakHandle:
    """Non-owning reference; :meth:`upgrade` yields a SharedHandle while one exists."""

    __slots__ = ("segment", "_cb")

    def __init__(self, segment: Segment, cb_offset: int):
        self.segment = segment
        self._cb = cb_offset

    @property
    def offset(self) -> int:
        if self._cb is None:
            raise HandleReleasedError("weak handle is no longer live")
        return self._cb

    def expired(self) -> bool:
        return _atomic.load_u32(self.segment.mm, self.offset + _STRONG) == 0

    def upgrade(self) -> SharedHandle | None:
        mm = self.segment.mm
        at = self.offset + _STRONG
        n = _atomic.load_u32(mm, at)
        while n:
            if n == _MAX_COUNT:
                raise CountOverflowError("strong count overflow")
            if _atomic.cas_u32(mm, at, n, n + 1):
                return SharedHandle(self.segment, self._cb)
            n = _atomic.load_u32(mm, at)
        return None

    def drop(self) -> None:
        cb = self.offset
        self._cb = None
        if _atomic.fetch_add_u32(self.segment.mm, cb + _WEAK, -1) == 1:
            _free(self.segment, cb)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self._cb is not None:
            self.drop()

    def __del__(self):
        if self._cb is not None and not self.segment.closed:
            self.drop()


class UniqueHandle:
    """Sole owner of an allocation; dropping frees it immediately.

    The allocation reserves control-block space up front (counts unused), so
    :meth:`into_shared` converts in place without copying the payload.
    """

    __slots__ = ("segment", "_cb")

    def __init__(self, segment: Segment, cb_offset: int):
        self.segment = segment
        self._cb = cb_offset

    @property
    def offset(self) -> int:
        if self._cb is None:
            raise HandleReleasedError("unique handle is no longer live")
        return self._cb

    @property
    def payload_offset(self) -> int:
        return self.offset + CONTROL_BLOCK_SIZE

    @property
    def payload_size(self) -> int:
        return struct.unpack_from("<Q", self.segment.mm, self.offset + _SIZE)[0]

    @property
    def payload(self) -> memoryview:
        return self.segment.view(self.payload_offset, self.payload_size)

    def into_shared(self) -> SharedHandle:
        cb = self.offset
        self._cb = None
        _HDR.pack_into(self.segment.mm, cb, 1, 1, self._size_at(cb), _CB_MAGIC)
        return SharedHandle(self.segment, cb)

    def drop(self) -> None:
        cb = self.offset
        self._cb = None
        struct.pack_into("<Q", self.segment.mm, cb + _MAGIC, 0)
        self.segment.deallocate(cb)

    def _size_at(self, cb: int) -> int:
        return struct.unpack_from("<Q", self.segment.mm, cb + _SIZE)[0]

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self._cb is not None:
            self.drop()

    def __del__(self):
        if self._cb is not None and not self.segment.closed:
            self.drop()


def make_shared(segment: Segment, payload_size: int) -> SharedHandle:
    """Allocate control block + zeroed payload in one block; use_count starts at 1."""
    cb = segment.allocate(CONTROL_BLOCK_SIZE + payload_size, CONTROL_BLOCK_ALIGN)
    _HDR.pack_into(segment.mm, cb, 1, 1, payload_size, _CB_MAGIC)
    return SharedHandle(segment, cb)


def make_unique(segment: Segment, payload_size: int) -> UniqueHandle:
    cb = segment.allocate(CONTROL_BLOCK_SIZE + payload_size, CONTROL_BLOCK_ALIGN)
    _HDR.pack_into(segment.mm, cb, 0, 0, payload_size, _UNIQUE_MAGIC)
    return UniqueHandle(segment, cb)


def strong_count_at(segment: Segment, cb_offset: int) -> int:
    """Current strong count of the block at ``cb_offset`` (diagnostics)."""
    return _atomic.load_u32(segment.mm, cb_offset + _STRONG)


# Handles persisted inside the segment are RelativeRef cells (8 bytes) that
# own one strong reference each.

def store_shared(segment: Segment, cell: int, handle: SharedHandle) -> None:
    """Move ``handle`` into the 8-byte cell at ``cell`` (the cell must be null)."""
    if segment.load_ref(cell) is not None:
        raise ValueError(f"cell {cell} already holds a handle")
    segment.store_ref(cell, handle.release())


def load_shared(segment: Segment, cell: int) -> SharedHandle | None:
    """New strong handle to the block referenced from ``cell``; the cell keeps its own."""
    cb = segment.load_ref(cell)
    if cb is None:
        return None
    _check_block(segment, cb)
    borrowed = SharedHandle(segment, cb)
    try:
        return borrowed.clone()
    finally:
        borrowed.release()


def take_shared(segment: Segment, cell: int) -> SharedHandle | None:
    """Move the handle out of ``cell`` and leave the cell null."""
    cb = segment.load_ref(cell)
    if cb is None:
        return None
    segment.store_ref(cell, None)
    return SharedHandle.adopt(segment, cb)
