"""Bounded FIFO of shared handles, living in a segment and usable from any process.

The queue is registered by name in the segment's registry so that another
process can attach with :meth:`ShmQueue.open`. Each slot holds the segment
offset of a control block plus a caller-supplied 8-byte tag. A slot owns one
strong reference: ``push`` moves the caller's reference into the slot and
``pop`` hands it to the consumer, so a push/pop pair leaves the count where
it was.

State, all under the queue's own InterProcessLock::

    +0    magic u32, capacity u32
    +8    head, tail, length        u64 x 3
    +32   closed u32, policy u32
    +40   drops, pushes, pops       u64 x 3
    +64   attach count u32 (atomic)
    +128  lock
    +192  not_empty event
    +256  not_full event
    +320  name (64 bytes)
    +384  ring of capacity x (offset u64, tag u64)

Push and pop run in the ``_ring`` extension (lock, wait, slot, unlock,
signal in one call with the GIL released); the rest is plain Python on the
same layout.
"""

from __future__ import annotations

import enum
import struct
from typing import NamedTuple

from . import _atomic, _ring
from .ptr import CountOverflowError, SharedHandle
from .segment import RegistryError, Segment
from .sync import InterProcessEvent, InterProcessLock, deadline_after

DEFAULT_CAPACITY = 16
QUEUE_KIND = 0x51

_MAGIC = 0x51534D48  # "HMSQ"
_LOCK = 128
_NOT_EMPTY = 192
_NOT_FULL = 256
_NAME = 320
_RING = 384
_SLOT = 16
_REFS = 64

_HEAD = struct.Struct("<IIQQQIIQQQ")  # magic .. pops: 64 bytes
_U64x3 = struct.Struct("<QQQ")
_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")


class FullPolicy(enum.IntEnum):
    BLOCK = 0
    DROP_NEWEST = 1


class QueueError(Exception):
    pass


class QueueTimeout(QueueError, TimeoutError):
    pass


class QueueClosed(QueueError):
    pass


class QueueItem(NamedTuple):
    handle: SharedHandle
    tag: int


class ShmQueue:
    __slots__ = ("segment", "offset", "name", "capacity", "_lock", "_not_empty", "_not_full", "_attached")

    def __init__(self, segment: Segment, offset: int, name: str):
        self.segment = segment
        self.offset = offset
        self.name = name
        magic, self.capacity = struct.unpack_from("<II", segment.mm, offset)
        if magic != _MAGIC:
            raise QueueError(f"no queue at offset {offset}")
        self._lock = InterProcessLock(segment, offset + _LOCK)
        self._not_empty = InterProcessEvent(segment, offset + _NOT_EMPTY)
        self._not_full = InterProcessEvent(segment, offset + _NOT_FULL)
        self._attached = True

    @classmethod
    def create(
        cls,
        segment: Segment,
        name: str,
        capacity: int = DEFAULT_CAPACITY,
        policy: FullPolicy = FullPolicy.BLOCK,
    ) -> "ShmQueue":
        if capacity < 1:
            raise ValueError("queue capacity must be at least 1")
        raw = name.encode()
        if not raw or len(raw) > 64:
            raise ValueError(f"queue name must be 1..64 bytes: {name!r}")
        off = segment.allocate(_RING + capacity * _SLOT, 64)
        mm = segment.mm
        _HEAD.pack_into(mm, off, 0, capacity, 0, 0, 0, 0, int(policy), 0, 0, 0)
        _U32.pack_into(mm, off + _REFS, 1)
        mm[off + _NAME : off + _NAME + len(raw)] = raw
        InterProcessLock.initialize(segment, off + _LOCK)
        InterProcessEvent.initialize(segment, off + _NOT_EMPTY)
        InterProcessEvent.initialize(segment, off + _NOT_FULL)
        _U32.pack_into(mm, off, _MAGIC)
        try:
            segment.register(name, off, QUEUE_KIND)
        except BaseException:
            segment.deallocate(off)
            raise
        return cls(segment, off, name)

    @classmethod
    def open(cls, segment: Segment, name: str) -> "ShmQueue":
        try:
            off, kind = segment.lookup(name)
        except RegistryError:
            raise QueueError(f"no queue named {name!r}") from None
        if kind != QUEUE_KIND:
            raise QueueError(f"{name!r} is not a queue")
        q = cls(segment, off, name)
        _atomic.fetch_add_u32(segment.mm, off + _REFS, 1)
        return q

    # ------------------------------------------------------------------

    def push(self, item: SharedHandle, timeout: float | None = None, tag: int = 0) -> bool:
        """Move ``item`` into the queue.

        Returns True once the queue has taken ``item``. Under DROP_NEWEST a full
        queue discards it (its reference is dropped, ``drops`` goes up) and
        still returns True. Raises QueueTimeout or QueueClosed otherwise; in
        those cases the caller keeps ``item``.
        """
        if item.segment is not self.segment:
            raise QueueError("item lives in a different segment")
        deadline = deadline_after(timeout)
        cb = item.release()
        try:
            status = _ring.push(self.segment.mm, self.offset, cb, tag, -1 if deadline is None else deadline, False)
        except BaseException:
            item._cb = cb
            raise
        if status == _ring.OK:
            return True
        if status == _ring.DROPPED:
            SharedHandle(self.segment, cb).drop()
            return True
        item._cb = cb
        self._raise(status)

    def push_clone(self, item: SharedHandle, timeout: float | None = None, tag: int = 0) -> bool:
        """Push a new strong reference to ``item``; the caller keeps its own.

        Same as ``push(item.clone(), ...)`` but the count is only raised once
        the slot is written, so nothing needs undoing on drop, timeout or close.
        """
        if item.segment is not self.segment:
            raise QueueError("item lives in a different segment")
        deadline = deadline_after(timeout)
        status = _ring.push(self.segment.mm, self.offset, item.offset, tag, -1 if deadline is None else deadline, True)
        if status in (_ring.OK, _ring.DROPPED):
            return True
        self._raise(status)

    def pop_item(self, timeout: float | None = None) -> QueueItem:
        deadline = deadline_after(timeout)
        status, cb, tag = _ring.pop(self.segment.mm, self.offset, -1 if deadline is None else deadline)
        if status != _ring.OK:
            self._raise(status)
        return QueueItem(SharedHandle.adopt(self.segment, cb), tag)

    def _raise(self, status: int):
        if status == _ring.CLOSED:
            raise QueueClosed(self.name)
        if status == _ring.TIMEOUT:
            raise QueueTimeout(self.name)
        if status == _ring.OVERFLOW:
            raise CountOverflowError("strong count overflow")
        raise QueueError(f"unexpected queue status {status}")

    def pop(self, timeout: float | None = None) -> SharedHandle:
        """Remove the oldest item and take over its reference."""
        return self.pop_item(timeout).handle

    def close(self) -> int:
        """Mark closed, wake every waiter and drop any queued items.

        Returns how many queued items were discarded. Idempotent.
        """
        mm = self.segment.mm
        off = self.offset
        drained = []
        with self._lock:
            if _U32.unpack_from(mm, off + 32)[0]:
                return 0
            _U32.pack_into(mm, off + 32, 1)
            head, tail, length = _U64x3.unpack_from(mm, off + 8)
            for i in range(length):
                drained.append(_U64.unpack_from(mm, off + _RING + ((head + i) % self.capacity) * _SLOT)[0])
            _U64x3.pack_into(mm, off + 8, tail, tail, 0)
            self._not_empty.notify_all()
            self._not_full.notify_all()
        for cb in drained:
            SharedHandle.adopt(self.segment, cb).drop()
        return len(drained)

    def detach(self) -> None:
        """Stop using the queue; the last detaching process frees it."""
        if not self._attached:
            return
        self._attached = False
        if _atomic.fetch_add_u32(self.segment.mm, self.offset + _REFS, -1) == 1:
            self.close()
            self.segment.unregister(self.name)
            _U32.pack_into(self.segment.mm, self.offset, 0)
            self.segment.deallocate(self.offset)

    # ------------------------------------------------------------------

    def __len__(self) -> int:
        with self._lock:
            return _U64.unpack_from(self.segment.mm, self.offset + 24)[0]

    @property
    def closed(self) -> bool:
        return bool(_U32.unpack_from(self.segment.mm, self.offset + 32)[0])

    @property
    def policy(self) -> FullPolicy:
        return FullPolicy(_U32.unpack_from(self.segment.mm, self.offset + 36)[0])

    @property
    def drops(self) -> int:
        return _U64.unpack_from(self.segment.mm, self.offset + 40)[0]

    @property
    def attach_count(self) -> int:
        return _atomic.load_u32(self.segment.mm, self.offset + _REFS)

    def counters(self) -> dict:
        with self._lock:
            drops, pushes, pops = _U64x3.unpack_from(self.segment.mm, self.offset + 40)
        return {"drops": drops, "pushes": pushes, "pops": pops}

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.detach()

    def __repr__(self):
        return f"<ShmQueue {self.name!r} capacity={self.capacity}>"


def queue_create(segment: Segment, name: str, capacity: int = DEFAULT_CAPACITY, **kw) -> ShmQueue:
    return ShmQueue.create(segment, name, capacity, **kw)


def queue_open(segment: Segment, name: str) -> ShmQueue:
    return ShmQueue.open(segment, name)
