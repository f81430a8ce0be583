"""Named shared-memory segments, the in-segment allocator and relative references.

A segment is a file under ``/dev/shm`` mapped with ``mmap``. Every process maps
it at whatever base address the kernel picks, so nothing inside the segment
ever stores an absolute address: structures refer to each other either by
segment offset or by a self-relative delta (see :class:`RelativeRef`).

Layout (all integers little-endian)::

    0      header (magic, version, sizes, offsets, creator liveness token)
    64     global InterProcessLock
    128    allocator state
    256    name registry, REGISTRY_ENTRIES x 80 bytes
    24576  allocatable region, tiled by blocks

Each block starts with a 16-byte header ``(size | flags, canary)``. Free blocks
additionally hold ``next``/``prev`` free-list links and a trailing size word
(the boundary tag), which lets ``deallocate`` coalesce with both neighbours in
constant time. The free list is kept in address order and searched first-fit.
"""

from __future__ import annotations

import ctypes
import logging
import mmap
import os
import re
import struct
from dataclasses import dataclass

from . import _atomic
from .sync import InterProcessLock

log = logging.getLogger(__name__)

SHM_DIR = "/dev/shm"

MAGIC = 0x315F4D48535F4250  # b"PB_SHM_1" read little-endian
VERSION = 1
HEADER_SIZE = 128
MIN_SEGMENT_SIZE = 1 << 20
DEFAULT_SEGMENT_SIZE = 1 << 30

GLOBAL_LOCK_OFFSET = 64
ALLOC_STATE_OFFSET = 128
REGISTRY_OFFSET = 256
REGISTRY_ENTRIES = 256
REGISTRY_ENTRY_SIZE = 80
REGISTRY_NAME_MAX = 64
REGION_OFFSET = 24576

NULL_REF = 1
ALIGNMENTS = frozenset({8, 16, 32, 64, 128, 4096})

BLOCK_HEADER_SIZE = 16
MIN_BLOCK_SIZE = 48
_ALLOCATED = 0x1
_PREV_ALLOCATED = 0x2
_FLAGS = 0xF
_ALLOC_CANARY = 0xA110CA7EDB10C000
_FREE_CANARY = 0xF4EEB10CF4EEB10C

_NAME_RE = re.compile(r"[A-Za-z0-9_.-]{1,64}")

_HEADER = struct.Struct("<QIIQQQQQQ")
_ALLOC_STATE = struct.Struct("<QQQQQQQQ")
# free, live, high watermark, total allocations, total frees. Rewritten on
# every allocate/free; pack_into zero-fills before writing, so the fixed
# fields in front of these must never be repacked while other processes run.
_ALLOC_COUNTERS = struct.Struct("<QQQQQ")
_COUNTERS_OFFSET = ALLOC_STATE_OFFSET + 24
_REG_ENTRY = struct.Struct("<64sQII")
_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_U64x2 = struct.Struct("<QQ")

# Field offsets inside the allocator state.
_REGION_START = ALLOC_STATE_OFFSET + 0
_REGION_END = ALLOC_STATE_OFFSET + 8
_FREE_HEAD = ALLOC_STATE_OFFSET + 16
_FREE_BYTES = ALLOC_STATE_OFFSET + 24
_LIVE = ALLOC_STATE_OFFSET + 32
_HIGH_WATER = ALLOC_STATE_OFFSET + 40
_TOTAL_ALLOCS = ALLOC_STATE_OFFSET + 48
_TOTAL_FREES = ALLOC_STATE_OFFSET + 56


class SegmentError(Exception):
    pass


class SegmentExistsError(SegmentError, FileExistsError):
    pass


class SegmentNotFoundError(SegmentError, FileNotFoundError):
    pass


class SegmentCorruptError(SegmentError):
    pass


class SegmentVersionError(SegmentCorruptError):
    pass


class OutOfSegmentMemory(SegmentError, MemoryError):
    pass


class InvalidFreeError(SegmentError):
    """Double free, or an offset that was never returned by allocate."""


class RegistryError(SegmentError, KeyError):
    pass


@dataclass(frozen=True)
class AllocStats:
    total_bytes: int
    free_bytes: int
    live_allocations: int
    high_watermark: int
    total_allocations: int = 0
    total_frees: int = 0


@dataclass(frozen=True)
class RelativeRef:
    """Byte delta from the address of the cell holding it to its target.

    ``NULL_REF`` (1) is the null reference; it can never be a real delta
    because every target is at least 8-byte aligned. A delta of 0 points
    at the cell itself.
    """

    delta: int

    @classmethod
    def null(cls) -> "RelativeRef":
        return cls(NULL_REF)

    @classmethod
    def between(cls, cell: int, target: int | None) -> "RelativeRef":
        return cls(make_relative(cell, target))

    @property
    def is_null(self) -> bool:
        return self.delta == NULL_REF

    def resolve(self, cell_address: int) -> int | None:
        return resolve(self.delta, cell_address)


def make_relative(cell: int, target: int | None) -> int:
    """Delta stored at ``cell`` so that it refers to ``target``.

    ``cell`` and ``target`` must be in the same coordinate system (both
    segment offsets or both local addresses).
    """
    if target is None:
        return NULL_REF
    delta = target - cell
    if delta == NULL_REF:
        raise ValueError("target address is not 8-byte aligned relative to its cell")
    return delta


def resolve(delta: int, cell_address: int, segment: "Segment | None" = None) -> int | None:
    """Local address targeted by ``delta`` stored at ``cell_address``."""
    if delta == NULL_REF:
        return None
    target = cell_address + delta
    if __debug__ and segment is not None:
        if not segment.base <= target < segment.base + segment.size:
            raise SegmentCorruptError(
                f"relative reference resolves outside segment {segment.name!r}"
            )
    return target


def _round_up(n: int, a: int) -> int:
    return (n + a - 1) & ~(a - 1)


def _process_start_ticks(pid: int) -> int | None:
    try:
        with open(f"/proc/{pid}/stat", "rb") as f:
            stat = f.read()
    except OSError:
        return None
    # comm may contain spaces; fields resume after the closing paren.
    fields = stat[stat.rindex(b")") + 2 :].split()
    return int(fields[19])


def _check_name(name: str) -> None:
    if not isinstance(name, str) or not _NAME_RE.fullmatch(name):
        raise ValueError(f"invalid segment name {name!r}: must match [A-Za-z0-9_.-]{{1,64}}")


def segment_path(name: str) -> str:
    _check_name(name)
    return os.path.join(SHM_DIR, name)


class Segment:
    """A mapped shared-memory segment.

    Use :meth:`create` in exactly one process and :meth:`open` everywhere else.
    The mapping base differs between processes; convert between segment
    offsets and local addresses with :meth:`address` and :meth:`offset_of`.
    """

    def __init__(self, name: str, fd: int, mm: mmap.mmap, owner: bool):
        self.name = name
        self.size = len(mm)
        self.owner = owner
        self.closed = False
        self._fd = fd
        self.mm = mm
        self._cbuf = (ctypes.c_char * self.size).from_buffer(mm)
        self.base = ctypes.addressof(self._cbuf)
        self.lock = InterProcessLock(self, GLOBAL_LOCK_OFFSET)

    # ------------------------------------------------------------------
    # lifecycle

    @classmethod
    def create(cls, name: str, size: int = DEFAULT_SEGMENT_SIZE, force: bool = False) -> "Segment":
        path = segment_path(name)
        if size < MIN_SEGMENT_SIZE:
            raise SegmentError(f"segment size {size} below minimum {MIN_SEGMENT_SIZE}")
        st = os.statvfs(SHM_DIR)
        if size > st.f_bavail * st.f_frsize:
            raise SegmentError(
                f"insufficient shared memory: {size} bytes requested, "
                f"{st.f_bavail * st.f_frsize} available under {SHM_DIR}"
            )
        flags = os.O_RDWR | os.O_CREAT | os.O_EXCL
        try:
            fd = os.open(path, flags, 0o600)
        except FileExistsError:
            if not force:
                hint = " (stale: creator is gone)" if is_stale(name) else ""
                raise SegmentExistsError(f"segment {name!r} already exists{hint}") from None
            log.warning("force-recreating segment %r", name)
            os.unlink(path)
            fd = os.open(path, flags, 0o600)
        try:
            os.ftruncate(fd, size)
            mm = mmap.mmap(fd, size)
        except BaseException:
            os.close(fd)
            os.unlink(path)
            raise
        seg = cls(name, fd, mm, owner=True)
        seg._format()
        return seg

    @classmethod
    def open(cls, name: str) -> "Segment":
        path = segment_path(name)
        try:
            fd = os.open(path, os.O_RDWR)
        except FileNotFoundError:
            raise SegmentNotFoundError(f"no segment named {name!r}") from None
        try:
            size = os.fstat(fd).st_size
            if size < REGION_OFFSET:
                raise SegmentCorruptError(f"segment {name!r} too small ({size} bytes)")
            mm = mmap.mmap(fd, size)
        except BaseException:
            os.close(fd)
            raise
        seg = cls(name, fd, mm, owner=False)
        try:
            seg._verify()
        except BaseException:
            seg.close()
            raise
        return seg

    def _format(self) -> None:
        mm = self.mm
        region_start = REGION_OFFSET
        region_end = self.size & ~0xF
        self.lock.initialize(self, GLOBAL_LOCK_OFFSET)
        _ALLOC_STATE.pack_into(
            mm, ALLOC_STATE_OFFSET,
            region_start, region_end, region_start, region_end - region_start, 0, 0, 0, 0,
        )
        self._make_free(region_start, region_end - region_start, prev_allocated=True)
        _U64x2.pack_into(mm, region_start + BLOCK_HEADER_SIZE, 0, 0)
        pid = os.getpid()
        _HEADER.pack_into(
            mm, 0, 0, VERSION, HEADER_SIZE, self.size, ALLOC_STATE_OFFSET,
            REGISTRY_OFFSET, pid, _process_start_ticks(pid) or 0, 0,
        )
        # Magic goes in last so a concurrent opener never sees a half-built header.
        _atomic.store_u64(mm, 0, MAGIC)

    def _verify(self) -> None:
        magic, version, header_size, total, alloc_off, reg_off, _, _, _ = _HEADER.unpack_from(self.mm, 0)
        if magic != MAGIC:
            raise SegmentCorruptError(f"segment {self.name!r}: bad magic {magic:#x}")
        if version != VERSION:
            raise SegmentVersionError(
                f"segment {self.name!r}: version {version}, expected {VERSION}"
            )
        if total != self.size or header_size != HEADER_SIZE:
            raise SegmentCorruptError(f"segment {self.name!r}: header size fields disagree")
        for off in (alloc_off, reg_off):
            if not HEADER_SIZE <= off < total:
                raise SegmentCorruptError(f"segment {self.name!r}: offset {off} out of range")

    def close(self) -> None:
        """Unmap from this process. Outstanding payload views keep the mapping alive."""
        if self.closed:
            return
        self.closed = True
        self.lock = None
        del self._cbuf
        try:
            self.mm.close()
        except BufferError:
            log.debug("segment %r still has exported views; leaving mapping to GC", self.name)
        os.close(self._fd)

    def unlink(self) -> None:
        try:
            os.unlink(os.path.join(SHM_DIR, self.name))
        except FileNotFoundError:
            pass

    def destroy(self) -> None:
        self.close()
        self.unlink()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self.owner:
            self.destroy()
        else:
            self.close()

    def __repr__(self):
        state = "closed" if self.closed else f"base={self.base:#x}"
        return f"<Segment {self.name!r} size={self.size} {state}>"

    @property
    def creator_pid(self) -> int:
        return _HEADER.unpack_from(self.mm, 0)[6]

    # ------------------------------------------------------------------
    # raw access

    def address(self, offset: int) -> int:
        if __debug__ and not 0 <= offset < self.size:
            raise IndexError(f"offset {offset} outside segment {self.name!r}")
        return self.base + offset

    def offset_of(self, address: int) -> int:
        off = address - self.base
        if not 0 <= off < self.size:
            raise IndexError(f"address {address:#x} outside segment {self.name!r}")
        return off

    def view(self, offset: int, size: int) -> memoryview:
        if not (0 <= offset and offset + size <= self.size):
            raise IndexError(f"view [{offset}, {offset + size}) outside segment")
        return memoryview(self.mm)[offset : offset + size]

    def read_u64(self, offset: int) -> int:
        return _U64.unpack_from(self.mm, offset)[0]

    def write_u64(self, offset: int, value: int) -> None:
        _U64.pack_into(self.mm, offset, value)

    def zero(self, offset: int, size: int) -> None:
        ctypes.memset(self.base + offset, 0, size)

    # ------------------------------------------------------------------
    # relative references stored in the segment

    def store_ref(self, cell: int, target: int | None) -> None:
        """Write a RelativeRef at segment offset ``cell`` pointing at offset ``target``."""
        _I64.pack_into(self.mm, cell, make_relative(cell, target))

    def load_ref(self, cell: int) -> int | None:
        """Segment offset targeted by the RelativeRef at ``cell`` (None if null)."""
        addr = resolve(_I64.unpack_from(self.mm, cell)[0], self.base + cell, self)
        return None if addr is None else addr - self.base

    def resolve_ref(self, cell: int) -> int | None:
        """Local address targeted by the RelativeRef at ``cell``."""
        return resolve(_I64.unpack_from(self.mm, cell)[0], self.base + cell, self)

    # ------------------------------------------------------------------
    # allocator

    def allocate(self, size: int, align: int = 8) -> int:
        """Allocate a zeroed block and return the segment offset of its first byte."""
        if align not in ALIGNMENTS:
            raise ValueError(f"alignment {align} not in {sorted(ALIGNMENTS)}")
        if size < 0:
            raise ValueError("negative allocation size")
        need = max(MIN_BLOCK_SIZE, _round_up(size + BLOCK_HEADER_SIZE, 16))
        with self.lock:
            found = self._allocate_locked(need, align)
        if found is None:
            raise OutOfSegmentMemory(
                f"cannot allocate {size} bytes (align {align}) in segment {self.name!r}"
            )
        payload, block_size = found
        ctypes.memset(self.base + payload, 0, block_size - BLOCK_HEADER_SIZE)
        return payload

    def deallocate(self, offset: int) -> None:
        mm = self.mm
        start = offset - BLOCK_HEADER_SIZE
        with self.lock:
            region_start, region_end = _U64x2.unpack_from(mm, _REGION_START)
            if not region_start <= start < region_end or start & 0xF:
                raise InvalidFreeError(f"offset {offset} is not an allocated block")
            word, canary = _U64x2.unpack_from(mm, start)
            if canary != _ALLOC_CANARY ^ start or not word & _ALLOCATED:
                raise InvalidFreeError(f"double free or foreign offset {offset}")
            self._deallocate_locked(start, word, region_end)

    def stats(self) -> AllocStats:
        with self.lock:
            rs, re_, _, free, live, hw, ta, tf = _ALLOC_STATE.unpack_from(self.mm, ALLOC_STATE_OFFSET)
        return AllocStats(re_ - rs, free, live, hw, ta, tf)

    @property
    def free_bytes(self) -> int:
        return self.stats().free_bytes

    def block_size(self, offset: int) -> int:
        """Total size (header included) of the live block at ``offset``."""
        return self._size(offset - BLOCK_HEADER_SIZE)

    def heap_blocks(self) -> list[tuple[int, int, bool]]:
        """Walk the region: ``(block_start, size, allocated)`` for every block.

        Raises SegmentCorruptError if the blocks do not tile the region exactly
        or the free list disagrees with the block flags.
        """
        mm = self.mm
        with self.lock:
            rs, re_, head = _ALLOC_STATE.unpack_from(mm, ALLOC_STATE_OFFSET)[:3]
            blocks = []
            a = rs
            prev_alloc = True
            while a < re_:
                word = _U64.unpack_from(mm, a)[0]
                size = word & ~_FLAGS
                if size < MIN_BLOCK_SIZE or a + size > re_:
                    raise SegmentCorruptError(f"bad block size {size} at {a}")
                if bool(word & _PREV_ALLOCATED) != prev_alloc:
                    raise SegmentCorruptError(f"stale prev-allocated bit at {a}")
                allocated = bool(word & _ALLOCATED)
                if not allocated and not prev_alloc:
                    raise SegmentCorruptError(f"uncoalesced free blocks at {a}")
                blocks.append((a, size, allocated))
                prev_alloc = allocated
                a += size
            if a != re_:
                raise SegmentCorruptError("blocks do not tile the region")
            listed = []
            b = head
            while b:
                listed.append(b)
                b = self._next(b)
        free_blocks = [a for a, _, allocated in blocks if not allocated]
        if listed != free_blocks:
            raise SegmentCorruptError("free list out of sync with block flags")
        return blocks

    def _size(self, block: int) -> int:
        return _U64.unpack_from(self.mm, block)[0] & ~_FLAGS

    def _next(self, block: int) -> int:
        return _U64.unpack_from(self.mm, block + 16)[0]

    def _make_free(self, block: int, size: int, prev_allocated: bool) -> None:
        mm = self.mm
        word = size | (_PREV_ALLOCATED if prev_allocated else 0)
        _U64x2.pack_into(mm, block, word, _FREE_CANARY ^ block)
        _U64.pack_into(mm, block + size - 8, size)

    def _link(self, prev: int, block: int, nxt: int) -> None:
        mm = self.mm
        _U64x2.pack_into(mm, block + 16, nxt, prev)
        if prev:
            _U64.pack_into(mm, prev + 16, block)
        else:
            _U64.pack_into(mm, _FREE_HEAD, block)
        if nxt:
            _U64.pack_into(mm, nxt + 24, block)

    def _unlink(self, block: int) -> tuple[int, int]:
        mm = self.mm
        nxt, prev = _U64x2.unpack_from(mm, block + 16)
        if prev:
            _U64.pack_into(mm, prev + 16, nxt)
        else:
            _U64.pack_into(mm, _FREE_HEAD, nxt)
        if nxt:
            _U64.pack_into(mm, nxt + 24, prev)
        return prev, nxt

    def _set_prev_allocated(self, block: int, region_end: int, value: bool) -> None:
        if block >= region_end:
            return
        word = _U64.unpack_from(self.mm, block)[0]
        word = (word | _PREV_ALLOCATED) if value else (word & ~_PREV_ALLOCATED)
        _U64.pack_into(self.mm, block, word)

    def _allocate_locked(self, need: int, align: int):
        mm = self.mm
        region_end = _U64.unpack_from(mm, _REGION_END)[0]
        b = _U64.unpack_from(mm, _FREE_HEAD)[0]
        while b:
            word = _U64.unpack_from(mm, b)[0]
            bsize = word & ~_FLAGS
            a = _round_up(b + BLOCK_HEADER_SIZE, align) - BLOCK_HEADER_SIZE
            if a != b and a - b < MIN_BLOCK_SIZE:
                a = _round_up(b + BLOCK_HEADER_SIZE + MIN_BLOCK_SIZE, align) - BLOCK_HEADER_SIZE
            if a + need <= b + bsize:
                break
            b = _U64.unpack_from(mm, b + 16)[0]
        else:
            return None

        end = b + bsize
        gap = a - b
        rest = end - (a + need)
        if rest < MIN_BLOCK_SIZE:
            need += rest
            rest = 0
        prev, nxt = self._unlink(b)
        if gap:
            self._make_free(b, gap, prev_allocated=bool(word & _PREV_ALLOCATED))
            self._link(prev, b, nxt)
            prev = b
        if rest:
            self._make_free(a + need, rest, prev_allocated=True)
            self._link(prev, a + need, nxt)
        else:
            self._set_prev_allocated(end, region_end, True)
        own_prev = _PREV_ALLOCATED if (not gap and word & _PREV_ALLOCATED) else 0
        _U64x2.pack_into(mm, a, need | _ALLOCATED | own_prev, _ALLOC_CANARY ^ a)

        rs, re_, _, free, live, hw, ta, tf = _ALLOC_STATE.unpack_from(mm, ALLOC_STATE_OFFSET)
        free -= need
        hw = max(hw, (re_ - rs) - free)
        _ALLOC_COUNTERS.pack_into(mm, _COUNTERS_OFFSET, free, live + 1, hw, ta + 1, tf)
        return a + BLOCK_HEADER_SIZE, need

    def _deallocate_locked(self, start: int, word: int, region_end: int) -> None:
        mm = self.mm
        size = word & ~_FLAGS
        freed = size
        total = size
        block = start
        nxt_block = start + size
        prev = nxt = None

        if nxt_block < region_end:
            nword = _U64.unpack_from(mm, nxt_block)[0]
            if not nword & _ALLOCATED:
                prev, nxt = self._unlink(nxt_block)
                total += nword & ~_FLAGS
                _U64.pack_into(mm, nxt_block + 8, 0)

        # Kill the canary so a second free of this offset is caught.
        _U64.pack_into(mm, start + 8, 0)
        if not word & _PREV_ALLOCATED:
            psize = _U64.unpack_from(mm, start - 8)[0]
            block = start - psize
            pword = _U64.unpack_from(mm, block)[0]
            total += psize
            self._make_free(block, total, prev_allocated=bool(pword & _PREV_ALLOCATED))
        else:
            self._make_free(block, total, prev_allocated=True)
            if prev is None:
                # No free neighbour: find the address-ordered insertion point.
                prev, f = 0, _U64.unpack_from(mm, _FREE_HEAD)[0]
                while f and f < block:
                    prev, f = f, self._next(f)
                nxt = f
            self._link(prev, block, nxt)
        self._set_prev_allocated(block + total, region_end, False)

        free, live, hw, ta, tf = _ALLOC_COUNTERS.unpack_from(mm, _COUNTERS_OFFSET)
        _ALLOC_COUNTERS.pack_into(mm, _COUNTERS_OFFSET, free + freed, live - 1, hw, ta, tf + 1)

    # ------------------------------------------------------------------
    # name registry

    def register(self, name: str, offset: int, kind: int = 0) -> None:
        raw = self._registry_key(name)
        with self.lock:
            empty = None
            for i in range(REGISTRY_ENTRIES):
                at = REGISTRY_OFFSET + i * REGISTRY_ENTRY_SIZE
                key = bytes(self.mm[at : at + REGISTRY_NAME_MAX])
                if key == raw:
                    raise RegistryError(f"name {name!r} already registered")
                if empty is None and key[0] == 0:
                    empty = at
            if empty is None:
                raise SegmentError("segment name registry is full")
            _REG_ENTRY.pack_into(self.mm, empty, raw, offset, kind, 0)

    def lookup(self, name: str) -> tuple[int, int]:
        """``(offset, kind)`` registered under ``name``; KeyError if absent."""
        raw = self._registry_key(name)
        with self.lock:
            at = self._find_entry(raw)
            if at is None:
                raise RegistryError(f"name {name!r} not registered")
            _, offset, kind, _ = _REG_ENTRY.unpack_from(self.mm, at)
        return offset, kind

    def unregister(self, name: str) -> None:
        raw = self._registry_key(name)
        with self.lock:
            at = self._find_entry(raw)
            if at is None:
                raise RegistryError(f"name {name!r} not registered")
            self.mm[at : at + REGISTRY_ENTRY_SIZE] = bytes(REGISTRY_ENTRY_SIZE)

    def registered_names(self) -> list[str]:
        names = []
        with self.lock:
            for i in range(REGISTRY_ENTRIES):
                at = REGISTRY_OFFSET + i * REGISTRY_ENTRY_SIZE
                key = bytes(self.mm[at : at + REGISTRY_NAME_MAX])
                if key[0]:
                    names.append(key.rstrip(b"\0").decode())
        return names

    def _find_entry(self, raw: bytes) -> int | None:
        for i in range(REGISTRY_ENTRIES):
            at = REGISTRY_OFFSET + i * REGISTRY_ENTRY_SIZE
            if self.mm[at : at + REGISTRY_NAME_MAX] == raw:
                return at
        return None

    @staticmethod
    def _registry_key(name: str) -> bytes:
        raw = name.encode()
        if not raw or len(raw) > REGISTRY_NAME_MAX or b"\0" in raw:
            raise ValueError(f"registry name must be 1..{REGISTRY_NAME_MAX} bytes: {name!r}")
        return raw.ljust(REGISTRY_NAME_MAX, b"\0")


def create_segment(name: str, size: int = DEFAULT_SEGMENT_SIZE, force: bool = False) -> Segment:
    return Segment.create(name, size, force=force)


def open_segment(name: str) -> Segment:
    return Segment.open(name)


def is_stale(name: str) -> bool:
    """True if the segment exists but the process that created it is gone."""
    try:
        with open(segment_path(name), "rb") as f:
            raw = f.read(_HEADER.size)
    except FileNotFoundError:
        return False
    if len(raw) < _HEADER.size:
        return True
    magic, _, _, _, _, _, pid, start, _ = _HEADER.unpack(raw)
    if magic != MAGIC:
        return True
    return _process_start_ticks(pid) != start
