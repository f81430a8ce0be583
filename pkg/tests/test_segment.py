import os
import random
import struct

import pytest
from hypothesis import given, settings, strategies as st

from shmpubsub import segment as segmod
from shmpubsub.segment import (
    MIN_SEGMENT_SIZE,
    NULL_REF,
    REGION_OFFSET,
    InvalidFreeError,
    OutOfSegmentMemory,
    RegistryError,
    RelativeRef,
    Segment,
    SegmentError,
    SegmentExistsError,
    SegmentNotFoundError,
    SegmentVersionError,
    SegmentCorruptError,
    is_stale,
    make_relative,
    resolve,
)

from conftest import run_children, unique_name
import workers


class FirstFitModel:
    """Interval-list model of an address-ordered first-fit allocator.

    Independent of the boundary-tag implementation: it only knows the
    sizing rules (16-byte headers, 16-byte granularity, 48-byte minimum
    block, leading gaps too small to be a block are skipped).
    """

    def __init__(self, start, end):
        self.free = [(start, end)]
        self.live = {}

    def alloc(self, size, align):
        need = max(48, -(-(size + 16) // 16) * 16)
        for i, (s, e) in enumerate(self.free):
            p = -(-(s + 16) // align) * align
            a = p - 16
            if a != s and a - s < 48:
                p = -(-(s + 16 + 48) // align) * align
                a = p - 16
            if a + need <= e:
                pieces = []
                if a > s:
                    pieces.append((s, a))
                if e - (a + need) >= 48:
                    pieces.append((a + need, e))
                else:
                    need = e - a
                self.free[i : i + 1] = pieces
                self.live[p] = (a, need)
                return p
        return None

    def dealloc(self, p):
        a, size = self.live.pop(p)
        self.free.append((a, a + size))
        self.free.sort()
        merged = []
        for s, e in self.free:
            if merged and merged[-1][1] == s:
                merged[-1] = (merged[-1][0], e)
            else:
                merged.append((s, e))
        self.free = merged

    def free_bytes(self):
        return sum(e - s for s, e in self.free)


# ---------------------------------------------------------------- lifecycle


def test_create_appears_under_dev_shm():
    name = "LOTROS"
    if os.path.exists("/dev/shm/LOTROS"):
        pytest.skip("a LOTROS segment already exists on this host")
    seg = Segment.create(name, 256 << 20)
    try:
        assert os.path.exists("/dev/shm/LOTROS")
        assert os.path.getsize("/dev/shm/LOTROS") == 256 << 20
    finally:
        seg.destroy()
    assert not os.path.exists("/dev/shm/LOTROS")


def test_create_rejects_small_size(seg_name):
    with pytest.raises(SegmentError, match="below minimum"):
        Segment.create(seg_name, 0)
    with pytest.raises(SegmentError):
        Segment.create(seg_name, MIN_SEGMENT_SIZE - 1)


@pytest.mark.parametrize("bad", ["", "a/b", "x" * 65, "sp ace", "../etc"])
def test_create_rejects_bad_names(bad):
    with pytest.raises(ValueError):
        Segment.create(bad, MIN_SEGMENT_SIZE)


def test_create_twice_collides(segment):
    with pytest.raises(SegmentExistsError):
        Segment.create(segment.name, MIN_SEGMENT_SIZE)


def test_force_recreate(seg_name):
    first = Segment.create(seg_name, MIN_SEGMENT_SIZE)
    first.allocate(100)
    second = Segment.create(seg_name, 2 * MIN_SEGMENT_SIZE, force=True)
    try:
        assert second.size == 2 * MIN_SEGMENT_SIZE
        assert second.stats().live_allocations == 0
    finally:
        first.close()
        second.destroy()


def test_create_rejects_oversized_budget(seg_name):
    st_ = os.statvfs(segmod.SHM_DIR)
    with pytest.raises(SegmentError, match="insufficient"):
        Segment.create(seg_name, st_.f_bavail * st_.f_frsize + (1 << 30))


def test_stale_segment_detected(seg_name):
    seg = Segment.create(seg_name, MIN_SEGMENT_SIZE)
    assert not is_stale(seg_name)
    # Pretend the creator was a process that no longer exists.
    seg.write_u64(40, 2**31 + 12345)
    seg.close()
    assert is_stale(seg_name)
    with pytest.raises(SegmentExistsError, match="stale"):
        Segment.create(seg_name, MIN_SEGMENT_SIZE)
    Segment.create(seg_name, MIN_SEGMENT_SIZE, force=True).destroy()


def test_open_sees_same_state(segment):
    segment.allocate(1000)
    other = Segment.open(segment.name)
    try:
        assert other.size == segment.size
        assert other.stats() == segment.stats()
        assert other.base != segment.base
    finally:
        other.close()


def test_open_missing():
    with pytest.raises(SegmentNotFoundError):
        Segment.open(unique_name("missing"))


def test_open_rejects_version_mismatch(segment):
    segment.mm[8:12] = (99).to_bytes(4, "little")
    with pytest.raises(SegmentVersionError):
        Segment.open(segment.name)


def test_open_rejects_bad_magic(segment):
    segment.write_u64(0, 0xDEADBEEF)
    with pytest.raises(SegmentCorruptError, match="magic"):
        Segment.open(segment.name)


def test_header_offsets_in_range(segment):
    magic, version, hsize, total, alloc_off, reg_off = struct.unpack_from("<QIIQQQ", segment.mm, 0)
    assert magic == segmod.MAGIC and version == segmod.VERSION
    assert total == segment.size
    for off in (alloc_off, reg_off):
        assert hsize <= off < total


# ---------------------------------------------------------------- allocator


def test_two_allocations_disjoint(segment):
    a = segment.allocate(64, 8)
    b = segment.allocate(64, 8)
    assert a + 64 <= b or b + 64 <= a
    assert segment.stats().live_allocations == 2


def test_allocation_is_zeroed(segment):
    a = segment.allocate(256)
    segment.view(a, 256)[:] = b"\xff" * 256
    segment.deallocate(a)
    b = segment.allocate(256)
    assert b == a
    assert bytes(segment.view(b, 256)) == bytes(256)


def test_out_of_memory(segment):
    with pytest.raises(OutOfSegmentMemory):
        segment.allocate(segment.free_bytes + 1, 8)
    assert segment.stats().live_allocations == 0


def test_bad_alignment_rejected(segment):
    with pytest.raises(ValueError):
        segment.allocate(16, 24)


def test_deallocate_restores_counts(segment):
    before = segment.stats()
    segment.deallocate(segment.allocate(500))
    after = segment.stats()
    assert after.live_allocations == before.live_allocations
    assert after.free_bytes == before.free_bytes


def test_double_free_is_error(segment):
    a = segment.allocate(64)
    segment.deallocate(a)
    with pytest.raises(InvalidFreeError):
        segment.deallocate(a)


def test_double_free_after_coalescing_is_error(segment):
    a = segment.allocate(64)
    b = segment.allocate(64)
    segment.deallocate(a)
    segment.deallocate(b)  # merges into a's free block
    with pytest.raises(InvalidFreeError):
        segment.deallocate(b)


def test_foreign_offset_is_error(segment):
    a = segment.allocate(256)
    with pytest.raises(InvalidFreeError):
        segment.deallocate(a + 64)
    with pytest.raises(InvalidFreeError):
        segment.deallocate(8)


def test_first_fit_reuses_hole(segment):
    a = segment.allocate(1000)
    b = segment.allocate(1000)
    c = segment.allocate(1000)
    segment.deallocate(b)
    b2 = segment.allocate(1000)
    assert b2 == b
    model = FirstFitModel(REGION_OFFSET, segment.size & ~0xF)
    assert [model.alloc(1000, 8) for _ in range(3)] == [a, b, c]
    model.dealloc(b)
    assert model.alloc(1000, 8) == b2


def test_matches_first_fit_reference_simulation(segment):
    rng = random.Random(7)
    model = FirstFitModel(REGION_OFFSET, segment.size & ~0xF)
    live = []
    for _ in range(3000):
        if live and rng.random() < 0.45:
            p = live.pop(rng.randrange(len(live)))
            segment.deallocate(p)
            model.dealloc(p)
        else:
            size = rng.choice([0, 1, 8, 40, 100, 1000, 5000, 70000])
            align = rng.choice(sorted(segmod.ALIGNMENTS))
            expected = model.alloc(size, align)
            p = segment.allocate(size, align)
            assert p == expected
            live.append(p)
        assert segment.free_bytes == model.free_bytes()
    segment.heap_blocks()


def test_random_pairs_conserve_free_bytes(segment):
    """10,000 allocate/deallocate pairs in random order against a shadow ledger."""
    rng = random.Random(1234)
    initial = segment.stats()
    shadow = {}
    pairs = 0
    while pairs < 10_000:
        if shadow and (rng.random() < 0.5 or len(shadow) > 200):
            p = rng.choice(list(shadow))
            size = shadow.pop(p)
            assert segment.read_u64(p) == p  # stamp survived
            segment.deallocate(p)
            pairs += 1
        else:
            size = rng.randint(8, 20000)
            align = rng.choice([8, 16, 64, 4096])
            p = segment.allocate(size, align)
            assert p % align == 0
            lo, hi = p, p + size
            for q, qs in shadow.items():
                assert hi <= q or q + qs <= lo
            segment.write_u64(p, p)
            shadow[p] = size
        stats = segment.stats()
        assert stats.live_allocations == len(shadow)
        used = sum(segment.block_size(q) for q in shadow)
        assert stats.free_bytes + used == stats.total_bytes
    for p in list(shadow):
        segment.deallocate(p)
    final = segment.stats()
    assert final.free_bytes == initial.free_bytes
    assert final.live_allocations == initial.live_allocations
    assert segment.heap_blocks() == [(REGION_OFFSET, initial.total_bytes, False)]


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.tuples(st.integers(0, 50_000), st.sampled_from(sorted(segmod.ALIGNMENTS))),
        min_size=1,
        max_size=30,
    )
)
def test_alignment_and_bounds_property(ops):
    name = unique_name("hyp")
    with Segment.create(name, 4 << 20) as seg:
        region_end = seg.size & ~0xF
        got = []
        for size, align in ops:
            try:
                p = seg.allocate(size, align)
            except OutOfSegmentMemory:
                continue
            assert p % align == 0
            assert REGION_OFFSET < p and p + size <= region_end
            got.append((p, size))
        got.sort()
        for (p, s), (q, _) in zip(got, got[1:]):
            assert p + s <= q
        seg.heap_blocks()


def test_concurrent_threads_allocate_safely(segment):
    import threading

    errors = []

    def churn(seed):
        rng = random.Random(seed)
        mine = []
        try:
            for _ in range(2000):
                if mine and rng.random() < 0.5:
                    segment.deallocate(mine.pop())
                else:
                    mine.append(segment.allocate(rng.randint(1, 512)))
            for p in mine:
                segment.deallocate(p)
        except Exception as exc:  # pragma: no cover - surfaced below
            errors.append(exc)

    before = segment.stats()
    threads = [threading.Thread(target=churn, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert segment.stats().free_bytes == before.free_bytes



def test_concurrent_processes_allocate_safely(segment, mp_ctx):
    before = segment.stats()
    run_children(mp_ctx, workers.alloc_churn, [(segment.name, seed, 30_000) for seed in range(3)])
    after = segment.stats()
    assert after.free_bytes == before.free_bytes and after.live_allocations == before.live_allocations
    assert after.total_frees - before.total_frees == after.total_allocations - before.total_allocations
    segment.heap_blocks()


class _RecordingStruct:
    """Wraps a struct.Struct and records the byte ranges pack_into writes."""

    def __init__(self, inner, log):
        self.inner, self.log, self.size = inner, log, inner.size

    def pack_into(self, buf, offset, *values):
        self.log.append((offset, offset + self.inner.size))
        self.inner.pack_into(buf, offset, *values)

    def unpack_from(self, buf, offset=0):
        return self.inner.unpack_from(buf, offset)


def test_allocator_never_rewrites_region_bounds(segment, monkeypatch):
    # pack_into zero-fills its target before writing, so rewriting the region
    # bounds (read by other processes) would expose zeros for an instant.
    writes = []
    for name in ("_ALLOC_STATE", "_ALLOC_COUNTERS", "_U64", "_U64x2"):
        if hasattr(segmod, name):
            monkeypatch.setattr(segmod, name, _RecordingStruct(getattr(segmod, name), writes))
    offs = [segment.allocate(n) for n in (8, 100, 3000, 40)]
    for off in offs[::2] + offs[1::2]:
        segment.deallocate(off)
    lo, hi = segmod.ALLOC_STATE_OFFSET, segmod.ALLOC_STATE_OFFSET + 16
    assert writes
    assert not [w for w in writes if w[0] < hi and w[1] > lo]

# ---------------------------------------------------------------- relative refs


def test_resolve_arithmetic():
    assert resolve(3072, 1024) == 4096
    assert resolve(NULL_REF, 1024) is None
    assert resolve(0, 4096) == 4096
    assert resolve(-1024, 4096) == 3072


def test_relative_ref_type():
    assert RelativeRef.null().is_null
    ref = RelativeRef.between(1024, 4096)
    assert ref.delta == 3072 and ref.resolve(1024) == 4096
    assert RelativeRef.between(64, None).is_null
    assert make_relative(64, 64) == 0


def test_store_and_load_ref(segment):
    cell = segment.allocate(8)
    target = segment.allocate(100)
    segment.store_ref(cell, target)
    assert segment.load_ref(cell) == target
    assert segment.resolve_ref(cell) == segment.base + target
    segment.store_ref(cell, cell)
    assert segment.load_ref(cell) == cell
    segment.store_ref(cell, None)
    assert segment.load_ref(cell) is None


def test_ref_outside_segment_is_error(segment):
    cell = segment.allocate(8)
    segment.mm[cell : cell + 8] = (segment.size * 2).to_bytes(8, "little", signed=True)
    with pytest.raises(SegmentCorruptError):
        segment.load_ref(cell)


def test_ref_resolves_identically_in_another_process(segment, mp_ctx):
    cell = segment.allocate(8)
    target = segment.allocate(4096, 64)
    pattern = bytes(range(256)) * 16
    segment.view(target, 4096)[:] = pattern
    segment.store_ref(cell, target)
    out = mp_ctx.Queue()
    run_children(mp_ctx, workers.resolve_and_read, [(segment.name, cell, 4096, out)])
    child_base, child_target, child_resolved, data = out.get(timeout=10)
    assert child_base != segment.base
    assert child_target == target == child_resolved
    assert data == pattern


def test_child_writes_through_ref_parent_sees_bytes(segment, mp_ctx):
    cell = segment.allocate(8)
    target = segment.allocate(512)
    segment.store_ref(cell, target)
    run_children(mp_ctx, workers.write_pattern_via_ref, [(segment.name, cell, 512, 0xAB)])
    assert bytes(segment.view(target, 512)) == b"\xab" * 512


# ---------------------------------------------------------------- registry


def test_registry_roundtrip(segment):
    segment.register("t/cam0/sub1", 4096, kind=3)
    assert segment.lookup("t/cam0/sub1") == (4096, 3)
    assert "t/cam0/sub1" in segment.registered_names()
    with pytest.raises(RegistryError):
        segment.register("t/cam0/sub1", 8192)
    segment.unregister("t/cam0/sub1")
    with pytest.raises(KeyError):
        segment.lookup("t/cam0/sub1")
