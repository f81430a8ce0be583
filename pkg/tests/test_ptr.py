import struct
import threading
import time

import pytest

from shmpubsub.ptr import (
    HandleReleasedError,
    SharedHandle,
    load_shared,
    make_shared,
    make_unique,
    store_shared,
    take_shared,
)
from shmpubsub.segment import OutOfSegmentMemory, Segment
from shmpubsub.shmqueue import ShmQueue

from conftest import run_children, unique_name
import workers


def test_make_shared_counts(segment):
    h = make_shared(segment, 1 << 20)
    assert h.use_count() == 1
    assert h.weak_count() == 0
    assert h.payload_size == 1 << 20
    assert bytes(h.payload[:64]) == bytes(64)
    h.drop()


def test_make_shared_drop_restores_free_bytes(segment):
    before = segment.stats()
    make_shared(segment, 4096).drop()
    after = segment.stats()
    assert after.free_bytes == before.free_bytes
    assert after.total_frees == before.total_frees + 1


def test_big_payload_limits():
    name = unique_name("big")
    with Segment.create(name, 1 << 30) as seg:
        h = make_shared(seg, 16 << 20)
        assert h.use_count() == 1
        with pytest.raises(OutOfSegmentMemory):
            make_shared(seg, 2 << 30)
        h.drop()


def test_clone_and_drop(segment):
    h = make_shared(segment, 128)
    clones = [h.clone() for _ in range(3)]
    assert h.use_count() == 4
    for c in clones:
        c.drop()
    assert h.use_count() == 1
    h.drop()


def test_clone_leaves_payload_untouched(segment):
    h = make_shared(segment, 64)
    h.payload[:] = bytes(range(64))
    h.clone().drop()
    assert bytes(h.payload) == bytes(range(64))
    h.drop()


def test_dropped_handle_is_dead(segment):
    h = make_shared(segment, 8)
    h.drop()
    assert not h.live
    with pytest.raises(HandleReleasedError):
        h.clone()


def test_context_manager_drops(segment):
    before = segment.free_bytes
    with make_shared(segment, 256) as h:
        assert h.use_count() == 1
    assert segment.free_bytes == before


def test_garbage_collected_handle_drops(segment):
    before = segment.free_bytes
    h = make_shared(segment, 256)
    del h
    assert segment.free_bytes == before


def test_weak_upgrade_after_last_strong_is_none(segment):
    before = segment.free_bytes
    h = make_shared(segment, 100)
    w = h.downgrade()
    assert h.weak_count() == 1
    h.drop()
    assert w.expired()
    assert w.upgrade() is None
    # Block stays allocated until the weak handle goes too.
    assert segment.free_bytes < before
    w.drop()
    assert segment.free_bytes == before


def test_weak_upgrade_while_alive(segment):
    h = make_shared(segment, 100)
    w = h.downgrade()
    s = w.upgrade()
    assert s is not None and h.use_count() == 2
    s.drop()
    w.drop()
    assert h.weak_count() == 0
    h.drop()


def test_unique_handle(segment):
    before = segment.free_bytes
    u = make_unique(segment, 1000)
    u.payload[:4] = b"abcd"
    u.drop()
    assert segment.free_bytes == before

    u = make_unique(segment, 1000)
    u.payload[:4] = b"wxyz"
    payload_at = u.payload_offset
    s = u.into_shared()
    with pytest.raises(HandleReleasedError):
        u.payload
    assert s.use_count() == 1
    assert s.payload_offset == payload_at
    assert bytes(s.payload[:4]) == b"wxyz"
    s.drop()
    assert segment.free_bytes == before


def test_handles_stored_in_segment(segment):
    before = segment.free_bytes
    cell = segment.allocate(8)
    segment.store_ref(cell, None)
    h = make_shared(segment, 32)
    h.payload[:3] = b"abc"
    store_shared(segment, cell, h.clone())
    assert h.use_count() == 2
    view = load_shared(segment, cell)
    assert view.use_count() == 3 and bytes(view.payload[:3]) == b"abc"
    view.drop()
    moved = take_shared(segment, cell)
    assert segment.load_ref(cell) is None
    assert h.use_count() == 2
    moved.drop()
    h.drop()
    segment.deallocate(cell)
    assert segment.free_bytes == before


def test_threads_clone_drop(segment):
    h = make_shared(segment, 64)
    h.payload[:] = b"\x5a" * 64

    def spin():
        for _ in range(20_000):
            h.clone().drop()

    threads = [threading.Thread(target=spin) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert h.use_count() == 1
    assert bytes(h.payload) == b"\x5a" * 64
    h.drop()


def test_upgrade_vs_last_drop_race(segment):
    """Either the upgrade wins and sees intact bytes, or it returns None; never a freed block."""
    outcomes = {"upgraded": 0, "expired": 0}
    before = segment.stats()
    for _ in range(300):
        h = make_shared(segment, 64)
        h.payload[:] = b"\x11" * 64
        w = h.downgrade()
        barrier = threading.Barrier(2)
        got = []

        def upgrader():
            barrier.wait()
            s = w.upgrade()
            if s is None:
                got.append(None)
            else:
                got.append(bytes(s.payload))
                s.drop()

        t = threading.Thread(target=upgrader)
        t.start()
        barrier.wait()
        h.drop()
        t.join()
        if got[0] is None:
            outcomes["expired"] += 1
        else:
            assert got[0] == b"\x11" * 64
            outcomes["upgraded"] += 1
        w.drop()
    after = segment.stats()
    assert after.free_bytes == before.free_bytes
    assert after.total_frees - before.total_frees == 300
    assert sum(outcomes.values()) == 300


def test_clone_cost_independent_of_payload_size():
    name = unique_name("cost")
    with Segment.create(name, 64 << 20) as seg:
        small = make_shared(seg, 128)
        big = make_shared(seg, 16 << 20)

        def best_of(h, rounds=5, n=20_000):
            best = float("inf")
            for _ in range(rounds):
                t = time.perf_counter()
                for _ in range(n):
                    h.clone().drop()
                best = min(best, time.perf_counter() - t)
            return best

        assert best_of(big) <= 2 * best_of(small)
        small.drop()
        big.drop()


def test_five_subscriber_clones_visible_cross_process(segment, mp_ctx):
    """Publisher clones once per subscriber: use_count is 6 before anyone finishes."""
    flag = segment.allocate(8)
    h = make_shared(segment, 1024)
    queues = [ShmQueue.create(segment, f"cam0/pub0/sub{i}", 4) for i in range(5)]
    for q in queues:
        q.push(h.clone())
    assert h.use_count() == 6
    out = mp_ctx.Queue()
    procs = [
        mp_ctx.Process(target=workers.handle_holder, args=(segment.name, q.name, out, flag))
        for q in queues
    ]
    for p in procs:
        p.start()
    seen = [out.get(timeout=20) for _ in procs]
    assert seen == [6] * 5
    assert h.use_count() == 6
    segment.write_u64(flag, 1)
    for p in procs:
        p.join(20)
        assert p.exitcode == 0
    assert h.use_count() == 1
    h.drop()
    for q in queues:
        q.detach()


def test_clone_drop_across_two_processes(segment, mp_ctx):
    before = segment.stats()
    h = make_shared(segment, 4096)
    h.payload[:] = b"\xc3" * 4096
    run_children(
        mp_ctx,
        workers.clone_drop_stress,
        [(segment.name, h.offset, 4, 20_000)] * 2,
    )
    assert h.use_count() == 1
    assert bytes(h.payload) == b"\xc3" * 4096
    h.drop()
    after = segment.stats()
    assert after.free_bytes == before.free_bytes
    assert after.total_frees == before.total_frees + 1
