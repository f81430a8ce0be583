"""One benchmark participant (publisher or subscriber) in its own process.

Started by the runner as ``python -m shmpubsub.bench.participant CONFIG.json``;
writes its results as JSON next to the config.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import threading
import time
import traceback

from ..shmqueue import FullPolicy
from ..transport.engine import NoPublisher, ShmEngine, SubscriptionClosed
from ..transport.message import ImageMessage, LoanedImage
from ..transport.wire import copy_count
from .scenario import TOPIC, Scenario
from .system import pin_process, set_timer_slack, sleep_until

log = logging.getLogger("participant")

WATCHDOG_S = 5.0
STARTUP_S = 30.0


def _fill(buf, seed: int) -> None:
    # Cheap non-constant content, written once per buffer.
    n = len(buf)
    stripe = bytes((seed + i) & 0xFF for i in range(256))
    reps, rest = divmod(n, 256)
    buf[: reps * 256] = stripe * reps
    if rest:
        buf[reps * 256 :] = stripe[:rest]


class LoanPool:
    """Segment images reused once every subscriber has dropped them."""

    def __init__(self, pusher, size: int, limit: int):
        self.pusher = pusher
        self.size = size
        self.limit = limit
        self.images: list[LoanedImage] = []

    def acquire(self, timeout: float = WATCHDOG_S) -> LoanedImage:
        deadline = time.monotonic() + timeout
        while True:
            for img in self.images:
                if not img.in_use:
                    return img
            if len(self.images) < self.limit:
                img = self.pusher.loan(self.size)
                _fill(img.data, len(self.images))
                self.images.append(img)
                return img
            if time.monotonic() > deadline:
                raise TimeoutError("no free image buffer: subscribers stopped consuming")
            time.sleep(0.0002)

    def close(self):
        for img in self.images:
            img.drop()
        self.images.clear()


def run_publisher(cfg: dict, sc: Scenario) -> dict:
    me = cfg["id"]
    engine = ShmEngine(me, cfg.get("segment") or None, cfg["registry"])
    result = {"role": "pub", "id": me, "sent": 0, "subscriber_order": []}
    try:
        pusher = engine.advertise(TOPIC, sc.transport, nodelay=sc.nodelay,
                                  capacity=sc.capacity, policy=FullPolicy.BLOCK)
        if sc.drop_chunk:
            want_seq, want_idx = sc.drop_chunk
            pusher.drop_chunk = lambda seq, idx: seq == want_seq and idx == want_idx
        expected = len(sc.subscribers)
        # Interpreter start-up of every participant happens here, so this wait
        # gets the start-up allowance rather than the 5 s progress watchdog.
        pusher.wait_for_subscribers(expected, STARTUP_S)
        result["subscriber_order"] = pusher.subscriber_ids
        set_timer_slack(1)
        period_ns = int(1e9 / sc.rate_hz)
        stamps = []
        if sc.transport.in_segment:
            pool = LoanPool(pusher, sc.payload_size, sc.capacity * expected + 2)
            source = None
        else:
            pool = None
            source = bytearray(sc.payload_size)
            _fill(source, 0)
        t0 = time.monotonic_ns() + 50_000_000
        for seq in range(sc.message_count):
            sleep_until(t0 + seq * period_ns)
            if pool is not None:
                img = pool.acquire()
                rep = pusher.publish(img, seq=seq)
            else:
                rep = pusher.publish(ImageMessage(seq, source))
            stamps.append(rep.stamp_ns)
            result["sent"] += 1
        result["publish_stamps"] = stamps
        result["copies"] = copy_count()
        engine.unadvertise(TOPIC)
        if pool is not None:
            pool.close()
    finally:
        engine.close()
    return result


def run_subscriber(cfg: dict, sc: Scenario) -> dict:
    me = cfg["id"]
    engine = ShmEngine(me, cfg.get("segment") or None, cfg["registry"])
    records = []
    progress = threading.Event()

    def sink(d):
        records.append((d.publisher_id, d.seq, d.latency_ns, d.recv_ns))
        d.release()
        progress.set()

    result = {"role": "sub", "id": me, "records": records, "watchdog": False}
    group = cfg.get("barrier")
    try:
        if group:
            engine.registry.barrier_join(group, me)
            engine.registry.turn_wait(group, me, timeout=STARTUP_S)
        sub = engine.subscribe(TOPIC, sc.transport, sink=sink, subscriber_id=me,
                               timeout=STARTUP_S, publishers=len(sc.publishers), nodelay=sc.nodelay)
        if group:
            engine.registry.turn_done(group, me)
        first_deadline = time.monotonic() + STARTUP_S
        last_progress = None
        while not sub.ended:
            if progress.wait(0.5):
                progress.clear()
                last_progress = time.monotonic()
                continue
            now = time.monotonic()
            if last_progress is None and now > first_deadline:
                result["watchdog"] = True
                break
            if last_progress is not None and now - last_progress > WATCHDOG_S:
                result["watchdog"] = True
                break
        sub.close()
        result["reassembly_discards"] = sub.reassembly_discards
        result["errors"] = [repr(p.error) for p in sub.pullers if p.error]
        result["copies"] = copy_count()
    finally:
        engine.close()
    return result


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    cfg_path = argv[0]
    with open(cfg_path) as f:
        cfg = json.load(f)
    logging.basicConfig(level=logging.WARNING, format=f"%(asctime)s {cfg['id']} %(message)s")
    core = cfg.get("core")
    if core is not None:
        pin_process(0, core)
    sc = Scenario.from_dict(cfg["scenario"])
    out = {"id": cfg["id"], "pid": os.getpid(), "affinity": sorted(os.sched_getaffinity(0))}
    code = 0
    try:
        out.update(run_publisher(cfg, sc) if cfg["role"] == "pub" else run_subscriber(cfg, sc))
    except (NoPublisher, SubscriptionClosed, TimeoutError, OSError, RuntimeError) as e:
        out["error"] = f"{type(e).__name__}: {e}"
        out["traceback"] = traceback.format_exc()
        code = 2
    tmp = cfg["result"] + ".tmp"
    with open(tmp, "w") as f:
        json.dump(out, f)
    os.replace(tmp, cfg["result"])
    return code


if __name__ == "__main__":
    sys.exit(main())
