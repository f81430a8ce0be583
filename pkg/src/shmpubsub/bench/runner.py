"""Orchestrates one scenario: registry, segment, participant processes, report."""

from __future__ import annotations

import json
import logging
import os
import statistics
import subprocess
import sys
import tempfile
import time
import uuid
from typing import Optional

from ..segment import Segment
from ..transport.registry import ENV_REGISTRY, RegistryClient
from ..transport.engine import ENV_SEGMENT
from .report import RunReport, build_report
from .scenario import TOPIC, LatencyRecord, Scenario
from .system import CpuTimes, reap_with_rusage

log = logging.getLogger(__name__)

STARTUP_S = 30.0


class RegistryProcess:
    """A registry running in its own process for the duration of a run."""

    def __init__(self, path: str):
        self.path = path
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "shmpubsub.transport.registry", "--socket", path],
            stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True,
        )
        line = self.proc.stdout.readline()
        if not line.startswith("ready"):
            self.proc.kill()
            raise RuntimeError(f"registry failed to start: {line!r}")

    def close(self):
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        self.proc.stdout.close()
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass


def enforce_connection_order(registry: RegistryClient, group: str, order: list[str]) -> None:
    """Arm a barrier so member k subscribes only after member k-1 is attached.

    Participants call ``barrier_join``, ``turn_wait`` before subscribing and
    ``turn_done`` once the publisher has confirmed their subscription.
    """
    registry.barrier_setup(group, list(order))


def _validate_pins(sc: Scenario) -> None:
    cores = os.cpu_count() or 1
    allowed = os.sched_getaffinity(0)
    for role, core in sc.pin_map.items():
        if not 0 <= core < cores or core not in allowed:
            raise ValueError(f"cannot pin {role} to core {core}: available {sorted(allowed)}")


def run_scenario(
    sc: Scenario,
    workdir: Optional[str] = None,
    registry_path: Optional[str] = None,
    segment_name: Optional[str] = None,
    timeout: Optional[float] = None,
) -> RunReport:
    _validate_pins(sc)
    tag = uuid.uuid4().hex[:8]
    own_dir = workdir is None
    workdir = workdir or tempfile.mkdtemp(prefix=f"bench-{tag}-")
    os.makedirs(workdir, exist_ok=True)

    registry_path = registry_path or os.environ.get(ENV_REGISTRY)
    registry = None
    if not registry_path:
        registry_path = os.path.join(tempfile.gettempdir(), f"bench-registry-{tag}.sock")
        registry = RegistryProcess(registry_path)

    segment = None
    seg_name = ""
    if sc.transport.in_segment:
        seg_name = segment_name or os.environ.get(ENV_SEGMENT) or f"bench_{tag}"
        if segment_name is None and os.environ.get(ENV_SEGMENT) is None:
            segment = Segment.create(seg_name, sc.segment_size or sc.needed_segment_size())

    client = RegistryClient(registry_path)
    group = f"order-{tag}" if sc.ordered else ""
    if sc.ordered:
        enforce_connection_order(client, group, sc.subscribers)

    procs: dict = {}
    start = time.monotonic()
    try:
        roles = [("pub", p) for p in sc.publishers] + [("sub", s) for s in sc.subscribers]
        for role, pid in roles:
            cfg = {
                "role": role,
                "id": pid,
                "scenario": sc.to_dict(),
                "registry": registry_path,
                "segment": seg_name,
                "barrier": group if role == "sub" else "",
                "core": sc.core_for(pid),
                "result": os.path.join(workdir, f"{pid}.result.json"),
            }
            cfg_path = os.path.join(workdir, f"{pid}.json")
            with open(cfg_path, "w") as f:
                json.dump(cfg, f)
            procs[pid] = subprocess.Popen(
                [sys.executable, "-m", "shmpubsub.bench.participant", cfg_path],
                stderr=open(os.path.join(workdir, f"{pid}.log"), "w"),
            )
        limit = timeout or (STARTUP_S + sc.message_count / sc.rate_hz * 1.5 + 60)
        deadline = time.monotonic() + limit
        cpu: dict = {}
        codes: dict = {}
        failures: list = []
        for pid, p in procs.items():
            try:
                codes[pid], cpu[pid] = reap_with_rusage(p, max(0.1, deadline - time.monotonic()))
            except subprocess.TimeoutExpired:
                p.kill()
                codes[pid], cpu[pid] = reap_with_rusage(p, 10)
                failures.append(f"{pid} killed after {limit:.0f}s")
        wall = time.monotonic() - start
    finally:
        for p in procs.values():
            if p.poll() is None:
                p.kill()
                p.wait()
            if p.stderr:
                p.stderr.close()
        client.close()
        if registry is not None:
            registry.close()
        if segment is not None:
            segment.destroy()

    results = {}
    for pid in procs:
        path = os.path.join(workdir, f"{pid}.result.json")
        try:
            with open(path) as f:
                results[pid] = json.load(f)
        except (OSError, ValueError):
            results[pid] = {}
            failures.append(f"{pid} wrote no result (exit {codes.get(pid)})")
    for pid, code in codes.items():
        if code != 0:
            err = results.get(pid, {}).get("error", "")
            failures.append(f"{pid} exited {code} {err}".strip())
        if results.get(pid, {}).get("watchdog"):
            failures.append(f"{pid} watchdog: no progress for 5 s")

    records = []
    for sub in sc.subscribers:
        for pub, seq, lat, recv in results.get(sub, {}).get("records", []):
            records.append(LatencyRecord(TOPIC, pub, sub, seq, lat, recv))

    order = {pub: results.get(pub, {}).get("subscriber_order", []) for pub in sc.publishers}
    intervals = []
    for pub in sc.publishers:
        st = results.get(pub, {}).get("publish_stamps") or []
        intervals += [b - a for a, b in zip(st, st[1:])]
    rep = build_report(
        sc, records,
        cpu=cpu, wall_s=wall, failed=bool(failures), failures=failures,
        subscriber_order=order,
        publish_interval_median_ns=int(statistics.median(intervals)) if intervals else None,
    )
    rep.extra = {
        "workdir": workdir,
        "copies": {pid: r.get("copies") for pid, r in results.items()},
        "reassembly_discards": {s: results.get(s, {}).get("reassembly_discards", 0) for s in sc.subscribers},
        "sent": {p: results.get(p, {}).get("sent", 0) for p in sc.publishers},
        "affinity": {pid: r.get("affinity") for pid, r in results.items()},
    }
    if own_dir and not rep.failed:
        for name in os.listdir(workdir):
            os.unlink(os.path.join(workdir, name))
        os.rmdir(workdir)
        rep.extra["workdir"] = None
    return rep


def total_cpu(report: RunReport) -> CpuTimes:
    out = CpuTimes(0, 0)
    for c in report.cpu.values():
        out = out + c
    return out
