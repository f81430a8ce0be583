"""Run reports: CSV export and import, text summaries, plot-script emission."""

from __future__ import annotations

import csv
import json
import os
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

from .scenario import LatencyRecord, Scenario, format_size
from .stats import Quantiles, compute_stats, fairness_gap
from .system import CpuTimes

CSV_VERSION = 1
SCENARIO_COLUMNS = (
    "graph", "transport", "payload_size", "message_count", "rate_hz",
    "ordered", "nodelay", "warmup", "environment_label",
)
RECORD_COLUMNS = ("topic", "publisher_id", "subscriber_id", "seq", "latency_ns", "recv_monotonic_ns")
CSV_COLUMNS = ("csv_version",) + SCENARIO_COLUMNS + RECORD_COLUMNS


@dataclass
class PairReport:
    publisher_id: str
    subscriber_id: str
    delivered: int
    lost: int
    latency: Optional[Quantiles]


@dataclass
class RunReport:
    scenario: Scenario
    records: list
    pairs: list
    fairness_gap_ns: int
    cpu: dict = field(default_factory=dict)
    wall_s: float = 0.0
    failed: bool = False
    failures: list = field(default_factory=list)
    subscriber_order: dict = field(default_factory=dict)
    publish_interval_median_ns: Optional[int] = None
    extra: dict = field(default_factory=dict)
    csv_path: Optional[str] = None

    def pair(self, publisher_id: str, subscriber_id: str) -> PairReport:
        for p in self.pairs:
            if (p.publisher_id, p.subscriber_id) == (publisher_id, subscriber_id):
                return p
        raise KeyError((publisher_id, subscriber_id))

    @property
    def delivered(self) -> int:
        return sum(p.delivered for p in self.pairs)

    @property
    def lost(self) -> int:
        return sum(p.lost for p in self.pairs)

    @property
    def cpu_total_ns(self) -> int:
        return sum(c.total_ns for c in self.cpu.values())

    def medians(self) -> dict:
        return {(p.publisher_id, p.subscriber_id): p.latency.median for p in self.pairs if p.latency}


def build_report(scenario: Scenario, records: Sequence[LatencyRecord], **kw) -> RunReport:
    """Group records into per-pair statistics; every expected pair is listed."""
    stats = compute_stats(records, warmup=scenario.warmup) if records else {}
    counts: dict = defaultdict(int)
    for r in records:
        counts[(r.publisher_id, r.subscriber_id)] += 1
    pairs = []
    for pub in scenario.publishers:
        for sub in scenario.subscribers:
            n = counts.get((pub, sub), 0)
            pairs.append(PairReport(pub, sub, n, scenario.message_count - n, stats.get((pub, sub))))
    return RunReport(scenario, list(records), pairs, fairness_gap(stats), **kw)


# -- CSV --------------------------------------------------------------------


def emit_csv(report: RunReport, path: str) -> str:
    sc = report.scenario
    fixed = [CSV_VERSION] + [
        sc.graph.value, sc.transport.value, sc.payload_size, sc.message_count, sc.rate_hz,
        int(sc.ordered), int(sc.nodelay), sc.warmup, sc.environment_label,
    ]
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in report.records:
            w.writerow(fixed + [r.topic, r.publisher_id, r.subscriber_id, r.seq, r.latency_ns, r.recv_monotonic_ns])
    report.csv_path = path
    return path


def parse_csv(path: str) -> tuple[Optional[Scenario], list]:
    """Inverse of :func:`emit_csv`: (scenario, records)."""
    scenario = None
    records = []
    with open(path, newline="") as f:
        rd = csv.DictReader(f)
        missing = set(CSV_COLUMNS) - set(rd.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: not a benchmark CSV (missing {sorted(missing)})")
        for row in rd:
            if int(row["csv_version"]) != CSV_VERSION:
                raise ValueError(f"{path}: CSV version {row['csv_version']} unsupported")
            if scenario is None:
                size = int(row["payload_size"])
                scenario = Scenario(
                    graph=row["graph"], transport=row["transport"], payload_size=size,
                    message_count=int(row["message_count"]), rate_hz=float(row["rate_hz"]),
                    ordered=bool(int(row["ordered"])), nodelay=bool(int(row["nodelay"])),
                    warmup=int(row["warmup"]), environment_label=row["environment_label"],
                    sweep=(size,),
                )
            records.append(LatencyRecord(
                row["topic"], row["publisher_id"], row["subscriber_id"], int(row["seq"]),
                int(row["latency_ns"]), int(row["recv_monotonic_ns"]),
            ))
    return scenario, records


def load_report(path: str) -> RunReport:
    scenario, records = parse_csv(path)
    if scenario is None:
        raise ValueError(f"{path}: no records")
    rep = build_report(scenario, records)
    rep.csv_path = path
    return rep


# -- text -------------------------------------------------------------------


def _us(ns) -> str:
    return "-" if ns is None else f"{ns / 1000:.1f}"


def emit_summary(report: RunReport) -> str:
    sc = report.scenario
    lines = [
        f"# {sc.label()}  count={sc.message_count} rate={sc.rate_hz:g}Hz warmup={sc.warmup}"
        + (f"  env={sc.environment_label}" if sc.environment_label else ""),
        f"{'pub':<6} {'sub':<6} {'recv':>6} {'lost':>6} "
        + " ".join(f"{c:>10}" for c in ("min", "p25", "median", "p75", "p95", "p99", "max"))
        + "  (us)",
    ]
    for p in report.pairs:
        q = p.latency
        vals = [None] * 7 if q is None else [q.min, q.p25, q.median, q.p75, q.p95, q.p99, q.max]
        lines.append(
            f"{p.publisher_id:<6} {p.subscriber_id:<6} {p.delivered:>6} {p.lost:>6} "
            + " ".join(f"{_us(v):>10}" for v in vals)
        )
    if len(report.pairs) > 1:
        lines.append(f"fairness_gap {_us(report.fairness_gap_ns)} us")
    if report.cpu:
        parts = ", ".join(f"{k}={v.total_ns / 1e9:.3f}s" for k, v in sorted(report.cpu.items()))
        lines.append(f"cpu {report.cpu_total_ns / 1e9:.3f}s total ({parts})")
    if report.wall_s:
        lines.append(f"wall {report.wall_s:.1f}s")
    if report.failed:
        lines.append("FAILED: " + "; ".join(report.failures))
    return "\n".join(lines)


def emit_table(reports: Iterable[RunReport]) -> str:
    """One line per run, for sweeps and ``bench report``."""
    rows = [f"{'run':<36} {'recv':>7} {'lost':>6} {'median_us':>11} {'p95_us':>11} {'gap_us':>10}"]
    for r in reports:
        meds = [p.latency.median for p in r.pairs if p.latency]
        p95s = [p.latency.p95 for p in r.pairs if p.latency]
        med = statistics.median(meds) if meds else None
        p95 = max(p95s) if p95s else None
        rows.append(
            f"{r.scenario.label():<36} {r.delivered:>7} {r.lost:>6} {_us(med):>11} {_us(p95):>11} "
            f"{_us(r.fairness_gap_ns):>10}"
        )
    return "\n".join(rows)


# -- plot script ------------------------------------------------------------

_PLOT_TEMPLATE = '''\
"""Latency boxplots: payload size on x, latency on a log y axis, one box per transport."""
import csv
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV_FILES = {files}
OUTPUT = {output!r}


def size_label(n):
    for unit, size in (("MB", 1 << 20), ("KB", 1 << 10)):
        if n >= size and n % size == 0:
            return f"{{n // size}}{{unit}}"
    return f"{{n}}B"


groups = defaultdict(list)
for path in CSV_FILES:
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            if int(row["seq"]) < int(row["warmup"]):  # per-run warm-up cut
                continue
            key = (row["graph"], int(row["payload_size"]), row["transport"])
            groups[key].append(int(row["latency_ns"]) / 1000.0)

graphs = sorted({{g for g, _, _ in groups}})
fig, axes = plt.subplots(len(graphs), 1, figsize=(12, 4 * len(graphs)), squeeze=False)
for ax, graph in zip(axes[:, 0], graphs):
    sizes = sorted({{s for g, s, _ in groups if g == graph}})
    transports = sorted({{t for g, _, t in groups if g == graph}})
    width = 0.8 / max(1, len(transports))
    for ti, transport in enumerate(transports):
        data, pos = [], []
        for si, size in enumerate(sizes):
            vals = groups.get((graph, size, transport))
            if vals:
                data.append(vals)
                pos.append(si + (ti - (len(transports) - 1) / 2) * width)
        if data:
            bp = ax.boxplot(data, positions=pos, widths=width * 0.9, patch_artist=True,
                            showfliers=False, manage_ticks=False)
            color = plt.cm.tab10(ti)
            for box in bp["boxes"]:
                box.set_facecolor(color)
            ax.plot([], [], color=color, linewidth=8, label=transport)
    ax.set_xticks(range(len(sizes)))
    ax.set_xticklabels([size_label(s) for s in sizes], rotation=45)
    ax.set_yscale("log")
    ax.set_xlabel("payload size")
    ax.set_ylabel("latency (us)")
    ax.set_title(graph)
    ax.legend(loc="upper left")
fig.tight_layout()
fig.savefig(OUTPUT, dpi=120)
print("wrote", OUTPUT)
'''


def emit_plot_script(reports: Iterable[Union[RunReport, str]], path: str, output: str = "latency.png") -> str:
    """Write a standalone matplotlib script plotting the given runs' CSVs."""
    files = []
    for r in reports:
        if isinstance(r, RunReport):
            if not r.csv_path:
                raise ValueError("report has no CSV yet; call emit_csv first")
            files.append(os.path.abspath(r.csv_path))
        else:
            files.append(os.path.abspath(r))
    with open(path, "w") as f:
        f.write(_PLOT_TEMPLATE.format(files=json.dumps(files, indent=4), output=output))
    return path


__all__ = [
    "CSV_COLUMNS",
    "CSV_VERSION",
    "CpuTimes",
    "PairReport",
    "RunReport",
    "build_report",
    "emit_csv",
    "emit_plot_script",
    "emit_summary",
    "emit_table",
    "format_size",
    "load_report",
    "parse_csv",
]
