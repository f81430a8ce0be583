from __future__ import annotations

import math
import statistics
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

QUANTILES = (
    ("min", 0.0),
    ("p25", 0.25),
    ("median", 0.5),
    ("p75", 0.75),
    ("p95", 0.95),
    ("p99", 0.99),
    ("max", 1.0),
)


def nearest_rank(sorted_values: Sequence, q: float):
    """Nearest-rank quantile of already sorted data: element ceil(q*N), 1-based."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("quantile of empty data")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile {q} outside [0, 1]")
    idx = max(0, math.ceil(q * n) - 1)
    return sorted_values[min(idx, n - 1)]


@dataclass(frozen=True)
class Quantiles:
    count: int
    min: int
    p25: int
    median: int
    p75: int
    p95: int
    p99: int
    max: int

    @classmethod
    def of(cls, values: Iterable[int]) -> "Quantiles":
        data = sorted(values)
        if not data:
            raise ValueError("no latency values")
        return cls(len(data), *(nearest_rank(data, q) for _, q in QUANTILES))


def compute_stats(records, warmup: int = 0) -> dict:
    """Quantiles per (publisher_id, subscriber_id).

    Records with ``seq < warmup`` are excluded; a pair with nothing left after
    the cut falls back to all of its records.
    """
    records = list(records)
    if not records:
        raise ValueError("compute_stats needs at least one record")
    groups: dict = defaultdict(list)
    kept: dict = defaultdict(list)
    for r in records:
        key = (r.publisher_id, r.subscriber_id)
        groups[key].append(r.latency_ns)
        if r.seq >= warmup:
            kept[key].append(r.latency_ns)
    return {key: Quantiles.of(kept.get(key) or vals) for key, vals in groups.items()}


def fairness_gap(stats: dict) -> int:
    """Spread between the best and worst median across pairs."""
    medians = [q.median for q in stats.values()]
    return max(medians) - min(medians) if medians else 0


def coefficient_of_variation(values: Sequence[float]) -> float:
    if len(values) < 2:
        raise ValueError("need at least two values")
    mean = statistics.fmean(values)
    if mean == 0:
        return math.inf
    return statistics.pstdev(values) / mean


def inter_arrivals(recv_times: Sequence[int]) -> list[int]:
    ts = sorted(recv_times)
    return [b - a for a, b in zip(ts, ts[1:])]
