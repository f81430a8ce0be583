from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Optional

from ..transport.message import TransportKind

KiB = 1024
MiB = 1024 * KiB

DEFAULT_SWEEP = (
    128, 512, 1 * KiB, 2 * KiB, 4 * KiB, 8 * KiB, 32 * KiB, 128 * KiB, 512 * KiB,
    1 * MiB, 2 * MiB, 4 * MiB, 8 * MiB, 16 * MiB,
)
DEFAULT_COUNT = 2000
DEFAULT_RATE = 30.0
DEFAULT_WARMUP = 50
TOPIC = "cam0"


class Graph(enum.Enum):
    ONE_PUB_ONE_SUB = "1p1s"
    ONE_PUB_FIVE_SUB = "1p5s"
    FIVE_PUB_ONE_SUB = "5p1s"

    @property
    def publishers(self) -> list[str]:
        n = 5 if self is Graph.FIVE_PUB_ONE_SUB else 1
        return [f"pub{i}" for i in range(n)]

    @property
    def subscribers(self) -> list[str]:
        n = 5 if self is Graph.ONE_PUB_FIVE_SUB else 1
        return [f"sub{i}" for i in range(n)]


def parse_size(text) -> int:
    """``"16MiB"``, ``"512"``, ``"8k"`` -> bytes."""
    if isinstance(text, int):
        return text
    s = str(text).strip().lower().replace("ib", "").replace("b", "")
    mult = 1
    if s and s[-1] in "kmg":
        mult = {"k": KiB, "m": MiB, "g": 1024 * MiB}[s[-1]]
        s = s[:-1]
    return int(float(s) * mult)


def format_size(n: int) -> str:
    for unit, size in (("MiB", MiB), ("KiB", KiB)):
        if n >= size and n % size == 0:
            return f"{n // size}{unit}"
    return f"{n}B"


@dataclass
class Scenario:
    graph: Graph = Graph.ONE_PUB_ONE_SUB
    transport: TransportKind = TransportKind.SHM
    payload_size: int = 1 * MiB
    message_count: int = DEFAULT_COUNT
    rate_hz: float = DEFAULT_RATE
    ordered: bool = False
    pin_map: dict = field(default_factory=dict)
    nodelay: bool = False
    environment_label: str = ""
    warmup: int = DEFAULT_WARMUP
    capacity: int = 16
    segment_size: Optional[int] = None
    sweep: tuple = DEFAULT_SWEEP
    # UDP fault injection: drop chunk ``idx`` of message ``seq``.
    drop_chunk: Optional[tuple] = None

    def __post_init__(self):
        self.graph = Graph(self.graph) if not isinstance(self.graph, Graph) else self.graph
        self.transport = TransportKind.parse(self.transport)
        self.validate()

    def validate(self) -> None:
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")
        if self.message_count < 1:
            raise ValueError("message_count must be at least 1")
        if self.payload_size not in self.sweep:
            raise ValueError(f"payload {self.payload_size} not in the configured sweep")
        for role in self.pin_map:
            if role not in ("pub", "sub") and role not in self.graph.publishers + self.graph.subscribers:
                raise ValueError(f"pin map names unknown role {role!r}")

    @property
    def publishers(self) -> list[str]:
        return self.graph.publishers

    @property
    def subscribers(self) -> list[str]:
        return self.graph.subscribers

    def core_for(self, role: str) -> Optional[int]:
        if role in self.pin_map:
            return self.pin_map[role]
        return self.pin_map.get(role[:3])

    def needed_segment_size(self) -> int:
        per_image = self.payload_size + 4096
        buffers = (self.capacity * len(self.subscribers) + 4) * len(self.publishers)
        return max(64 * MiB, per_image * buffers + 16 * MiB)

    def label(self) -> str:
        bits = [self.graph.value, self.transport.value, format_size(self.payload_size)]
        if self.nodelay:
            bits.append("nodelay")
        if self.ordered:
            bits.append("ordered")
        return "-".join(bits)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["graph"] = self.graph.value
        d["transport"] = self.transport.value
        d["sweep"] = list(self.sweep)
        d["drop_chunk"] = list(self.drop_chunk) if self.drop_chunk else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        d["sweep"] = tuple(d.get("sweep") or DEFAULT_SWEEP)
        if d.get("drop_chunk"):
            d["drop_chunk"] = tuple(d["drop_chunk"])
        return cls(**d)


@dataclass(frozen=True)
class LatencyRecord:
    topic: str
    publisher_id: str
    subscriber_id: str
    seq: int
    latency_ns: int
    recv_monotonic_ns: int
