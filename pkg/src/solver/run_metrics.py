from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import List, Optional

import pandas as pd

TRACE_COLUMNS = [
    "iteration",
    "wall_seconds",
    "lb",
    "ub",
    "gap",
    "sawtooth_count",
    "support_sizes",
    "belief_sizes",
]


class RunStatus(str, Enum):
    GAP_REACHED = "gap_reached"
    TIME_LIMIT = "time_limit"
    GRID_TOO_LARGE = "grid_too_large"
    STALLED = "stalled"
    MAX_ITERATIONS = "max_iterations"


@dataclass
class IterationRecord:
    """Bounds at b0 after one backward pass."""
    iteration: int
    wall_seconds: float
    lb: float
    ub: float
    gap: float
    sawtooth_count: int
    support_sizes: List[int] = field(default_factory=list)
    belief_sizes: List[int] = field(default_factory=list)


@dataclass
class RunMetrics:
    """Per-iteration trace of a solver run and its terminal status."""
    records: List[IterationRecord] = field(default_factory=list)
    status: Optional[RunStatus] = None

    def record(self, entry: IterationRecord):
        if self.records:
            previous = self.records[-1]
            if entry.wall_seconds < previous.wall_seconds:
                raise ValueError("wall_seconds went backwards")
            if entry.sawtooth_count < previous.sawtooth_count:
                raise ValueError("sawtooth count went backwards")
        self.records.append(entry)

    @property
    def final(self) -> Optional[IterationRecord]:
        return self.records[-1] if self.records else None

    @property
    def iterations(self) -> int:
        return len(self.records)

    def gap_change(self) -> Optional[float]:
        """|gap_prev − gap_now| over the last two records."""
        if len(self.records) < 2:
            return None
        return abs(self.records[-2].gap - self.records[-1].gap)

    def to_frame(self) -> pd.DataFrame:
        """Trace as a DataFrame; list columns are joined with ';'."""
        rows = []
        for entry in self.records:
            row = asdict(entry)
            row["support_sizes"] = ";".join(str(n) for n in entry.support_sizes)
            row["belief_sizes"] = ";".join(str(n) for n in entry.belief_sizes)
            rows.append(row)
        return pd.DataFrame(rows, columns=TRACE_COLUMNS)
