"""Per-step trajectory records and the versioned CSV log format.

Column layout (one row per control step):

    time, x0..x{n-1}, u0..u{m-1}, stage_cost, cost_to_go,
    ess, weight_entropy, max_weight, free_energy,
    cost_mean, cost_min, cost_std, plan_time_ms

The first line of a log file is a metadata comment
``# picontrol_log_v1 key=value ...``; the second line holds the column
names.  Floats are written with ``repr`` so identical runs produce
byte-identical files (the wall-clock ``plan_time_ms`` column is excluded
from determinism comparisons).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .weights import SamplingDiagnostics

LOG_FORMAT_VERSION = "picontrol_log_v1"
TIMING_COLUMNS = ("plan_time_ms",)


@dataclass
class StepRecord:
    time: float
    state: np.ndarray
    control: np.ndarray
    stage_cost: float
    cost_to_go: float
    diagnostics: SamplingDiagnostics
    plan_time_ms: float = 0.0


@dataclass
class TrajectoryLog:
    state_dim: int
    control_dim: int
    metadata: dict = field(default_factory=dict)
    records: list[StepRecord] = field(default_factory=list)

    def append(self, record: StepRecord) -> None:
        if len(record.state) != self.state_dim \
                or len(record.control) != self.control_dim:
            raise ConfigurationError("record dimensions do not match the log")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def columns(self) -> list[str]:
        return (["time"]
                + [f"x{i}" for i in range(self.state_dim)]
                + [f"u{i}" for i in range(self.control_dim)]
                + ["stage_cost", "cost_to_go"]
                + ["ess", "weight_entropy", "max_weight", "free_energy",
                   "cost_mean", "cost_min", "cost_std"]
                + ["plan_time_ms"])

    def row(self, record: StepRecord) -> list[float]:
        d = record.diagnostics
        return ([record.time]
                + list(np.asarray(record.state, dtype=float))
                + list(np.asarray(record.control, dtype=float))
                + [record.stage_cost, record.cost_to_go,
                   d.ess, d.weight_entropy, d.max_weight, d.free_energy,
                   d.cost_mean, d.cost_min, d.cost_std,
                   record.plan_time_ms])

    def column(self, name: str) -> np.ndarray:
        idx = self.columns.index(name)
        return np.array([self.row(r)[idx] for r in self.records])

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records])

    @property
    def states(self) -> np.ndarray:
        return np.array([r.state for r in self.records])

    @property
    def controls(self) -> np.ndarray:
        return np.array([r.control for r in self.records])

    def total_cost(self) -> float:
        return float(sum(r.stage_cost for r in self.records))

    def write_csv(self, path) -> None:
        meta = " ".join(f"{k}={v}" for k, v in sorted(self.metadata.items()))
        lines = [f"# {LOG_FORMAT_VERSION} {meta}".rstrip(),
                 ",".join(self.columns)]
        for r in self.records:
            lines.append(",".join(repr(float(v)) for v in self.row(r)))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def read_csv(cls, path) -> "TrajectoryLog":
        with open(path) as fh:
            lines = [ln.rstrip("\n") for ln in fh]
        if not lines or not lines[0].startswith(f"# {LOG_FORMAT_VERSION}"):
            raise ConfigurationError(
                f"{path}: not a {LOG_FORMAT_VERSION} file")
        metadata = {}
        for token in lines[0].split()[2:]:
            key, _, value = token.partition("=")
            metadata[key] = value
        columns = lines[1].split(",")
        state_dim = sum(1 for c in columns if c.startswith("x") and c[1:].isdigit())
        control_dim = sum(1 for c in columns if c.startswith("u") and c[1:].isdigit())
        log = cls(state_dim=state_dim, control_dim=control_dim, metadata=metadata)
        for ln in lines[2:]:
            if not ln:
                continue
            vals = [float(v) for v in ln.split(",")]
            if len(vals) != len(columns):
                raise ConfigurationError(f"{path}: malformed row")
            i = 1
            state = np.array(vals[i:i + state_dim]); i += state_dim
            control = np.array(vals[i:i + control_dim]); i += control_dim
            stage_cost, cost_to_go = vals[i], vals[i + 1]; i += 2
            diag = SamplingDiagnostics(
                ess=vals[i], weight_entropy=vals[i + 1], max_weight=vals[i + 2],
                free_energy=vals[i + 3],
                cost_mean=vals[i + 4], cost_min=vals[i + 5], cost_std=vals[i + 6])
            plan_time = vals[i + 7]
            log.append(StepRecord(time=vals[0], state=state, control=control,
                                  stage_cost=stage_cost, cost_to_go=cost_to_go,
                                  diagnostics=diag, plan_time_ms=plan_time))
        return log
