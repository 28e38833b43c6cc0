from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .errors import DomainError


class QpKind(str, Enum):
    JUNCTION_DENSITY = "junction-density"
    MKID_COUNT = "mkid-count"


class Direction(str, Enum):
    DIP = "dip"
    BUMP = "bump"


# Radiation
@dataclass(frozen=True)
class RadiationEvent:
    time_ns: int
    energy_kev: float


@dataclass(frozen=True, eq=False)
class RadiationEvents:
    """Columnar, time-sorted event list."""

    times_ns: NDArray[np.int64]
    energies_kev: NDArray[np.float64]

    def __post_init__(self) -> None:
        t = np.asarray(self.times_ns, dtype=np.int64)
        e = np.asarray(self.energies_kev, dtype=np.float64)
        if t.shape != e.shape or t.ndim != 1:
            raise DomainError("event times and energies must be 1-D arrays of equal length")
        if t.size > 1 and np.any(np.diff(t) < 0):
            raise DomainError("event times must be sorted")
        object.__setattr__(self, "times_ns", t)
        object.__setattr__(self, "energies_kev", e)

    @classmethod
    def empty(cls) -> "RadiationEvents":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_events(cls, events: List[RadiationEvent]) -> "RadiationEvents":
        ordered = sorted(events, key=lambda ev: ev.time_ns)
        return cls(
            np.array([ev.time_ns for ev in ordered], dtype=np.int64),
            np.array([ev.energy_kev for ev in ordered], dtype=np.float64),
        )

    def __len__(self) -> int:
        return int(self.times_ns.size)

    def __iter__(self) -> Iterator[RadiationEvent]:
        for t, e in zip(self.times_ns.tolist(), self.energies_kev.tolist()):
            yield RadiationEvent(t, e)

    def select(self, mask: NDArray[np.bool_]) -> "RadiationEvents":
        return RadiationEvents(self.times_ns[mask], self.energies_kev[mask])


# Traces and streams
@dataclass(frozen=True, eq=False)
class QpTrace:
    times_us: NDArray[np.float64]
    values: NDArray[np.float64]
    kind: QpKind
    raw_values: Optional[NDArray[np.float64]] = None  # signed estimates before the floor at 0
    errors: Optional[NDArray[np.float64]] = None
    valid: Optional[NDArray[np.bool_]] = None

    def __post_init__(self) -> None:
        t = np.asarray(self.times_us, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape:
            raise DomainError("trace times and values differ in length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise DomainError("trace times must be strictly increasing")
        if np.any(v[np.isfinite(v)] < 0):
            raise DomainError("trace values must be >= 0")
        object.__setattr__(self, "times_us", t)
        object.__setattr__(self, "values", v)

    @property
    def valid_mask(self) -> NDArray[np.bool_]:
        if self.valid is None:
            return np.isfinite(self.values)
        return np.asarray(self.valid, dtype=bool)


@dataclass(frozen=True, eq=False)
class IqStream:
    start_time_ns: int
    bin_width_ns: int
    samples: NDArray[np.complex128]

    def __post_init__(self) -> None:
        if self.bin_width_ns <= 0:
            raise DomainError(f"bin width must be > 0, got {self.bin_width_ns}")
        s = np.asarray(self.samples, dtype=np.complex128)
        if not np.all(np.isfinite(s)):
            raise DomainError("IQ samples must be finite")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def end_time_ns(self) -> int:
        return self.start_time_ns + len(self) * self.bin_width_ns

    @property
    def times_ns(self) -> NDArray[np.int64]:
        """Bin start times."""
        return self.start_time_ns + np.arange(len(self), dtype=np.int64) * self.bin_width_ns


@dataclass(frozen=True)
class QubitRecord:
    time_ns: int
    prep: int
    outcome: int


@dataclass(frozen=True, eq=False)
class QubitRecords:
    """Columnar qubit records; times are readout midpoints."""

    times_ns: NDArray[np.int64]
    prep: NDArray[np.uint8]
    outcome: NDArray[np.uint8]

    def __post_init__(self) -> None:
        object.__setattr__(self, "times_ns", np.asarray(self.times_ns, dtype=np.int64))
        object.__setattr__(self, "prep", np.asarray(self.prep, dtype=np.uint8))
        object.__setattr__(self, "outcome", np.asarray(self.outcome, dtype=np.uint8))
        if not (self.times_ns.shape == self.prep.shape == self.outcome.shape):
            raise DomainError("qubit record columns differ in length")
        if np.any(self.prep > 1) or np.any(self.outcome > 1):
            raise DomainError("prep and outcome must be 0 or 1")

    def __len__(self) -> int:
        return int(self.times_ns.size)

    def __iter__(self) -> Iterator[QubitRecord]:
        for t, p, o in zip(self.times_ns.tolist(), self.prep.tolist(), self.outcome.tolist()):
            yield QubitRecord(t, p, o)

    def select(self, mask: NDArray[np.bool_]) -> "QubitRecords":
        return QubitRecords(self.times_ns[mask], self.prep[mask], self.outcome[mask])


@dataclass(frozen=True, eq=False)
class P1Series:
    times_s: NDArray[np.float64]  # bin centres
    p1: NDArray[np.float64]
    trials: NDArray[np.int64]


@dataclass(frozen=True)
class TlsJump:
    time_s: float
    magnitude: float


# Detection
@dataclass(frozen=True)
class TriggerEvent:
    time_ns: int
    score: float
    channel: str


@dataclass(frozen=True)
class AgreementCounts:
    matched: int
    live_only: int
    offline_only: int


# Analysis results
@dataclass(frozen=True, eq=False)
class AlignedHistogram:
    edges_us: NDArray[np.float64]
    trials: NDArray[np.int64]
    successes: NDArray[np.int64]
    prep: int

    def __post_init__(self) -> None:
        if self.trials.shape != self.successes.shape or self.edges_us.size != self.trials.size + 1:
            raise DomainError("histogram edges, trials and successes are inconsistent")
        if np.any(self.successes > self.trials):
            raise DomainError("successes exceed trials in a bin")

    @property
    def centers_us(self) -> NDArray[np.float64]:
        return 0.5 * (self.edges_us[:-1] + self.edges_us[1:])

    @property
    def bin_width_us(self) -> float:
        return float(np.min(np.diff(self.edges_us)))

    @property
    def p_hat(self) -> NDArray[np.float64]:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.trials > 0, self.successes / np.maximum(self.trials, 1), np.nan)

    @property
    def total_trials(self) -> int:
        return int(self.trials.sum())


@dataclass(frozen=True)
class RecoveryFit:
    amplitude: float
    time_constant: float  # µs
    baseline: float
    amplitude_err: float
    time_constant_err: float
    baseline_err: float
    reduced_chi2: float
    direction: Direction
    converged: bool = True
    iterations: int = 0
    n_points: int = 0
    message: str = ""

    @classmethod
    def failed(cls, direction: Direction, message: str, n_points: int = 0) -> "RecoveryFit":
        nan = float("nan")
        return cls(nan, nan, nan, nan, nan, nan, nan, direction, False, 0, n_points, message)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["direction"] = self.direction.value
        return {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in d.items()}


@dataclass(frozen=True, eq=False)
class ConditionalMatrix:
    channels: Tuple[str, ...]
    matrix: NDArray[np.float64]  # matrix[i, j] = P(i | j)
    counts: NDArray[np.int64]
    coincidences: NDArray[np.int64]
    efficiency: NDArray[np.float64]
    efficiency_err: NDArray[np.float64]
    undefined_columns: Tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class CorrelationReport:
    delta_t_s: NDArray[np.float64]
    hist_edges_s: NDArray[np.float64]
    hist_counts: NDArray[np.int64]
    expected_counts: NDArray[np.float64]
    rate_hz: float
    ks_statistic: float
    ks_pvalue: float
    p_zero_within_exclusion: float
    n_tls: int
    n_radiation: int
    n_without_preceding: int
    min_delta_t_s: float
    defined: bool = True
    message: str = ""

    def summary(self) -> dict:
        def clean(x: float) -> Optional[float]:
            return float(x) if np.isfinite(x) else None

        return {
            "rate_hz": clean(self.rate_hz),
            "ks_statistic": clean(self.ks_statistic),
            "ks_pvalue": clean(self.ks_pvalue),
            "p_zero_within_exclusion": clean(self.p_zero_within_exclusion),
            "n_tls": self.n_tls,
            "n_radiation": self.n_radiation,
            "n_without_preceding": self.n_without_preceding,
            "min_delta_t_s": clean(self.min_delta_t_s),
            "defined": self.defined,
            "message": self.message,
        }


# Run bookkeeping
@dataclass
class StageRecord:
    name: str
    files: List[str] = field(default_factory=list)
    wall_time_s: float = 0.0
    status: str = "pending"  # pending | ok | failed | skipped


@dataclass
class RunManifest:
    config_digest: str
    seed: int
    version: str
    stages: List[StageRecord] = field(default_factory=list)
    failed_stage: Optional[str] = None

    def stage(self, name: str) -> StageRecord:
        for s in self.stages:
            if s.name == name:
                return s
        rec = StageRecord(name)
        self.stages.append(rec)
        return rec

    @property
    def files(self) -> List[str]:
        return sorted(f for s in self.stages for f in s.files)

    def to_dict(self, include_wall_time: bool = True) -> Dict:
        d = asdict(self)
        if not include_wall_time:
            for s in d["stages"]:
                s.pop("wall_time_s", None)
        return d

    @classmethod
    def from_dict(cls, data: Dict) -> "RunManifest":
        stages = [StageRecord(**s) for s in data.get("stages", [])]
        return cls(data["config_digest"], data["seed"], data["version"], stages, data.get("failed_stage"))


# Plans
@dataclass(frozen=True)
class ChannelPlan:
    channel: str
    efficiency: float
    threshold_kev: float
    iq_path: Path
    live_path: Path
    detected_path: Path


@dataclass(frozen=True)
class RunEstimate:
    expected_events: float
    expected_detected: Dict[str, float]
    logical_duration_s: float
    synth_duration_s: float
    iq_samples_per_channel: int
    qubit_records: int
    tls_bins: int
    bytes_total: int
