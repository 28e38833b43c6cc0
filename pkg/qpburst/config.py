from __future__ import annotations

import json
import math
import re
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Optional, Tuple

from .errors import ConfigError

SCHEMA_VERSION = 1
_CHANNEL_NAME = re.compile(r"[A-Za-z0-9_.-]+")


def _require(cond: bool, field_path: str, message: str) -> None:
    if not cond:
        raise ConfigError(field_path, message)


@dataclass(frozen=True)
class EnergySpectrum:
    median: float = 260.0  # keV
    mean: float = 340.0  # keV
    lower_cut: float = 0.1  # keV
    upper_cut: float = 12000.0  # keV
    family: str = "lognormal"

    def __post_init__(self) -> None:
        _require(0 < self.lower_cut < self.median < self.upper_cut, "spectrum",
                 "need 0 < lower_cut < median < upper_cut")
        _require(self.mean >= self.median, "spectrum.mean", "must be >= median (right-skewed family)")
        _require(self.family in ("lognormal",), "spectrum.family", f"unknown family '{self.family}'")


@dataclass(frozen=True)
class DetectorSpec:
    name: str
    efficiency: float = 1.0
    threshold: float = 0.0  # keV

    def __post_init__(self) -> None:
        _require(bool(_CHANNEL_NAME.fullmatch(self.name)), "detectors.name",
                 f"'{self.name}' must be non-empty and use only letters, digits, '_', '.' or '-'")
        _require(0.0 <= self.efficiency <= 1.0, f"detectors.{self.name}.efficiency", "must be in [0, 1]")
        _require(self.threshold >= 0.0, f"detectors.{self.name}.threshold", "must be >= 0")


@dataclass(frozen=True)
class BurstParams:
    junction_density_per_energy: float = 240.0  # µm⁻³ per MeV
    trapping_rate: float = 1.0 / 13e-6  # s⁻¹
    excitation_recovery: float = 8.3  # µs
    excitation_peak: float = 0.05
    mkid_fast_recovery: float = 35.0  # µs
    mkid_slow_recovery: float = 2.0  # ms
    mkid_slow_fraction: float = 0.1
    film_energy_fraction: float = 6.25e-4
    gamma_per_density: float = 2.4e3  # s⁻¹ per µm⁻³

    def __post_init__(self) -> None:
        for name in ("junction_density_per_energy", "trapping_rate", "excitation_recovery",
                     "mkid_fast_recovery", "mkid_slow_recovery", "gamma_per_density"):
            _require(getattr(self, name) > 0, f"burst.{name}", "must be > 0")
        for name in ("excitation_peak", "mkid_slow_fraction"):
            _require(0.0 <= getattr(self, name) <= 1.0, f"burst.{name}", "must be in [0, 1]")
        _require(0.0 <= self.film_energy_fraction < 0.1, "burst.film_energy_fraction",
                 "must be in [0, 0.1)")

    @property
    def trapping_time_us(self) -> float:
        return 1e6 / self.trapping_rate


@dataclass(frozen=True)
class ResonatorParams:
    f0: float = 4.6875  # GHz
    qi: float = 30000.0
    qe: float = 50000.0
    hz_per_qp: float = 0.67
    probe_offset: float = 0.0  # kHz
    noise_sigma: float = 0.03  # per quadrature, 1 µs bins

    def __post_init__(self) -> None:
        _require(self.f0 > 0, "resonator.f0", "must be > 0")
        _require(self.qi > 0, "resonator.qi", "must be > 0")
        _require(self.qe > 0, "resonator.qe", "must be > 0")
        _require(self.hz_per_qp >= 0, "resonator.hz_per_qp", "must be >= 0")
        _require(self.noise_sigma >= 0, "resonator.noise_sigma", "must be >= 0")

    @property
    def q_total(self) -> float:
        return 1.0 / (1.0 / self.qi + 1.0 / self.qe)

    @property
    def linewidth_hz(self) -> float:
        return self.f0 * 1e9 / self.q_total

    @property
    def response_time_ns(self) -> float:
        """Single-pole detector time constant 1/(2π·linewidth)."""
        return 1e9 / (2.0 * math.pi * self.linewidth_hz)

    @property
    def probe_hz(self) -> float:
        return self.f0 * 1e9 + self.probe_offset * 1e3


@dataclass(frozen=True)
class QubitCycleParams:
    prep_duration: float = 0.1  # µs
    idle: float = 1.0  # µs
    readout: float = 1.0  # µs
    reset: float = 50.0  # µs
    ej_over_ec: float = 350.0
    f_q: float = 11.0  # GHz, metadata only

    def __post_init__(self) -> None:
        for name in ("prep_duration", "idle", "readout", "reset"):
            _require(getattr(self, name) > 0, f"qubit.cycle.{name}", "must be > 0")

    @property
    def period_us(self) -> float:
        return self.prep_duration + self.idle + self.readout + self.reset

    @property
    def readout_offset_us(self) -> float:
        """Readout midpoint measured from the start of a cycle."""
        return self.prep_duration + self.idle + 0.5 * self.readout


@dataclass(frozen=True)
class QubitConfig:
    cycle: QubitCycleParams = field(default_factory=QubitCycleParams)
    prep: int = 1
    p1_baseline: float = 0.95
    p_excite_baseline: float = 0.02
    readout_error: float = 0.01

    def __post_init__(self) -> None:
        _require(self.prep in (0, 1), "qubit.prep", "must be 0 or 1")
        for name in ("p1_baseline", "p_excite_baseline"):
            _require(0.0 <= getattr(self, name) <= 1.0, f"qubit.{name}", "must be in [0, 1]")
        _require(0.0 <= self.readout_error < 0.5, "qubit.readout_error", "must be in [0, 0.5)")


@dataclass(frozen=True)
class TriggerConfig:
    live_window: int = 256  # samples
    live_outer_radius: float = 2.0  # σ
    live_com_threshold: float = 3.0  # σ
    live_baseline_samples: int = 1000
    offline_threshold: float = 8.0  # σ
    pulse_polarity: int = 1  # sign of the |S21| excursion; on resonance it rises
    template_tau: float = 35.0  # µs
    template_length: float = 5.0  # template time constants
    holdoff: float = 20.0  # µs
    rearm_level: float = 4.0  # σ; score must drop below this before the next trigger
    highpass_cutoff: float = 100.0  # Hz
    lowpass_cutoff: float = 2.0e5  # Hz
    sigma_window_us: float = 1.0e5

    def __post_init__(self) -> None:
        _require(self.live_window > 0, "trigger.live_window", "must be > 0")
        _require(self.live_baseline_samples >= 1000, "trigger.live_baseline_samples", "must be >= 1000")
        for name in ("live_outer_radius", "live_com_threshold", "offline_threshold",
                     "template_tau", "template_length", "sigma_window_us"):
            _require(getattr(self, name) > 0, f"trigger.{name}", "must be > 0")
        _require(self.holdoff >= 0, "trigger.holdoff", "must be >= 0")
        _require(0 <= self.rearm_level < self.offline_threshold, "trigger.rearm_level",
                 "need 0 <= rearm_level < offline_threshold")
        _require(self.pulse_polarity in (-1, 1), "trigger.pulse_polarity", "must be 1 or -1")
        _require(0 < self.highpass_cutoff < self.lowpass_cutoff, "trigger.highpass_cutoff",
                 "need 0 < highpass_cutoff < lowpass_cutoff")


@dataclass(frozen=True)
class AnalysisConfig:
    window_before_us: float = 200.0
    window_after_us: float = 200.0
    bin_width_us: float = 1.0
    coincidence_window_us: float = 100.0
    reference_channel: Optional[str] = None
    tls_k_sigma: float = 5.0
    tls_window_s: float = 1.0
    tls_merge_s: float = 2.0
    exclusion_window_s: float = 0.126
    correlation_bins: int = 30
    saturation_correction: bool = True  # read n_qp as an average over the deposit spectrum
    energy_floor_kev: float = 40.0  # lowest deposit the reference channel detects

    def __post_init__(self) -> None:
        for name in ("window_before_us", "window_after_us", "bin_width_us", "coincidence_window_us",
                     "tls_k_sigma", "tls_window_s", "exclusion_window_s"):
            _require(getattr(self, name) > 0, f"analysis.{name}", "must be > 0")
        _require(self.tls_merge_s >= 0, "analysis.tls_merge_s", "must be >= 0")
        _require(self.correlation_bins > 0, "analysis.correlation_bins", "must be > 0")
        _require(self.energy_floor_kev >= 0, "analysis.energy_floor_kev", "must be >= 0")


@dataclass(frozen=True)
class TlsConfig:
    enabled: bool = True
    duration_s: Optional[float] = None  # logical monitoring span, defaults to the run duration
    jump_rate_hz: float = 371.0 / (430.0 * 3600.0)
    jump_magnitude: float = 0.2
    p1_level: float = 0.5
    bin_s: float = 0.1
    fine_bin_s: float = 0.01

    def __post_init__(self) -> None:
        _require(self.duration_s is None or self.duration_s > 0, "tls.duration_s", "must be > 0")
        _require(self.jump_rate_hz >= 0, "tls.jump_rate_hz", "must be >= 0")
        _require(0.0 <= self.p1_level <= 1.0, "tls.p1_level", "must be in [0, 1]")
        _require(abs(self.jump_magnitude) <= 0.5, "tls.jump_magnitude", "must be within ±0.5")
        _require(0.0 <= self.p1_level + self.jump_magnitude <= 1.0, "tls.jump_magnitude",
                 "p1_level + jump_magnitude must stay within [0, 1]")
        _require(self.bin_s > 0 and self.fine_bin_s > 0, "tls.bin_s", "bin widths must be > 0")
        ratio = self.bin_s / self.fine_bin_s if self.fine_bin_s > 0 else 0.0
        _require(ratio >= 1 and abs(ratio - round(ratio)) < 1e-9, "tls.fine_bin_s",
                 "bin_s must be a whole multiple of fine_bin_s")

    @property
    def coarsen_factor(self) -> int:
        return int(round(self.bin_s / self.fine_bin_s))


def _default_detectors() -> Tuple[DetectorSpec, ...]:
    return (
        DetectorSpec("mkid_1b", 0.90),
        DetectorSpec("mkid_1d", 0.89),
        DetectorSpec("mkid_4c", 0.50),
    )


@dataclass(frozen=True)
class RunConfig:
    seed: int
    schema_version: int = SCHEMA_VERSION
    duration_s: float = 60.0
    rate_hz: float = 1.0 / 131.0
    time_compression: float = 1.0
    compression_guard_us: float = 1000.0
    bin_width_ns: float = 1000.0
    chunk_samples: int = 1 << 20
    workers: int = 4
    spectrum: EnergySpectrum = field(default_factory=EnergySpectrum)
    detectors: Tuple[DetectorSpec, ...] = field(default_factory=_default_detectors)
    burst: BurstParams = field(default_factory=BurstParams)
    resonator: ResonatorParams = field(default_factory=ResonatorParams)
    mkid_material: str = "grAl"
    materials_db: Optional[str] = None
    qubit: QubitConfig = field(default_factory=QubitConfig)
    trigger: TriggerConfig = field(default_factory=TriggerConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    tls: TlsConfig = field(default_factory=TlsConfig)
    output_dir: str = "runs/qpburst"

    def __post_init__(self) -> None:
        _require(self.schema_version == SCHEMA_VERSION, "schema_version",
                 f"unsupported version {self.schema_version} (expected {SCHEMA_VERSION})")
        _require(self.seed >= 0, "seed", "must be >= 0")
        _require(self.duration_s > 0, "duration_s", "must be > 0")
        _require(self.rate_hz >= 0, "rate_hz", "must be >= 0")
        _require(self.time_compression >= 1, "time_compression", "must be >= 1")
        _require(self.compression_guard_us > 0, "compression_guard_us", "must be > 0")
        _require(self.bin_width_ns > 0 and float(self.bin_width_ns).is_integer(), "bin_width_ns",
                 "must be a positive whole number of nanoseconds")
        _require(self.chunk_samples > 0, "chunk_samples", "must be > 0")
        _require(self.workers >= 1, "workers", "must be >= 1")
        _require(len(self.detectors) >= 1, "detectors", "need at least one MKID channel")
        names = [d.name for d in self.detectors]
        _require(len(set(names)) == len(names), "detectors", "channel names must be unique")
        ref = self.analysis.reference_channel
        _require(ref is None or ref in names, "analysis.reference_channel", f"unknown channel '{ref}'")
        _require(self.tls.duration_s is None or self.tls.duration_s <= self.duration_s, "tls.duration_s",
                 "must not exceed duration_s")

    @property
    def reference_channel(self) -> str:
        return self.analysis.reference_channel or self.detectors[0].name

    @property
    def tls_duration_s(self) -> float:
        return self.tls.duration_s if self.tls.duration_s is not None else self.duration_s

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)

    def with_output_dir(self, out: str) -> "RunConfig":
        return replace(self, output_dir=out)

    def to_dict(self, portable: bool = False) -> dict:
        d = asdict(self)
        if portable:
            d.pop("output_dir")
        return d

    def to_json(self, portable: bool = False) -> str:
        """
        Canonical serialization. The run directory stores the ``portable``
        form (no output directory) so a run can be moved or repeated elsewhere.
        """
        return json.dumps(self.to_dict(portable), sort_keys=True, indent=2) + "\n"


# Parsing

def _check_scalar(value: Any, hint: Any, path: str) -> Any:
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _check_scalar(value, args[0], path)
    if hint is bool:
        _require(isinstance(value, bool), path, "expected true/false")
        return value
    if hint is int:
        _require(isinstance(value, int) and not isinstance(value, bool), path, "expected an integer")
        return value
    if hint is float:
        _require(isinstance(value, (int, float)) and not isinstance(value, bool), path, "expected a number")
        _require(math.isfinite(value), path, "must be finite")
        return float(value)
    if hint is str:
        _require(isinstance(value, str), path, "expected a string")
        return value
    return value


def _build(cls: type, data: Any, path: str) -> Any:
    _require(isinstance(data, dict), path or "config", "expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")
    kwargs: dict[str, Any] = {}
    for name, f in known.items():
        sub = f"{path}.{name}" if path else name
        if name not in data:
            if f.default is MISSING and f.default_factory is MISSING:  # type: ignore[misc]
                raise ConfigError(sub, "required")
            continue
        hint = hints[name]
        value = data[name]
        if is_dataclass(hint):
            kwargs[name] = _build(hint, value, sub)
        elif typing.get_origin(hint) is tuple:
            item_type = typing.get_args(hint)[0]
            _require(isinstance(value, list), sub, "expected a list")
            kwargs[name] = tuple(_build(item_type, v, f"{sub}[{i}]") for i, v in enumerate(value))
        else:
            kwargs[name] = _check_scalar(value, hint, sub)
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def load_config(path: Path, seed: Optional[int] = None, output_dir: Optional[str] = None) -> RunConfig:
    """Load and validate a run config; ``seed``/``output_dir`` override the file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"invalid JSON ({e})") from None
    if isinstance(data, dict) and seed is not None:
        data = {**data, "seed": seed}
    cfg = config_from_dict(data)
    if output_dir is not None:
        cfg = cfg.with_output_dir(output_dir)
    return cfg
