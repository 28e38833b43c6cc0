"""
Superconductor and phonon physics.

Internal units: energies in µeV, lengths in µm, times in ns, speeds in
m/s, densities in µm⁻³. Public functions convert at their boundary only
where the argument name says so (``*_ev``, ``*_k``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import ConfigError, DomainError
from .logger import warning

K_B_UEV_PER_K = 86.173332621  # Boltzmann constant, µeV/K
BCS_RATIO = 1.764

# Γ_qp = c · n_qp. Not given by the measurement; chosen so the P(1) dip at
# n_qp = 85 µm⁻³ with a 1 µs idle is clearly resolvable.
DEFAULT_GAMMA_PER_DENSITY = 2.4e3  # s⁻¹ per µm⁻³

# Quasiparticle lifetime anchors in Al (excess energy above Δ_Al, lifetime).
GAP_AL_UEV = 180.0
GAP_NB_UEV = 1400.0
HOT_QP_LIFETIME_NS = 0.6
EXCITATION_ANCHOR_EXCESS_UEV = 53.0
EXCITATION_ANCHOR_LIFETIME_NS = 8300.0


@dataclass(frozen=True)
class MaterialProps:
    name: str
    v_longitudinal: float
    v_transverse: float
    gap: float = 0.0
    critical_temperature: float = 0.0
    pair_break_lifetime_bound: float = 0.0
    single_spin_dos: Optional[float] = None  # states / (µeV · µm³)

    def __post_init__(self) -> None:
        _check_speeds(self)
        if self.pair_break_lifetime_bound < 0:
            raise DomainError(f"{self.name}: pair_break_lifetime_bound must be >= 0")
        if self.gap < 0:
            raise DomainError(f"{self.name}: gap must be >= 0")
        if self.gap > 0:
            if self.critical_temperature <= 0:
                raise DomainError(f"{self.name}: a gapped material needs critical_temperature > 0")
            bcs = bcs_gap_from_tc(self.critical_temperature)
            if abs(self.gap - bcs) > 0.2 * bcs:
                warning(
                    f"{self.name}: gap {self.gap:.1f} µeV deviates more than 20% "
                    f"from the BCS value {bcs:.1f} µeV"
                )

    @property
    def is_superconductor(self) -> bool:
        return self.gap > 0


@dataclass(frozen=True)
class StackGeometry:
    substrate_height: float  # µm
    substrate: MaterialProps
    ground_plane: MaterialProps

    def __post_init__(self) -> None:
        if self.substrate_height <= 0:
            raise DomainError("substrate_height must be > 0")


def _check_speeds(m: MaterialProps) -> None:
    if not (m.v_longitudinal > 0 and m.v_transverse > 0):
        raise DomainError(
            f"{m.name}: phonon velocities must be positive "
            f"(v_L={m.v_longitudinal}, v_T={m.v_transverse})"
        )


def _inverse_square_sum(m: MaterialProps) -> float:
    return m.v_longitudinal ** -2 + 2.0 * m.v_transverse ** -2


def mean_phonon_velocity(m: MaterialProps) -> float:
    """(v_L⁻² + 2v_T⁻²) / (v_L⁻³ + 2v_T⁻³), in m/s."""
    _check_speeds(m)
    return _inverse_square_sum(m) / (m.v_longitudinal ** -3 + 2.0 * m.v_transverse ** -3)


def dmm_transmission(src: MaterialProps, dst: MaterialProps) -> float:
    """Diffuse-mismatch phonon transmission probability from ``src`` into ``dst``."""
    _check_speeds(src)
    _check_speeds(dst)
    a = _inverse_square_sum(src)
    b = _inverse_square_sum(dst)
    return b / (a + b)


def phonon_lifetime(
    g: StackGeometry,
    v_override: Optional[float] = None,
    p_override: Optional[float] = None,
) -> float:
    """Mean substrate phonon lifetime 4h/(v·P) + τ_b, in ns."""
    v = mean_phonon_velocity(g.substrate) if v_override is None else v_override
    p = dmm_transmission(g.substrate, g.ground_plane) if p_override is None else p_override
    if v <= 0:
        raise DomainError(f"phonon velocity must be positive, got {v}")
    if not 0 < p <= 1:
        raise DomainError(f"transmission probability must be in (0, 1], got {p}")
    # µm / (m/s) = 1e-6 s = 1e3 ns
    travel_ns = 4.0 * g.substrate_height / (v * p) * 1e3
    return travel_ns + g.ground_plane.pair_break_lifetime_bound


def bcs_gap_from_tc(tc_k: float) -> float:
    """Δ = 1.764 k_B T_c, in µeV."""
    if tc_k < 0:
        raise DomainError(f"critical temperature must be >= 0, got {tc_k}")
    return BCS_RATIO * K_B_UEV_PER_K * tc_k


def qp_count_from_energy(e_film_ev: float, gap_uev: float) -> float:
    """Number of quasiparticles N = E/Δ (not rounded)."""
    if gap_uev <= 0:
        raise DomainError(f"gap must be positive, got {gap_uev}")
    if e_film_ev < 0:
        raise DomainError(f"deposited film energy must be >= 0, got {e_film_ev}")
    return e_film_ev * 1e6 / gap_uev


def thermal_qp_density(t_k: float, m: MaterialProps) -> float:
    """Low-temperature BCS density 2N₀√(2π k_B T Δ)·exp(−Δ/k_B T), in µm⁻³."""
    if m.single_spin_dos is None:
        raise ConfigError(f"materials.{m.name}.single_spin_dos", "required for thermal densities")
    if t_k < 0:
        raise DomainError(f"temperature must be >= 0, got {t_k}")
    if t_k == 0 or m.gap == 0:
        return 0.0
    kt = K_B_UEV_PER_K * t_k
    return 2.0 * m.single_spin_dos * math.sqrt(2.0 * math.pi * kt * m.gap) * math.exp(-m.gap / kt)


def _lifetime_anchors(gap_al: float, gap_nb: float) -> tuple[float, float, float, float]:
    e_hot = gap_nb - gap_al
    return (
        math.log(e_hot),
        math.log(HOT_QP_LIFETIME_NS),
        math.log(EXCITATION_ANCHOR_EXCESS_UEV),
        math.log(EXCITATION_ANCHOR_LIFETIME_NS),
    )


def qp_lifetime_anchored(
    excess_energy_uev: float,
    gap_al: float = GAP_AL_UEV,
    gap_nb: float = GAP_NB_UEV,
) -> float:
    """QP lifetime in Al (ns) by log-log interpolation through the two anchors."""
    if excess_energy_uev <= 0:
        raise DomainError(f"excess energy must be positive, got {excess_energy_uev}")
    le_hot, lt_hot, le_cold, lt_cold = _lifetime_anchors(gap_al, gap_nb)
    slope = (lt_hot - lt_cold) / (le_hot - le_cold)
    return math.exp(lt_cold + slope * (math.log(excess_energy_uev) - le_cold))


def excitation_energy_for_lifetime(
    lifetime_ns: float,
    gap_al: float = GAP_AL_UEV,
    gap_nb: float = GAP_NB_UEV,
) -> float:
    """Inverse of :func:`qp_lifetime_anchored`: excess energy (µeV) with this lifetime."""
    if lifetime_ns <= 0:
        raise DomainError(f"lifetime must be positive, got {lifetime_ns}")
    le_hot, lt_hot, le_cold, lt_cold = _lifetime_anchors(gap_al, gap_nb)
    slope = (lt_hot - lt_cold) / (le_hot - le_cold)
    return math.exp(le_cold + (math.log(lifetime_ns) - lt_cold) / slope)


def gamma_qp(n_qp: ArrayLike, conversion: float = DEFAULT_GAMMA_PER_DENSITY) -> Union[float, NDArray[np.float64]]:
    """QP-induced relaxation rate Γ = c·n_qp, in s⁻¹ (scalar or elementwise)."""
    if conversion <= 0:
        raise ConfigError("burst.gamma_per_density", f"must be > 0, got {conversion}")
    if np.any(np.asarray(n_qp) < 0):
        raise DomainError(f"n_qp must be >= 0, got {n_qp}")
    return conversion * n_qp


def nqp_from_gamma(rate: ArrayLike, conversion: float = DEFAULT_GAMMA_PER_DENSITY) -> Union[float, NDArray[np.float64]]:
    if conversion <= 0:
        raise ConfigError("burst.gamma_per_density", f"must be > 0, got {conversion}")
    return rate / conversion


@dataclass(frozen=True)
class MaterialDatabase:
    materials: Mapping[str, MaterialProps]
    reference_values: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    def get(self, name: str) -> MaterialProps:
        try:
            return self.materials[name]
        except KeyError:
            raise ConfigError(f"materials.{name}", "unknown material") from None

    def names(self) -> list[str]:
        return sorted(self.materials)

    def quoted_mean_velocity(self, name: str) -> Optional[float]:
        return self.reference_values.get("mean_velocity", {}).get(name)

    def quoted_transmission(self, src: str, dst: str) -> Optional[float]:
        return self.reference_values.get("transmission", {}).get(f"{src}->{dst}")

    def with_dos(self, name: str, n0: float) -> "MaterialDatabase":
        """Copy of the database with a configured single-spin density of states."""
        updated: Dict[str, MaterialProps] = dict(self.materials)
        updated[name] = replace(self.get(name), single_spin_dos=n0)
        return MaterialDatabase(updated, self.reference_values)


_MATERIAL_FIELDS = {
    "v_longitudinal",
    "v_transverse",
    "gap",
    "critical_temperature",
    "pair_break_lifetime_bound",
    "single_spin_dos",
    "notes",
}


def _parse_material_db(data: dict, source: str) -> MaterialDatabase:
    if not isinstance(data, dict) or "materials" not in data:
        raise ConfigError("materials", f"{source}: missing 'materials' table")
    materials: Dict[str, MaterialProps] = {}
    for name, entry in data["materials"].items():
        unknown = set(entry) - _MATERIAL_FIELDS
        if unknown:
            raise ConfigError(f"materials.{name}.{sorted(unknown)[0]}", "unknown key")
        try:
            materials[name] = MaterialProps(
                name=name,
                v_longitudinal=float(entry["v_longitudinal"]),
                v_transverse=float(entry["v_transverse"]),
                gap=float(entry.get("gap", 0.0)),
                critical_temperature=float(entry.get("critical_temperature", 0.0)),
                pair_break_lifetime_bound=float(entry.get("pair_break_lifetime_bound", 0.0)),
                single_spin_dos=(
                    None if entry.get("single_spin_dos") is None else float(entry["single_spin_dos"])
                ),
            )
        except KeyError as e:
            raise ConfigError(f"materials.{name}.{e.args[0]}", "missing required field") from None
        except DomainError as e:
            raise ConfigError(f"materials.{name}", str(e)) from None
    refs = {k: dict(v) for k, v in data.get("reference_values", {}).items()}
    return MaterialDatabase(materials, refs)


def load_material_db(path: Optional[Path] = None) -> MaterialDatabase:
    """Load a material database; the shipped defaults when ``path`` is None."""
    if path is None:
        text = resources.files("qpburst").joinpath("data/materials.json").read_text(encoding="utf-8")
        source = "shipped materials.json"
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError("materials_db", f"file not found: {path}") from None
        source = str(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("materials_db", f"{source}: invalid JSON ({e})") from None
    return _parse_material_db(data, source)
