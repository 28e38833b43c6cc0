"""
Quasiparticle burst dynamics.

Evaluation times are in ns on the same clock as the event times. All
functions accept scalars or arrays and return the same shape.
"""
from __future__ import annotations

from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .config import BurstParams
from .errors import DomainError
from .materials import gamma_qp
from .models import QpKind, QpTrace, RadiationEvents

# exp(-40) ≈ 4e-18
TRUNCATION_DECAY_CONSTANTS = 40.0

Scalar = Union[float, NDArray[np.float64]]


def _as_times(t_ns: ArrayLike) -> tuple[NDArray[np.float64], bool]:
    arr = np.asarray(t_ns, dtype=np.float64)
    return np.atleast_1d(arr), arr.ndim == 0


def _shape_out(out: NDArray[np.float64], scalar: bool) -> Scalar:
    return float(out[0]) if scalar else out


def decay_sum(
    t_ns: NDArray[np.float64],
    event_times_ns: NDArray[np.int64],
    amplitudes: NDArray[np.float64],
    tau_ns: float,
) -> NDArray[np.float64]:
    """Σ Aᵢ·exp(−(t−tᵢ)/τ) over events with tᵢ ≤ t."""
    out = np.zeros_like(t_ns, dtype=np.float64)
    if event_times_ns.size == 0 or t_ns.size == 0:
        return out
    order = None
    ts = t_ns
    if ts.size > 1 and np.any(np.diff(ts) < 0):
        order = np.argsort(ts, kind="stable")
        ts = ts[order]
    horizon = TRUNCATION_DECAY_CONSTANTS * tau_ns
    # events that can reach any evaluation time
    first = np.searchsorted(event_times_ns, ts[0] - horizon, side="left")
    last = np.searchsorted(event_times_ns, ts[-1], side="right")
    acc = np.zeros_like(ts)
    for ti, ai in zip(event_times_ns[first:last].tolist(), amplitudes[first:last].tolist()):
        lo = np.searchsorted(ts, ti, side="left")
        hi = np.searchsorted(ts, ti + horizon, side="right")
        if hi > lo:
            acc[lo:hi] += ai * np.exp(-(ts[lo:hi] - ti) / tau_ns)
    if order is None:
        return acc
    out[order] = acc
    return out


def junction_nqp(
    t_ns: ArrayLike, events: RadiationEvents, p: BurstParams, baseline: float = 0.0
) -> Scalar:
    """Junction QP density (µm⁻³) under first-order trapping ṅ = −s·n."""
    ts, scalar = _as_times(t_ns)
    amplitudes = p.junction_density_per_energy * events.energies_kev * 1e-3
    tau_ns = 1e9 / p.trapping_rate
    return _shape_out(baseline + decay_sum(ts, events.times_ns, amplitudes, tau_ns), scalar)


def mkid_initial_count(energies_kev: ArrayLike, p: BurstParams, gap_uev: float) -> NDArray[np.float64]:
    """N = film_energy_fraction·E/Δ for each deposit."""
    if gap_uev <= 0:
        raise DomainError(f"gap must be positive, got {gap_uev}")
    e_film_ev = p.film_energy_fraction * np.asarray(energies_kev, dtype=float) * 1e3
    return e_film_ev * 1e6 / gap_uev


def mkid_qp_count(t_ns: ArrayLike, events: RadiationEvents, p: BurstParams, gap_uev: float) -> Scalar:
    """MKID film QP count with bi-exponential (fast + slow) recovery."""
    ts, scalar = _as_times(t_ns)
    n0 = mkid_initial_count(events.energies_kev, p, gap_uev)
    fast = decay_sum(ts, events.times_ns, n0 * (1.0 - p.mkid_slow_fraction), p.mkid_fast_recovery * 1e3)
    out = fast
    if p.mkid_slow_fraction > 0:
        out = out + decay_sum(ts, events.times_ns, n0 * p.mkid_slow_fraction, p.mkid_slow_recovery * 1e6)
    return _shape_out(out, scalar)


def p1_survival(
    t_ns: ArrayLike,
    events: RadiationEvents,
    p: BurstParams,
    idle_us: float,
    p1_baseline: float,
    baseline_density: float = 0.0,
) -> Scalar:
    """P(1) after an idle of ``idle_us``: p1_baseline·exp(−Γ_qp·idle)."""
    if idle_us <= 0:
        raise DomainError(f"idle must be > 0, got {idle_us}")
    if not 0.0 <= p1_baseline <= 1.0:
        raise DomainError(f"p1_baseline must be in [0, 1], got {p1_baseline}")
    n = np.atleast_1d(junction_nqp(t_ns, events, p, baseline_density))
    out = p1_baseline * np.exp(-gamma_qp(n, p.gamma_per_density) * idle_us * 1e-6)
    return _shape_out(out, np.ndim(t_ns) == 0)


def time_since_last_event_us(t_ns: ArrayLike, event_times_ns: NDArray[np.int64]) -> Scalar:
    """Δt to the most recent event at or before t, +inf when there is none."""
    ts, scalar = _as_times(t_ns)
    idx = np.searchsorted(event_times_ns, ts, side="right") - 1
    out = np.full(ts.shape, np.inf)
    has = idx >= 0
    out[has] = (ts[has] - event_times_ns[idx[has]]) * 1e-3
    return _shape_out(out, scalar)


def p_excite(delta_t_us: ArrayLike, p: BurstParams, p0_baseline_excitation: float) -> Scalar:
    """Excitation probability: baseline + peak·exp(−Δt/τ) for Δt ≥ 0."""
    if p0_baseline_excitation + p.excitation_peak > 1.0:
        raise DomainError("excitation baseline plus peak exceeds 1")
    dt, scalar = _as_times(delta_t_us)
    out = np.full(dt.shape, p0_baseline_excitation)
    after = dt >= 0
    out[after] += p.excitation_peak * np.exp(-dt[after] / p.excitation_recovery)
    return _shape_out(out, scalar)


def qp_trace(
    times_us: ArrayLike,
    events: RadiationEvents,
    p: BurstParams,
    kind: QpKind = QpKind.JUNCTION_DENSITY,
    gap_uev: Optional[float] = None,
) -> QpTrace:
    t = np.asarray(times_us, dtype=float)
    t_ns = t * 1e3
    if kind is QpKind.JUNCTION_DENSITY:
        values = np.atleast_1d(junction_nqp(t_ns, events, p))
    else:
        if gap_uev is None:
            raise DomainError("an MKID count trace needs the film gap")
        values = np.atleast_1d(mkid_qp_count(t_ns, events, p, gap_uev))
    return QpTrace(t, values, kind)
