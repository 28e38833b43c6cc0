"""
Event-aligned statistics and fits.

Alignment works in µs relative to each event; TLS and correlation
analyses work in seconds of logical time.
"""
from __future__ import annotations

import math
from typing import Mapping, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import optimize, special, stats

from .errors import DomainError
from .logger import verbose, warning
from .materials import DEFAULT_GAMMA_PER_DENSITY, excitation_energy_for_lifetime, nqp_from_gamma
from .models import (
    AlignedHistogram,
    ConditionalMatrix,
    CorrelationReport,
    Direction,
    P1Series,
    QpKind,
    QpTrace,
    QubitRecords,
    RecoveryFit,
)
from .stats import agresti_coull_sigma, pooled_rate, robust_sigma

FIT_XTOL = 1e-8
FIT_MAX_ITERATIONS = 200
MIN_SIDE_BINS = 10
MAX_CONDITION = 1e14  # of JᵀJ
BOUND_TOLERANCE = 1e-3  # in log τ


# Alignment

def align_and_tally(
    records: QubitRecords,
    event_times_ns: ArrayLike,
    window: Tuple[float, float] = (200.0, 200.0),
    bin_width_us: float = 1.0,
    prep: Optional[int] = None,
) -> AlignedHistogram:
    """Tally every (record, event) pair with −before ≤ Δt < after into Δt bins."""
    before, after = window
    if before < 0 or after <= 0 or bin_width_us <= 0:
        raise DomainError("window sides must be >= 0 (after > 0) and bin width > 0")
    if prep is None:
        prep = int(records.prep[0]) if len(records) else 1
    records = records.select(records.prep == prep)
    n_bins = int(round((before + after) / bin_width_us))
    edges = -before + np.arange(n_bins + 1) * bin_width_us
    trials = np.zeros(n_bins, dtype=np.int64)
    successes = np.zeros(n_bins, dtype=np.int64)
    ev = np.asarray(event_times_ns, dtype=np.int64)
    if ev.size == 0 or len(records) == 0:
        return AlignedHistogram(edges, trials, successes, prep)

    rt = records.times_ns
    lo = np.searchsorted(rt, ev - before * 1e3, side="left")
    hi = np.searchsorted(rt, ev + after * 1e3, side="left")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        return AlignedHistogram(edges, trials, successes, prep)
    ev_idx = np.repeat(np.arange(ev.size), counts)
    offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    rec_idx = np.repeat(lo, counts) + offsets
    dt_us = (rt[rec_idx] - ev[ev_idx]) * 1e-3
    b = np.floor((dt_us + before) / bin_width_us).astype(np.int64)
    keep = (b >= 0) & (b < n_bins)
    trials = np.bincount(b[keep], minlength=n_bins).astype(np.int64)
    successes = np.bincount(b[keep], weights=records.outcome[rec_idx][keep], minlength=n_bins)
    return AlignedHistogram(edges, trials, np.rint(successes).astype(np.int64), prep)


def pre_event_baseline(h: AlignedHistogram) -> float:
    """Pooled success fraction over the Δt < 0 bins."""
    pre = h.edges_us[1:] <= 0
    return pooled_rate(h.successes[pre], h.trials[pre])


# Fitting

def _model(theta: NDArray[np.float64], t: NDArray[np.float64], sign: float, t0: float) -> NDArray[np.float64]:
    amp, log_tau, base = theta
    after = t >= t0
    out = np.full(t.shape, base)
    out[after] += sign * amp * np.exp(-(t[after] - t0) / math.exp(log_tau))
    return out


def _jacobian(theta: NDArray[np.float64], t: NDArray[np.float64], sign: float, t0: float) -> NDArray[np.float64]:
    amp, log_tau, _ = theta
    tau = math.exp(log_tau)
    after = t >= t0
    j = np.zeros((t.size, 3))
    e = np.exp(-(t[after] - t0) / tau)
    j[after, 0] = sign * e
    j[after, 1] = sign * amp * e * (t[after] - t0) / tau
    j[:, 2] = 1.0
    return j


def _initial_guess(t: NDArray[np.float64], y: NDArray[np.float64], sign: float, t0: float) -> NDArray[np.float64]:
    before = t < t0
    after = ~before
    if before.sum() >= 3:
        base = float(np.median(y[before]))
    else:
        tail = np.flatnonzero(after)[-max(3, after.sum() // 4):]
        base = float(np.median(y[tail]))
    dev = sign * (y[after] - base)
    ta = t[after] - t0
    amp = float(max(dev[: max(1, min(3, dev.size))].mean(), 1e-12))
    below = np.flatnonzero(dev < amp / math.e)
    tau = float(ta[below[0]]) if below.size and ta[below[0]] > 0 else max(float(ta.max()) / 5.0, 1e-6)
    return np.array([amp, math.log(max(tau, 1e-6)), base])


def _sample_spacing(t: NDArray[np.float64]) -> float:
    steps = np.diff(np.unique(t))
    return float(steps.min()) if steps.size else 0.0


def fit_exponential(
    t: ArrayLike,
    y: ArrayLike,
    sigma: ArrayLike,
    direction: Direction,
    t0: float = 0.0,
    min_time_constant: Optional[float] = None,
) -> RecoveryFit:
    """
    Weighted least-squares fit of baseline ± A·exp(−(t−t0)/τ) for t ≥ t0.

    τ is fitted in log space and bounded below by ``min_time_constant``
    (default: the sample spacing) and above by 100 spans of the data; A is
    bounded at 0. A fit that ends on a bound, or whose curvature matrix is
    singular, is returned as a failure. Uncertainties come from the SVD of
    the weighted Jacobian at the optimum.
    """
    direction = Direction(direction)
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    w = 1.0 / np.asarray(sigma, dtype=float)
    ok = np.isfinite(t) & np.isfinite(y) & np.isfinite(w)
    t, y, w = t[ok], y[ok], w[ok]
    n = t.size
    if n <= 3 or (t >= t0).sum() < 2:
        return RecoveryFit.failed(direction, "not enough points to fit", n)
    sign = -1.0 if direction is Direction.DIP else 1.0
    tau_min = min_time_constant if min_time_constant is not None else _sample_spacing(t)
    span = float(t.max() - t0)
    if not tau_min > 0 or span <= tau_min:
        return RecoveryFit.failed(direction, "data span too short for the time-constant bound", n)
    lower = np.array([0.0, math.log(tau_min), -np.inf])
    upper = np.array([np.inf, math.log(100.0 * span), np.inf])
    x0 = _initial_guess(t, y, sign, t0)
    x0[1] = float(np.clip(x0[1], lower[1] + 10 * BOUND_TOLERANCE, upper[1] - 10 * BOUND_TOLERANCE))

    def residuals(theta):
        return (_model(theta, t, sign, t0) - y) * w

    def jac(theta):
        return _jacobian(theta, t, sign, t0) * w[:, None]

    try:
        res = optimize.least_squares(
            residuals,
            x0,
            jac=jac,
            bounds=(lower, upper),
            method="trf",
            x_scale="jac",
            xtol=FIT_XTOL,
            ftol=FIT_XTOL,
            max_nfev=FIT_MAX_ITERATIONS,
        )
    except (ValueError, FloatingPointError) as e:
        return RecoveryFit.failed(direction, f"optimizer error: {e}", n)
    if not res.success:
        verbose(f"exponential fit did not converge: {res.message}")
        return RecoveryFit.failed(direction, str(res.message), n)
    if res.active_mask[1] < 0 or res.x[1] - lower[1] < BOUND_TOLERANCE:
        return RecoveryFit.failed(direction, f"time constant at the lower bound ({tau_min:g})", n)
    if res.active_mask[1] > 0 or upper[1] - res.x[1] < BOUND_TOLERANCE:
        return RecoveryFit.failed(direction, "time constant at the upper bound", n)
    if res.active_mask[0] != 0 or not res.x[0] > 0:
        return RecoveryFit.failed(direction, "no recovery signal (amplitude at 0)", n)
    amp, log_tau, base = res.x
    tau = math.exp(log_tau)
    _, s, vt = np.linalg.svd(res.jac, full_matrices=False)
    if s.size < 3 or s[-1] <= s[0] * MAX_CONDITION ** -0.5:
        return RecoveryFit.failed(direction, "singular curvature matrix", n)
    cov = (vt.T / s ** 2) @ vt
    errs = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    if not np.all(np.isfinite(errs)) or not math.isfinite(tau):
        return RecoveryFit.failed(direction, "non-finite parameter uncertainties", n)
    chi2 = float(np.sum(res.fun ** 2))
    return RecoveryFit(
        amplitude=float(amp),
        time_constant=tau,
        baseline=float(base),
        amplitude_err=float(errs[0]),
        time_constant_err=float(tau * errs[1]),
        baseline_err=float(errs[2]),
        reduced_chi2=chi2 / max(n - 3, 1),
        direction=direction,
        converged=True,
        iterations=int(res.nfev),
        n_points=n,
        message=str(res.message),
    )


def fit_exp_recovery(h: AlignedHistogram, direction: Direction) -> RecoveryFit:
    """Binomially weighted recovery fit of an event-aligned histogram; τ is at least one bin."""
    populated = h.trials > 0
    centres = h.centers_us
    n_before = int((populated & (centres < 0)).sum())
    n_after = int((populated & (centres >= 0)).sum())
    if n_before < MIN_SIDE_BINS or n_after < MIN_SIDE_BINS:
        raise DomainError(
            f"need {MIN_SIDE_BINS} populated bins on each side of the event, got {n_before}/{n_after}"
        )
    sigma = agresti_coull_sigma(h.successes, h.trials)
    fit = fit_exponential(
        centres[populated], h.p_hat[populated], sigma[populated], direction, 0.0, h.bin_width_us
    )
    if not fit.converged:
        warning(f"{Direction(direction).value} recovery fit failed: {fit.message}")
    return fit


def _log_mean_exp_neg(u: float, x: NDArray[np.float64]) -> float:
    """−ln mean(exp(−u·x))."""
    return float(math.log(x.size) - special.logsumexp(-u * x))


def _invert_spread(y: float, x: NDArray[np.float64], x_min: float) -> Tuple[float, float]:
    """u with −ln mean(exp(−u·x)) = y, and the slope of that map at u."""
    if y <= 0.0:
        return y, 1.0
    hi = y / x_min
    u = y if hi <= y else optimize.brentq(lambda v: _log_mean_exp_neg(v, x) - y, y, hi, xtol=1e-12 * hi)
    slope = float(np.dot(x, special.softmax(-u * x)))
    return u, slope


def extract_nqp_trace(
    h: AlignedHistogram,
    idle_us: float,
    baseline: float,
    conversion: float = DEFAULT_GAMMA_PER_DENSITY,
    energies_kev: Optional[ArrayLike] = None,
    readout_error: float = 0.0,
) -> QpTrace:
    """
    Junction density per bin from P̂(1): Γ = max(0, −ln(P̂/baseline)/idle), n = nqp_from_gamma(Γ).

    P̂ and the baseline are first corrected for a symmetric readout error.
    With ``energies_kev`` (a sample of the deposit spectrum of the aligned
    events) each bin is read as an average over that spectrum: −ln(P̂/baseline)
    is mapped back through u ↦ −ln mean(exp(−u·E/Ē)) before dividing by the
    idle, so the trace is the mean density rather than a saturated one.
    """
    if not 0 < baseline <= 1:
        raise DomainError(f"baseline must be in (0, 1], got {baseline}")
    if idle_us <= 0:
        raise DomainError(f"idle must be > 0, got {idle_us}")
    if conversion <= 0:
        raise DomainError(f"conversion must be > 0, got {conversion}")
    if not 0.0 <= readout_error < 0.5:
        raise DomainError(f"readout error must be in [0, 0.5), got {readout_error}")
    contrast = 1.0 - 2.0 * readout_error
    base = (baseline - readout_error) / contrast
    if base <= 0:
        raise DomainError(f"baseline {baseline} is at or below the readout error {readout_error}")
    p = (h.p_hat - readout_error) / contrast
    valid = (h.trials > 0) & (p > 0)
    idle_s = idle_us * 1e-6
    raw = np.full(p.shape, np.nan)
    err = np.full(p.shape, np.nan)
    y = -np.log(p[valid] / base)
    slope = np.ones_like(y)
    if energies_kev is not None:
        e = np.asarray(energies_kev, dtype=float)
        if e.size == 0 or np.any(e <= 0):
            raise DomainError("deposit energies must be a non-empty sample of positive values")
        x = e / e.mean()
        x_min = float(x.min())
        inverted = [_invert_spread(float(v), x, x_min) for v in y.tolist()]
        y = np.array([u for u, _ in inverted])
        slope = np.array([s for _, s in inverted])
    raw[valid] = nqp_from_gamma(y / idle_s, conversion)
    sig_p = agresti_coull_sigma(h.successes, h.trials) / contrast
    err[valid] = nqp_from_gamma(sig_p[valid] / (p[valid] * idle_s * slope), conversion)
    values = np.where(valid, np.maximum(raw, 0.0), np.nan)
    return QpTrace(h.centers_us, values, QpKind.JUNCTION_DENSITY, raw_values=raw, errors=err, valid=valid)


def fit_qp_trace(trace: QpTrace, t0: float = 0.0) -> RecoveryFit:
    """Fit n(t) = n₀·exp(−s·t) on the signed, unclipped estimates."""
    values = trace.raw_values if trace.raw_values is not None else trace.values
    errors = trace.errors if trace.errors is not None else np.ones_like(values)
    m = trace.valid_mask & np.isfinite(values) & np.isfinite(errors) & (errors > 0)
    return fit_exponential(trace.times_us[m], values[m], errors[m], Direction.BUMP, t0)


def excitation_energy_report(fit: RecoveryFit) -> dict:
    """Excess energy above Δ_Al whose QP lifetime matches a fitted excitation recovery."""
    if not fit.converged or not fit.time_constant > 0:
        return {"time_constant_us": None, "excess_energy_ueV": None}
    return {
        "time_constant_us": fit.time_constant,
        "excess_energy_ueV": excitation_energy_for_lifetime(fit.time_constant * 1e3),
    }


# MKID coincidences

def conditional_matrix(
    trigger_streams: Mapping[str, ArrayLike],
    coincidence_window_us: float = 100.0,
) -> ConditionalMatrix:
    """P(i | j) = fraction of channel-j events with a channel-i event within the window."""
    if len(trigger_streams) < 2:
        raise DomainError("conditional matrix needs at least two channels")
    names = tuple(trigger_streams)
    times = [np.sort(np.asarray(trigger_streams[c], dtype=np.int64)) for c in names]
    w = coincidence_window_us * 1e3
    k = len(names)
    counts = np.array([t.size for t in times], dtype=np.int64)
    coinc = np.zeros((k, k), dtype=np.int64)
    for j in range(k):
        for i in range(k):
            if i == j:
                coinc[i, j] = counts[j]
                continue
            if counts[j] == 0 or counts[i] == 0:
                continue
            lo = np.searchsorted(times[i], times[j] - w, side="left")
            hi = np.searchsorted(times[i], times[j] + w, side="right")
            coinc[i, j] = int(np.count_nonzero(hi > lo))
    with np.errstate(invalid="ignore", divide="ignore"):
        matrix = np.where(counts[None, :] > 0, coinc / np.maximum(counts[None, :], 1), np.nan)
    undefined = tuple(names[j] for j in range(k) if counts[j] == 0)
    if undefined:
        warning(f"conditional matrix: no events on {', '.join(undefined)}; their columns are undefined")
    eff = np.full(k, np.nan)
    eff_err = np.full(k, np.nan)
    for i in range(k):
        cols = [j for j in range(k) if j != i and counts[j] > 0]
        if not cols:
            continue
        p = matrix[i, cols]
        eff[i] = float(np.mean(p))
        eff_err[i] = float(math.sqrt(np.sum(p * (1.0 - p) / counts[cols])) / len(cols))
    return ConditionalMatrix(names, matrix, counts, coinc, eff, eff_err, undefined)


# TLS

def bin_p1_series(
    records: QubitRecords, bin_s: float, duration_s: Optional[float] = None
) -> P1Series:
    """Bin prep-1 records into a P(1) trace."""
    if bin_s <= 0:
        raise DomainError(f"bin width must be > 0, got {bin_s}")
    r = records.select(records.prep == 1)
    t_s = r.times_ns * 1e-9
    span = duration_s if duration_s is not None else (float(t_s.max()) if t_s.size else bin_s)
    n_bins = max(1, int(math.ceil(span / bin_s - 1e-9)))
    b = np.floor(t_s / bin_s).astype(np.int64)
    keep = (b >= 0) & (b < n_bins)
    trials = np.bincount(b[keep], minlength=n_bins).astype(np.int64)
    succ = np.bincount(b[keep], weights=r.outcome[keep], minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        p1 = np.where(trials > 0, succ / np.maximum(trials, 1), np.nan)
    return P1Series((np.arange(n_bins) + 0.5) * bin_s, p1, trials)


def detect_tls_scrambles(
    series: P1Series,
    k_sigma: float = 5.0,
    window_s: float = 1.0,
    merge_s: float = 2.0,
) -> list[float]:
    """
    Change points where the next-window mean departs from the previous one by > k·SE.

    SE is the larger of the pooled binomial error and the empirical per-bin
    scatter of the series scaled to the window, so extra-binomial wander in
    P(1) does not read as a scramble.
    """
    t = np.asarray(series.times_s, dtype=float)
    if t.size < 2:
        return []
    bin_s = float(t[1] - t[0])
    w = max(1, int(round(window_s / bin_s)))
    if t.size < 2 * w:
        raise DomainError(f"series needs at least {2 * w} bins, got {t.size}")
    trials = np.asarray(series.trials, dtype=float)
    p1 = np.nan_to_num(np.asarray(series.p1, dtype=float))
    succ = p1 * trials
    cs = np.r_[0.0, np.cumsum(succ)]
    cn = np.r_[0.0, np.cumsum(trials)]
    i = np.arange(w, t.size - w + 1)  # boundary before bin i
    s_prev, n_prev = cs[i] - cs[i - w], cn[i] - cn[i - w]
    s_next, n_next = cs[i + w] - cs[i], cn[i + w] - cn[i]
    ok = (n_prev > 0) & (n_next > 0)
    z = np.zeros(i.size)
    pool = (s_prev + s_next) / np.maximum(n_prev + n_next, 1)
    se = np.sqrt(pool * (1.0 - pool) * (1.0 / np.maximum(n_prev, 1) + 1.0 / np.maximum(n_next, 1)))
    # per-bin scatter from first differences; a step shifts only one of them
    filled = np.asarray(series.trials) > 0
    spread = robust_sigma(np.diff(p1[filled])) / math.sqrt(2.0) if filled.sum() > 2 else 0.0
    se = np.maximum(se, spread * math.sqrt(2.0 / w))
    good = ok & (se > 0)
    diff = s_next / np.maximum(n_next, 1) - s_prev / np.maximum(n_prev, 1)
    z[good] = np.abs(diff[good]) / se[good]
    cand = np.flatnonzero(z > k_sigma)
    if cand.size == 0:
        return []
    boundary_t = t[i] - 0.5 * bin_s
    out: list[float] = []
    group = [cand[0]]
    for c in cand[1:].tolist():
        if boundary_t[c] - boundary_t[group[-1]] < merge_s:
            group.append(c)
            continue
        out.append(float(boundary_t[group[int(np.argmax(z[group]))]]))
        group = [c]
    out.append(float(boundary_t[group[int(np.argmax(z[group]))]]))
    return out


def refine_change_points(fine: P1Series, times_s: ArrayLike, search_s: float) -> list[float]:
    """
    Re-locate each change point on a finer trace: within ±search_s, pick the
    split maximising |p̂_after − p̂_before|·sqrt(n_b·n_a/(n_b + n_a)).
    """
    t = np.asarray(fine.times_s, dtype=float)
    out: list[float] = []
    if t.size < 2:
        return [float(x) for x in np.asarray(times_s, dtype=float)]
    half = 0.5 * float(t[1] - t[0])
    trials = np.asarray(fine.trials, dtype=float)
    succ = np.nan_to_num(np.asarray(fine.p1, dtype=float)) * trials
    for t0 in np.asarray(times_s, dtype=float).tolist():
        lo, hi = np.searchsorted(t, [t0 - search_s, t0 + search_s])
        if hi - lo < 2:
            out.append(t0)
            continue
        cs = np.cumsum(succ[lo:hi])
        cn = np.cumsum(trials[lo:hi])
        n_b, s_b = cn[:-1], cs[:-1]
        n_a, s_a = cn[-1] - n_b, cs[-1] - s_b
        ok = (n_b > 0) & (n_a > 0)
        if not ok.any():
            out.append(t0)
            continue
        with np.errstate(invalid="ignore", divide="ignore"):
            score = np.abs(s_a / n_a - s_b / n_b) * np.sqrt(n_b * n_a / (n_b + n_a))
        score[~ok] = -np.inf
        k = int(np.argmax(score))
        out.append(float(t[lo + k + 1] - half))
    return out


def correlation_report(
    tls_times_s: ArrayLike,
    rad_times_s: ArrayLike,
    observation_span_s: float,
    exclusion_window_s: float = 0.126,
    timing_bin_s: float = 0.1,
    n_bins: int = 30,
    hist_range_s: Tuple[float, float] = (0.1, 1e4),
) -> CorrelationReport:
    """Nearest-preceding radiation Δt per TLS event against the independent-Poisson expectation."""
    if observation_span_s <= 0:
        raise DomainError(f"observation span must be > 0, got {observation_span_s}")
    tls = np.sort(np.asarray(tls_times_s, dtype=float))
    rad = np.sort(np.asarray(rad_times_s, dtype=float))
    rate = rad.size / observation_span_s
    edges = np.logspace(math.log10(hist_range_s[0]), math.log10(hist_range_s[1]), n_bins + 1)
    p_zero = math.exp(-rate * exclusion_window_s * tls.size)

    idx = np.searchsorted(rad, tls, side="right") - 1
    has = idx >= 0
    dt = np.maximum(tls[has] - rad[idx[has]] - 0.5 * timing_bin_s, 0.0)
    n_without = int((~has).sum())
    counts, _ = np.histogram(dt, bins=edges)
    expected = dt.size * (np.exp(-rate * edges[:-1]) - np.exp(-rate * edges[1:]))

    if dt.size == 0 or rate == 0:
        message = "no TLS events with a preceding radiation event" if rate > 0 else "no radiation events"
        warning(f"correlation statistics undefined: {message}")
        return CorrelationReport(
            dt, edges, counts.astype(np.int64), expected, rate, float("nan"), float("nan"),
            p_zero, int(tls.size), int(rad.size), n_without, float("nan"), False, message,
        )
    ks = stats.kstest(dt, "expon", args=(0.0, 1.0 / rate))
    return CorrelationReport(
        delta_t_s=dt,
        hist_edges_s=edges,
        hist_counts=counts.astype(np.int64),
        expected_counts=expected,
        rate_hz=rate,
        ks_statistic=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        p_zero_within_exclusion=p_zero,
        n_tls=int(tls.size),
        n_radiation=int(rad.size),
        n_without_preceding=n_without,
        min_delta_t_s=float(dt.min()),
    )
