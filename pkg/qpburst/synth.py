"""
Measurement-stream synthesis: MKID IQ samples and qubit records.

Streams are generated on the synthesis timeline (ns). When a run uses
time compression, callers map event times onto that timeline with
:class:`TimeCompression` and map outputs back afterwards.
"""
from __future__ import annotations

import math
from typing import Iterator, List, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .burst import decay_sum, mkid_initial_count, p1_survival, p_excite, time_since_last_event_us
from .config import BurstParams, QubitCycleParams, ResonatorParams
from .errors import DomainError
from .models import IqStream, P1Series, QubitRecords, RadiationEvents, TlsJump
from .utils import derive_rng

NOISE_BLOCK_SAMPLES = 65_536
DEFAULT_BIN_WIDTH_NS = 1000


def s21(freq_hz: ArrayLike, r: ResonatorParams, freq_shift_hz: ArrayLike = 0.0):
    """Notch-type transmission 1 − (Q/Qe)/(1 + 2iQ(f − f0 − δf)/f0)."""
    f0 = r.f0 * 1e9
    q = r.q_total
    x = (np.asarray(freq_hz, dtype=float) - f0 - np.asarray(freq_shift_hz, dtype=float)) / f0
    out = 1.0 - (q / r.qe) / (1.0 + 2j * q * x)
    return complex(out) if np.ndim(out) == 0 else out


def _filtered_decay(
    t_ns: NDArray[np.float64],
    event_times_ns: NDArray[np.int64],
    amplitudes: NDArray[np.float64],
    tau_decay_ns: float,
    tau_response_ns: float,
) -> NDArray[np.float64]:
    """A·exp(−t/τd) seen through a single-pole response of time constant τr."""
    if math.isclose(tau_decay_ns, tau_response_ns, rel_tol=1e-9):
        # equal constants: detune so the closed form stays finite
        tau_response_ns = tau_decay_ns * (1.0 - 1e-6)
    k = tau_decay_ns / (tau_decay_ns - tau_response_ns)
    slow = decay_sum(t_ns, event_times_ns, amplitudes * k, tau_decay_ns)
    fast = decay_sum(t_ns, event_times_ns, amplitudes * k, tau_response_ns)
    return slow - fast


def detected_qp_count(
    t_ns: ArrayLike,
    events: RadiationEvents,
    r: ResonatorParams,
    p: BurstParams,
    gap_uev: float,
) -> NDArray[np.float64]:
    """MKID QP count after the detector's single-pole response."""
    ts = np.atleast_1d(np.asarray(t_ns, dtype=float))
    n0 = mkid_initial_count(events.energies_kev, p, gap_uev)
    tau_r = r.response_time_ns
    out = _filtered_decay(ts, events.times_ns, n0 * (1.0 - p.mkid_slow_fraction), p.mkid_fast_recovery * 1e3, tau_r)
    if p.mkid_slow_fraction > 0:
        out += _filtered_decay(ts, events.times_ns, n0 * p.mkid_slow_fraction, p.mkid_slow_recovery * 1e6, tau_r)
    return out


def sample_count(duration_s: float, bin_width_ns: int) -> int:
    if duration_s <= 0:
        raise DomainError(f"duration must be > 0, got {duration_s}")
    if bin_width_ns <= 0:
        raise DomainError(f"bin width must be > 0, got {bin_width_ns}")
    return int(math.ceil(round(duration_s * 1e9) / bin_width_ns))


def _noise(seed: int, channel: str, i0: int, i1: int, sigma: float) -> NDArray[np.complex128]:
    """Gaussian IQ noise for absolute samples [i0, i1), drawn in fixed blocks."""
    out = np.empty(i1 - i0, dtype=np.complex128)
    if sigma == 0:
        out[:] = 0
        return out
    b0 = i0 // NOISE_BLOCK_SAMPLES
    b1 = (i1 - 1) // NOISE_BLOCK_SAMPLES
    pos = 0
    for b in range(b0, b1 + 1):
        block = derive_rng(seed, "noise", channel, b).standard_normal((NOISE_BLOCK_SAMPLES, 2))
        lo = max(i0, b * NOISE_BLOCK_SAMPLES) - b * NOISE_BLOCK_SAMPLES
        hi = min(i1, (b + 1) * NOISE_BLOCK_SAMPLES) - b * NOISE_BLOCK_SAMPLES
        n = hi - lo
        out[pos:pos + n] = sigma * (block[lo:hi, 0] + 1j * block[lo:hi, 1])
        pos += n
    return out


def iter_iq_chunks(
    events: RadiationEvents,
    r: ResonatorParams,
    p: BurstParams,
    gap_uev: float,
    duration_s: float,
    seed: int,
    channel: str = "mkid",
    bin_width_ns: int = DEFAULT_BIN_WIDTH_NS,
    chunk_samples: int = 1 << 20,
    start_time_ns: int = 0,
) -> Iterator[IqStream]:
    """Consecutive IQ chunks; their concatenation does not depend on ``chunk_samples``."""
    if chunk_samples <= 0:
        raise DomainError(f"chunk_samples must be > 0, got {chunk_samples}")
    total = sample_count(duration_s, bin_width_ns)
    probe = r.probe_hz
    for i0 in range(0, total, chunk_samples):
        i1 = min(total, i0 + chunk_samples)
        idx = np.arange(i0, i1, dtype=np.float64)
        centres = start_time_ns + (idx + 0.5) * bin_width_ns
        shift = -r.hz_per_qp * detected_qp_count(centres, events, r, p, gap_uev)
        clean = s21(probe, r, shift)
        samples = clean + _noise(seed, channel, i0, i1, r.noise_sigma)
        yield IqStream(start_time_ns + i0 * bin_width_ns, bin_width_ns, samples)


def synth_iq_stream(
    events: RadiationEvents,
    r: ResonatorParams,
    p: BurstParams,
    gap_uev: float,
    duration_s: float,
    seed: int,
    channel: str = "mkid",
    bin_width_ns: int = DEFAULT_BIN_WIDTH_NS,
    start_time_ns: int = 0,
) -> IqStream:
    chunks = list(
        iter_iq_chunks(events, r, p, gap_uev, duration_s, seed, channel, bin_width_ns, start_time_ns=start_time_ns)
    )
    samples = np.concatenate([c.samples for c in chunks]) if chunks else np.zeros(0, dtype=np.complex128)
    return IqStream(start_time_ns, bin_width_ns, samples)


# Qubit

def readout_times_ns(cycle: QubitCycleParams, duration_s: float, start_ns: int = 0) -> NDArray[np.int64]:
    """Readout midpoints of every complete cycle in the window."""
    period_ns = cycle.period_us * 1e3
    n = int(math.floor(duration_s * 1e9 / period_ns + 1e-9))
    k = np.arange(n, dtype=np.float64)
    return start_ns + np.rint(k * period_ns + cycle.readout_offset_us * 1e3).astype(np.int64)


def inject_tls_jumps(
    p1_series: ArrayLike,
    times: ArrayLike,
    jump_times: Sequence[float],
    magnitudes: Sequence[float],
) -> NDArray[np.float64]:
    """Add a step of ``magnitudes[k]`` from ``jump_times[k]`` onward (same clock as ``times``)."""
    if len(jump_times) != len(magnitudes):
        raise DomainError("jump_times and magnitudes differ in length")
    base = np.array(p1_series, dtype=float, copy=True)
    t = np.asarray(times, dtype=float)
    if not len(jump_times):
        return base
    jt = np.asarray(jump_times, dtype=float)
    order = np.argsort(jt, kind="stable")
    steps = np.cumsum(np.asarray(magnitudes, dtype=float)[order])
    idx = np.searchsorted(jt[order], t, side="right") - 1
    base[idx >= 0] += steps[idx[idx >= 0]]
    if np.any(base < -1e-12) or np.any(base > 1 + 1e-12):
        raise DomainError("TLS jumps push P(1) outside [0, 1]")
    return np.clip(base, 0.0, 1.0)


def synth_qubit_stream(
    events: RadiationEvents,
    cycle: QubitCycleParams,
    prep: int,
    p: BurstParams,
    duration_s: float,
    seed: int,
    p1_baseline: float = 0.95,
    p0_baseline_excitation: float = 0.02,
    readout_error: float = 0.01,
    jumps: Sequence[TlsJump] = (),
    start_ns: int = 0,
) -> QubitRecords:
    """Prepare–idle–measure records tiling the window with a constant period."""
    if prep not in (0, 1):
        raise DomainError(f"prep must be 0 or 1, got {prep}")
    times = readout_times_ns(cycle, duration_s, start_ns)
    if prep == 1:
        level = np.full(times.size, p1_baseline)
        if jumps:
            level = inject_tls_jumps(
                level, times * 1e-9, [j.time_s for j in jumps], [j.magnitude for j in jumps]
            )
        prob = level * np.atleast_1d(p1_survival(times, events, p, cycle.idle, 1.0))
    else:
        dt = np.atleast_1d(time_since_last_event_us(times, events.times_ns))
        prob = np.atleast_1d(p_excite(dt, p, p0_baseline_excitation))
    rng = derive_rng(seed, "qubit", prep)
    outcome = rng.random(times.size) < prob
    flips = rng.random(times.size) < readout_error
    outcome ^= flips
    return QubitRecords(times, np.full(times.size, prep, dtype=np.uint8), outcome.astype(np.uint8))


def sample_tls_jumps(
    rate_hz: float, duration_s: float, magnitude: float, seed: int
) -> List[TlsJump]:
    """Poisson jump times with alternating sign so the level returns to where it started."""
    if rate_hz < 0 or duration_s <= 0:
        raise DomainError("TLS jump rate must be >= 0 and duration > 0")
    rng = derive_rng(seed, "tls_jumps")
    n = int(rng.poisson(rate_hz * duration_s))
    times = np.sort(rng.uniform(0.0, duration_s, size=n))
    return [TlsJump(float(t), magnitude if k % 2 == 0 else -magnitude) for k, t in enumerate(times)]


def synth_p1_series(
    duration_s: float,
    bin_s: float,
    cycle: QubitCycleParams,
    p1_level: float,
    jumps: Sequence[TlsJump],
    seed: int,
) -> P1Series:
    """Binned P(1) monitoring trace: one binomial draw per bin."""
    if bin_s <= 0 or duration_s < bin_s:
        raise DomainError("need 0 < bin_s <= duration_s")
    n_bins = int(math.floor(duration_s / bin_s + 1e-9))
    trials_per_bin = int(math.floor(bin_s * 1e6 / cycle.period_us))
    if trials_per_bin < 1:
        raise DomainError(f"bin of {bin_s} s holds no complete cycle")
    centres = (np.arange(n_bins) + 0.5) * bin_s
    level = inject_tls_jumps(
        np.full(n_bins, p1_level), centres, [j.time_s for j in jumps], [j.magnitude for j in jumps]
    )
    rng = derive_rng(seed, "tls_p1", int(round(bin_s * 1e6)))
    trials = np.full(n_bins, trials_per_bin, dtype=np.int64)
    successes = rng.binomial(trials, level)
    return P1Series(centres, successes / trials, trials)


def coarsen_p1_series(fine: P1Series, factor: int) -> P1Series:
    """Sum trials and successes over ``factor`` consecutive bins; a trailing partial bin is dropped."""
    if factor < 1:
        raise DomainError(f"factor must be >= 1, got {factor}")
    n = fine.trials.size // factor
    trials = np.asarray(fine.trials[: n * factor], dtype=np.int64)
    succ = np.rint(np.nan_to_num(fine.p1[: n * factor]) * trials).astype(np.int64)
    trials = trials.reshape(n, factor).sum(axis=1)
    succ = succ.reshape(n, factor).sum(axis=1)
    times = np.asarray(fine.times_s[: n * factor], dtype=float).reshape(n, factor).mean(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p1 = np.where(trials > 0, succ / np.maximum(trials, 1), np.nan)
    return P1Series(times, p1, trials)


class TimeCompression:
    """
    Monotone piecewise-linear map between logical time and the synthesis timeline.

    Within ``guard_us`` of any event the slope is 1, elsewhere 1/factor.
    Knots are integer nanoseconds.
    """

    def __init__(self, event_times_ns: ArrayLike, guard_us: float, factor: float, duration_ns: int):
        if factor < 1:
            raise DomainError(f"compression factor must be >= 1, got {factor}")
        if guard_us <= 0:
            raise DomainError(f"guard must be > 0, got {guard_us}")
        self.factor = float(factor)
        self.duration_ns = int(duration_ns)
        ev = np.sort(np.asarray(event_times_ns, dtype=np.int64))
        if self.factor == 1.0:
            self.logical_knots = np.array([0, self.duration_ns], dtype=np.int64)
            self.synth_knots = self.logical_knots.copy()
            return
        guard = int(round(guard_us * 1e3))
        starts = np.clip(ev - guard, 0, self.duration_ns)
        ends = np.clip(ev + guard, 0, self.duration_ns)
        if ev.size:
            reach = np.maximum.accumulate(ends)
            new = np.r_[True, starts[1:] > reach[:-1]]
            group_starts = starts[new]
            group_ends = reach[np.r_[np.flatnonzero(new)[1:] - 1, ends.size - 1]]
        else:
            group_starts = group_ends = np.zeros(0, dtype=np.int64)
        logical = [0]
        synth = [0]
        for s, e in zip(group_starts.tolist(), group_ends.tolist()):
            gap = s - logical[-1]
            if gap > 0:
                logical.append(s)
                synth.append(synth[-1] + max(1, int(round(gap / self.factor))))
            if e > logical[-1]:
                synth.append(synth[-1] + (e - logical[-1]))
                logical.append(e)
        if self.duration_ns > logical[-1]:
            synth.append(synth[-1] + max(1, int(round((self.duration_ns - logical[-1]) / self.factor))))
            logical.append(self.duration_ns)
        self.logical_knots = np.array(logical, dtype=np.int64)
        self.synth_knots = np.array(synth, dtype=np.int64)

    @property
    def synth_duration_ns(self) -> int:
        return int(self.synth_knots[-1])

    @property
    def is_identity(self) -> bool:
        return bool(np.array_equal(self.logical_knots, self.synth_knots))

    def to_synth(self, logical_ns: ArrayLike) -> NDArray[np.int64]:
        t = np.asarray(logical_ns, dtype=np.float64)
        return np.rint(np.interp(t, self.logical_knots, self.synth_knots)).astype(np.int64)

    def to_logical(self, synth_ns: ArrayLike) -> NDArray[np.int64]:
        s = np.asarray(synth_ns, dtype=np.float64)
        return np.rint(np.interp(s, self.synth_knots, self.logical_knots)).astype(np.int64)

    def map_events(self, events: RadiationEvents) -> RadiationEvents:
        return RadiationEvents(self.to_synth(events.times_ns), events.energies_kev)

    @classmethod
    def from_knots(cls, logical: ArrayLike, synth: ArrayLike) -> "TimeCompression":
        obj = cls.__new__(cls)
        obj.logical_knots = np.asarray(logical, dtype=np.int64)
        obj.synth_knots = np.asarray(synth, dtype=np.int64)
        obj.duration_ns = int(obj.logical_knots[-1])
        span = obj.synth_knots[-1]
        obj.factor = float(obj.duration_ns / span) if span else 1.0
        return obj
