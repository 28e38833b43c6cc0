"""
Event detectors for MKID IQ streams.

``LiveTrigger`` flags windows whose outer IQ samples are pulled off the
noise centroid. ``OfflineDetector`` is the streaming matched-filter
pipeline: |S21| → high-pass → low-pass → exponential template →
robust σ normalisation → thresholding with holdoff and re-arm
hysteresis. Both consume :class:`IqStream` chunks in order and give the
same result for any chunking of the same stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, List, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import signal

from .config import BurstParams, ResonatorParams, TriggerConfig
from .errors import DomainError
from .logger import debug
from .models import AgreementCounts, IqStream, RadiationEvents, TriggerEvent
from .stats import robust_center_sigma
from .synth import synth_iq_stream
from .utils import child_seed

SIGMA_FLOOR = 1e-12
MIN_BASELINE_SAMPLES = 1000


@dataclass(frozen=True)
class IqBaseline:
    centre: complex
    sigma: float  # per quadrature
    n_samples: int

    @classmethod
    def estimate(cls, samples: ArrayLike) -> "IqBaseline":
        s = np.asarray(samples, dtype=np.complex128)
        if s.size < MIN_BASELINE_SAMPLES:
            raise DomainError(f"baseline needs at least {MIN_BASELINE_SAMPLES} samples, got {s.size}")
        ci, si = robust_center_sigma(s.real)
        cq, sq = robust_center_sigma(s.imag)
        return cls(complex(ci, cq), 0.5 * (si + sq), int(s.size))


def live_trigger(window: ArrayLike, baseline: IqBaseline, cfg: TriggerConfig) -> bool:
    """True when the centroid of the outer samples sits beyond the COM threshold."""
    w = np.asarray(window, dtype=np.complex128)
    sigma = max(baseline.sigma, SIGMA_FLOOR)
    offset = w - baseline.centre
    outer = offset[np.abs(offset) > cfg.live_outer_radius * sigma]
    if outer.size == 0:
        return False
    return bool(abs(outer.mean()) > cfg.live_com_threshold * sigma)


class LiveTrigger:
    """Non-overlapping window scan with a baseline refreshed from quiet windows."""

    def __init__(self, cfg: TriggerConfig):
        self.cfg = cfg
        self._baseline: Optional[IqBaseline] = None
        self._quiet = np.zeros(0, dtype=np.complex128)
        self._pending = np.zeros(0, dtype=np.complex128)
        self._pending_start: Optional[int] = None
        self._bin_ns: Optional[int] = None
        self.windows_scanned = 0

    def _check(self, chunk: IqStream) -> None:
        if self._bin_ns is None:
            self._bin_ns = chunk.bin_width_ns
            self._pending_start = chunk.start_time_ns
            return
        expected = self._pending_start + self._pending.size * self._bin_ns
        if chunk.bin_width_ns != self._bin_ns or chunk.start_time_ns != expected:
            raise DomainError("live trigger input chunks must be contiguous")

    def feed(self, chunk: IqStream) -> List[int]:
        self._check(chunk)
        self._pending = np.concatenate([self._pending, chunk.samples])
        return self._drain(final=False)

    def flush(self) -> List[int]:
        return self._drain(final=True)

    def _drain(self, final: bool) -> List[int]:
        flags: List[int] = []
        n = self.cfg.live_window
        keep = self.cfg.live_baseline_samples
        if self._baseline is None:
            if self._pending.size < keep:
                if final and self._pending.size:
                    debug("live trigger: stream shorter than the baseline span, nothing scanned")
                return flags
            self._baseline = IqBaseline.estimate(self._pending[:keep])
            self._quiet = self._pending[:keep].copy()
        pos = 0
        while self._pending.size - pos >= n:
            window = self._pending[pos:pos + n]
            if live_trigger(window, self._baseline, self.cfg):
                flags.append(self._pending_start + pos * self._bin_ns)
            else:
                self._quiet = np.concatenate([self._quiet, window])[-keep:]
                self._baseline = IqBaseline.estimate(self._quiet)
            self.windows_scanned += 1
            pos += n
        self._pending = self._pending[pos:]
        self._pending_start += pos * self._bin_ns
        return flags

    def scan(self, stream: IqStream) -> List[int]:
        return self.feed(stream) + self.flush()


# Offline matched filter

def exponential_template(tau_us: float, bin_width_ns: int, length_taus: float = 5.0) -> NDArray[np.float64]:
    """Unit-norm exp(−t/τ) sampled at the stream bin width."""
    n = int(math.ceil(length_taus * tau_us * 1e3 / bin_width_ns))
    h = np.exp(-np.arange(n) * bin_width_ns / (tau_us * 1e3))
    return h / np.linalg.norm(h)


def boxcar_template(length: int) -> NDArray[np.float64]:
    return np.full(length, 1.0 / math.sqrt(length))


def matched_filter_score(x: ArrayLike, template: ArrayLike) -> NDArray[np.float64]:
    """score[m] = Σₖ x[m+k]·h[k] for every full overlap."""
    h = np.asarray(template, dtype=float)
    y = signal.lfilter(h[::-1], [1.0], np.asarray(x, dtype=float))
    return y[h.size - 1:]


def _design_filters(cfg: TriggerConfig, bin_width_ns: int):
    fs = 1e9 / bin_width_ns
    nyquist = 0.5 * fs
    if not cfg.lowpass_cutoff < nyquist:
        raise DomainError(
            f"low-pass cutoff {cfg.lowpass_cutoff} Hz must be below the Nyquist frequency {nyquist} Hz"
        )
    hp = signal.butter(1, cfg.highpass_cutoff, btype="highpass", fs=fs)
    lp = signal.butter(1, cfg.lowpass_cutoff, btype="lowpass", fs=fs)
    return hp, lp


class OfflineDetector:
    """
    Streaming form of :func:`offline_detect`.

    Scores are normalised in fixed σ-blocks counted from the stream start:
    block j uses the median/MAD of block j−1 (block 0 uses itself), so a
    pulse never raises its own threshold and chunking cannot change results.
    """

    def __init__(self, cfg: TriggerConfig, channel: str = "mkid"):
        self.cfg = cfg
        self.channel = channel
        self._bin_ns: Optional[int] = None
        self._start_ns: int = 0
        self._received = 0
        self._raw_head = np.zeros(0)
        self._filters_ready = False
        self._hp = self._lp = None
        self._zi_hp = self._zi_lp = self._zi_mf = None
        self._template = np.zeros(0)
        self._score_count = 0  # template-aligned scores produced so far
        self._block = np.zeros(0)  # scores of the block being filled
        self._block_index = 0
        self._prev_stats: Optional[tuple[float, float]] = None
        self._block_len = 0
        self._holdoff = 0
        # open threshold run
        self._run_peak_idx = -1
        self._run_peak = 0.0
        self._last_above = -2
        self._last_emitted: Optional[int] = None
        self._armed = True
        self._disarm_from = 0

    # setup

    def _setup(self, chunk: IqStream) -> None:
        self._bin_ns = chunk.bin_width_ns
        self._start_ns = chunk.start_time_ns
        self._hp, self._lp = _design_filters(self.cfg, self._bin_ns)
        self._template = exponential_template(self.cfg.template_tau, self._bin_ns, self.cfg.template_length)
        self._block_len = max(1, int(round(self.cfg.sigma_window_us * 1e3 / self._bin_ns)))
        self._holdoff = int(math.ceil(self.cfg.holdoff * 1e3 / self._bin_ns))

    def _init_filters(self, head: NDArray[np.float64]) -> None:
        b, a = self._hp
        x0 = float(np.mean(head[:MIN_BASELINE_SAMPLES]))
        self._zi_hp = signal.lfilter_zi(b, a) * x0
        self._zi_lp = np.zeros(max(len(self._lp[0]), len(self._lp[1])) - 1)
        self._zi_mf = np.zeros(self._template.size - 1)
        self._filters_ready = True

    # streaming

    def feed(self, chunk: IqStream) -> List[TriggerEvent]:
        if self._bin_ns is None:
            self._setup(chunk)
        elif chunk.bin_width_ns != self._bin_ns or chunk.start_time_ns != self._start_ns + self._received * self._bin_ns:
            raise DomainError("offline detector input chunks must be contiguous")
        self._received += len(chunk)
        mag = np.abs(chunk.samples)
        if not self._filters_ready:
            self._raw_head = np.concatenate([self._raw_head, mag])
            if self._raw_head.size < MIN_BASELINE_SAMPLES:
                return []
            mag, self._raw_head = self._raw_head, np.zeros(0)
            self._init_filters(mag)
        return self._process(mag, final=False)

    def flush(self) -> List[TriggerEvent]:
        if self._bin_ns is None:
            raise DomainError("offline detector received no samples")
        if self._received < self._template.size:
            raise DomainError(
                f"stream of {self._received} samples is shorter than the {self._template.size}-sample template"
            )
        out: List[TriggerEvent] = []
        if not self._filters_ready:
            head, self._raw_head = self._raw_head, np.zeros(0)
            self._init_filters(head)
            out.extend(self._process(head, final=False))
        out.extend(self._process(np.zeros(0), final=True))
        return out

    def _process(self, mag: NDArray[np.float64], final: bool) -> List[TriggerEvent]:
        events: List[TriggerEvent] = []
        if mag.size:
            y, self._zi_hp = signal.lfilter(*self._hp, mag, zi=self._zi_hp)
            y, self._zi_lp = signal.lfilter(*self._lp, y, zi=self._zi_lp)
            h = self._template
            s, self._zi_mf = signal.lfilter(h[::-1], [1.0], y, zi=self._zi_mf)
            # outputs before the template fully overlaps the stream are partial
            skip = max(0, (h.size - 1) - (self._received - mag.size))
            self._block = np.concatenate([self._block, s[skip:]])
        while self._block.size >= self._block_len:
            block, self._block = self._block[:self._block_len], self._block[self._block_len:]
            events.extend(self._emit_block(block))
        if final:
            if self._block.size:
                block, self._block = self._block, np.zeros(0)
                events.extend(self._emit_block(block))
            events.extend(self._close_run())
        return events

    def _emit_block(self, block: NDArray[np.float64]) -> List[TriggerEvent]:
        stats = self._prev_stats if self._prev_stats is not None else robust_center_sigma(block)
        centre, sigma = stats
        z = (block - centre) / max(sigma, SIGMA_FLOOR)
        self._prev_stats = robust_center_sigma(block)
        base = self._score_count
        self._score_count += block.size
        self._block_index += 1
        return self._threshold(self.cfg.pulse_polarity * z, base)

    def _threshold(self, z: NDArray[np.float64], base: int) -> List[TriggerEvent]:
        out: List[TriggerEvent] = []
        above = np.flatnonzero(z > self.cfg.offline_threshold)
        breaks = np.flatnonzero(np.diff(above) > 1)
        starts = np.r_[0, breaks + 1] if above.size else []
        ends = np.r_[breaks + 1, above.size] if above.size else []
        for s, e in zip(list(starts), list(ends)):
            idx = above[int(s):int(e)]
            g0 = base + int(idx[0])
            if g0 != self._last_above + 1:
                out.extend(self._close_run())
                if not self._rearm(z, base, g0):
                    continue
            k = int(np.argmax(z[idx]))
            peak = float(z[idx[k]])
            if self._run_peak_idx < 0 or peak > self._run_peak:
                self._run_peak, self._run_peak_idx = peak, base + int(idx[k])
            self._last_above = base + int(idx[-1])
        if self._last_above < base + z.size - 1:
            out.extend(self._close_run())
        self._rearm(z, base, base + z.size)
        return out

    def _rearm(self, z: NDArray[np.float64], base: int, stop: int) -> bool:
        """Arm again once the score has dipped below ``rearm_level`` since the last run."""
        if not self._armed:
            lo = max(self._disarm_from - base, 0)
            if np.any(z[lo:stop - base] < self.cfg.rearm_level):
                self._armed = True
            else:
                self._disarm_from = stop
        return self._armed

    def _close_run(self) -> List[TriggerEvent]:
        if self._run_peak_idx < 0:
            return []
        idx, peak = self._run_peak_idx, self._run_peak
        self._run_peak_idx, self._run_peak = -1, 0.0
        self._armed, self._disarm_from = False, self._last_above + 1
        if self._last_emitted is not None and idx - self._last_emitted < self._holdoff:
            return []
        self._last_emitted = idx
        return [TriggerEvent(self._start_ns + idx * self._bin_ns, peak, self.channel)]


def offline_detect(stream: IqStream, cfg: TriggerConfig, channel: str = "mkid") -> List[TriggerEvent]:
    det = OfflineDetector(cfg, channel)
    return det.feed(stream) + det.flush()


def detect_chunks(chunks: Iterable[IqStream], cfg: TriggerConfig, channel: str = "mkid") -> List[TriggerEvent]:
    det = OfflineDetector(cfg, channel)
    out: List[TriggerEvent] = []
    for chunk in chunks:
        out.extend(det.feed(chunk))
    out.extend(det.flush())
    return out


# Characterisation

EFFICIENCY_SIGMA_WINDOW_US = 4000.0
EFFICIENCY_EVENT_US = 4500.0
EFFICIENCY_MATCH_US = 5.0


def detection_efficiency_curve(
    energies_kev: Sequence[float],
    noise_sigma: float,
    n_trials: int,
    seed: int,
    cfg: Optional[TriggerConfig] = None,
    resonator: Optional[ResonatorParams] = None,
    burst: Optional[BurstParams] = None,
    gap_uev: float = 340.0,
) -> NDArray[np.float64]:
    """Fraction of injected single-event streams found by the offline detector, per energy."""
    if n_trials < 100:
        raise DomainError(f"n_trials must be >= 100, got {n_trials}")
    cfg = replace(cfg or TriggerConfig(), sigma_window_us=EFFICIENCY_SIGMA_WINDOW_US)
    resonator = replace(resonator or ResonatorParams(), noise_sigma=noise_sigma)
    burst = burst or BurstParams()
    duration_s = 2 * EFFICIENCY_SIGMA_WINDOW_US * 1e-6
    t0 = int(EFFICIENCY_EVENT_US * 1e3)
    tol = EFFICIENCY_MATCH_US * 1e3
    out = np.zeros(len(energies_kev))
    for i, energy in enumerate(energies_kev):
        events = RadiationEvents(np.array([t0]), np.array([float(energy)]))
        hits = 0
        for trial in range(n_trials):
            stream = synth_iq_stream(
                events, resonator, burst, gap_uev, duration_s, child_seed(seed, "efficiency", i, trial)
            )
            found = offline_detect(stream, cfg)
            if any(abs(ev.time_ns - t0) <= tol for ev in found):
                hits += 1
        out[i] = hits / n_trials
        debug(f"efficiency at {energy:g} keV: {out[i]:.3f}")
    return out


def agreement(
    live_flags_ns: Sequence[int],
    offline_events: Sequence[TriggerEvent],
    window_ns: int,
) -> AgreementCounts:
    """Match offline events to live windows; a window also covers the one before it."""
    flags = np.sort(np.asarray(live_flags_ns, dtype=np.int64))
    used = np.zeros(flags.size, dtype=bool)
    matched = 0
    for ev in offline_events:
        lo = np.searchsorted(flags, ev.time_ns - window_ns, side="right")
        hi = np.searchsorted(flags, ev.time_ns + window_ns, side="right")
        if hi > lo:
            matched += 1
            used[lo:hi] = True
    return AgreementCounts(
        matched=matched,
        live_only=int((~used).sum()),
        offline_only=len(offline_events) - matched,
    )
