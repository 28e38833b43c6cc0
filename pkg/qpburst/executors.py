from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence, Tuple, TypeVar

import numpy as np
from tqdm import tqdm

from .analyze import (
    align_and_tally,
    conditional_matrix,
    correlation_report,
    detect_tls_scrambles,
    excitation_energy_report,
    extract_nqp_trace,
    fit_exp_recovery,
    fit_qp_trace,
    pre_event_baseline,
    refine_change_points,
)
from .burst import qp_trace
from .config import RunConfig
from .errors import DomainError
from .fs import (
    CORRELATION_FILE,
    HISTOGRAM_FILE,
    RECORDS_FILE,
    TIMELINE_FILE,
    TLS_DETECTED_FILE,
    TLS_P1_FILE,
    TLS_P1_FINE_FILE,
    TLS_TRUTH_FILE,
    TRACE_FILE,
    TRUTH_FILE,
    iter_qpiq,
    read_detected_csv,
    read_events_csv,
    read_p1_csv,
    read_records_csv,
    read_times_csv,
    read_timeline_csv,
    read_tls_truth_csv,
    write_correlation_csv,
    write_detected_csv,
    write_events_csv,
    write_histogram_csv,
    write_p1_csv,
    write_qpiq,
    write_records_csv,
    write_times_csv,
    write_times_s_csv,
    write_timeline_csv,
    write_tls_truth_csv,
    write_trace_csv,
)
from .logger import dry_run as log_dry_run, info, progress_disabled, verbose, warning
from .models import ChannelPlan, Direction, QubitRecords, RadiationEvent, RadiationEvents, TriggerEvent
from .radsource import conditional_mean_above, deposit_quantiles, detect_outcomes, sample_events
from .synth import (
    TimeCompression,
    coarsen_p1_series,
    iter_iq_chunks,
    sample_tls_jumps,
    synth_p1_series,
    synth_qubit_stream,
)
from .trigger import LiveTrigger, OfflineDetector, agreement
from .utils import child_seed

T = TypeVar("T")

# truth events and detections closer than this count as the same event
TRUTH_MATCH_US = 5.0


def _run_per_channel(
    plans: Sequence[ChannelPlan], workers: int, fn: Callable[[ChannelPlan], T], desc: str
) -> List[T]:
    """Run ``fn`` for every channel in a thread pool; results come back in plan order."""
    results: Dict[int, T] = {}
    with ThreadPoolExecutor(max_workers=max(1, min(workers, len(plans)))) as executor:
        futures = {executor.submit(fn, p): i for i, p in enumerate(plans)}
        with tqdm(total=len(plans), desc=desc, unit="channel", disable=progress_disabled()) as pbar:
            for future in as_completed(futures):
                results[futures[future]] = future.result()
                pbar.update(1)
    return [results[i] for i in range(len(plans))]


def load_timeline(run_dir: Path) -> TimeCompression:
    logical, synth = read_timeline_csv(run_dir / TIMELINE_FILE)
    return TimeCompression.from_knots(logical, synth)


class SimulateService:
    """Ground truth, synthetic MKID streams, qubit records and TLS traces."""

    def __init__(self, cfg: RunConfig, gap_uev: float) -> None:
        self.cfg = cfg
        self.gap_uev = gap_uev

    def sample_truth(self) -> Tuple[RadiationEvents, TimeCompression]:
        cfg = self.cfg
        events = sample_events(cfg.rate_hz, cfg.duration_s, cfg.spectrum, child_seed(cfg.seed, "radiation"))
        timeline = TimeCompression(
            events.times_ns, cfg.compression_guard_us, cfg.time_compression, int(round(cfg.duration_s * 1e9))
        )
        return events, timeline

    def synth_channel(
        self, plan: ChannelPlan, events: RadiationEvents, timeline: TimeCompression, out_dir: Path
    ) -> int:
        cfg = self.cfg
        spec = next(d for d in cfg.detectors if d.name == plan.channel)
        seen = timeline.map_events(events.select(detect_outcomes(events, spec, cfg.seed)))
        chunks = iter_iq_chunks(
            seen,
            cfg.resonator,
            cfg.burst,
            self.gap_uev,
            timeline.synth_duration_ns * 1e-9,
            child_seed(cfg.seed, "mkid", plan.channel),
            channel=plan.channel,
            bin_width_ns=int(cfg.bin_width_ns),
            chunk_samples=cfg.chunk_samples,
        )
        write_qpiq(out_dir / plan.iq_path.name, chunks)
        verbose(f"{plan.channel}: {len(seen)} of {len(events)} events in the stream")
        return len(seen)

    def synth_qubit(self, events: RadiationEvents, timeline: TimeCompression) -> QubitRecords:
        cfg = self.cfg
        q = cfg.qubit
        records = synth_qubit_stream(
            timeline.map_events(events),
            q.cycle,
            q.prep,
            cfg.burst,
            timeline.synth_duration_ns * 1e-9,
            child_seed(cfg.seed, "qubit"),
            p1_baseline=q.p1_baseline,
            p0_baseline_excitation=q.p_excite_baseline,
            readout_error=q.readout_error,
        )
        return QubitRecords(timeline.to_logical(records.times_ns), records.prep, records.outcome)

    def synth_tls(self, out_dir: Path) -> List[str]:
        cfg = self.cfg
        tls = cfg.tls
        seed = child_seed(cfg.seed, "tls")
        jumps = sample_tls_jumps(tls.jump_rate_hz, cfg.tls_duration_s, tls.jump_magnitude, seed)
        fine = synth_p1_series(cfg.tls_duration_s, tls.fine_bin_s, cfg.qubit.cycle, tls.p1_level, jumps, seed)
        write_tls_truth_csv(out_dir / TLS_TRUTH_FILE, jumps)
        write_p1_csv(out_dir / TLS_P1_FINE_FILE, fine)
        write_p1_csv(out_dir / TLS_P1_FILE, coarsen_p1_series(fine, tls.coarsen_factor))
        return [TLS_TRUTH_FILE, TLS_P1_FINE_FILE, TLS_P1_FILE]

    def run(self, plans: List[ChannelPlan], out_dir: Path, dry_run: bool) -> List[str]:
        if dry_run:
            for p in plans:
                log_dry_run(f"would synthesize '{p.iq_path.name}'")
            return []
        cfg = self.cfg
        events, timeline = self.sample_truth()
        info(f"☢️  {len(events)} radiation events in {cfg.duration_s:g} s")
        if not timeline.is_identity:
            info(
                f"⏱️  Synthesis timeline {timeline.synth_duration_ns * 1e-9:.3f} s "
                f"(compression {cfg.time_compression:g})"
            )
        write_events_csv(out_dir / TRUTH_FILE, events)
        write_timeline_csv(out_dir / TIMELINE_FILE, timeline.logical_knots, timeline.synth_knots)
        written = [TRUTH_FILE, TIMELINE_FILE]

        _run_per_channel(
            plans, cfg.workers, lambda p: self.synth_channel(p, events, timeline, out_dir), "Synthesizing"
        )
        written += [p.iq_path.name for p in plans]

        records = self.synth_qubit(events, timeline)
        write_records_csv(out_dir / RECORDS_FILE, records)
        written.append(RECORDS_FILE)
        verbose(f"{len(records)} qubit records (prep {cfg.qubit.prep})")

        if cfg.tls.enabled:
            written += self.synth_tls(out_dir)
        return written


class DetectService:
    """Live and offline triggers over every stored MKID stream."""

    def __init__(self, cfg: RunConfig) -> None:
        self.cfg = cfg

    def detect_channel(
        self, plan: ChannelPlan, timeline: TimeCompression, out_dir: Path
    ) -> Tuple[List[int], List[TriggerEvent]]:
        live = LiveTrigger(self.cfg.trigger)
        offline = OfflineDetector(self.cfg.trigger, plan.channel)
        flags: List[int] = []
        found: List[TriggerEvent] = []
        for chunk in iter_qpiq(plan.iq_path, self.cfg.chunk_samples):
            flags += live.feed(chunk)
            found += offline.feed(chunk)
        flags += live.flush()
        found += offline.flush()

        live_ns = timeline.to_logical(np.asarray(flags, dtype=np.int64))
        logical = timeline.to_logical(np.asarray([e.time_ns for e in found], dtype=np.int64))
        found = [TriggerEvent(int(t), e.score, e.channel) for t, e in zip(logical.tolist(), found)]
        write_times_csv(out_dir / plan.live_path.name, live_ns)
        write_detected_csv(out_dir / plan.detected_path.name, found)
        verbose(f"{plan.channel}: {len(flags)} live flags, {len(found)} offline events")
        return live_ns.tolist(), found

    def run(self, plans: List[ChannelPlan], run_dir: Path, out_dir: Path, dry_run: bool) -> List[str]:
        if dry_run:
            for p in plans:
                log_dry_run(f"would scan '{p.iq_path.name}'")
            return []
        timeline = load_timeline(run_dir)
        _run_per_channel(
            plans, self.cfg.workers, lambda p: self.detect_channel(p, timeline, out_dir), "Triggering"
        )
        return [name for p in plans for name in (p.live_path.name, p.detected_path.name)]


def _finite(x: float) -> Any:
    return float(x) if np.isfinite(x) else None


def _truth_match(truth_ns: np.ndarray, found_ns: np.ndarray, window_ns: float) -> Dict[str, Any]:
    """Nearest-detection matching of ground-truth events."""
    if truth_ns.size == 0 or found_ns.size == 0:
        return {"truth": int(truth_ns.size), "matched": 0, "median_offset_us": None}
    idx = np.clip(np.searchsorted(found_ns, truth_ns), 1, found_ns.size) - 1
    nxt = np.minimum(idx + 1, found_ns.size - 1)
    near = np.where(np.abs(found_ns[nxt] - truth_ns) < np.abs(found_ns[idx] - truth_ns), nxt, idx)
    offset = found_ns[near] - truth_ns
    hit = np.abs(offset) <= window_ns
    return {
        "truth": int(truth_ns.size),
        "matched": int(hit.sum()),
        "median_offset_us": _finite(np.median(offset[hit]) * 1e-3) if hit.any() else None,
    }


class AnalyzeService:
    """Event alignment, recovery fits, MKID coincidences and TLS correlation."""

    def __init__(self, cfg: RunConfig) -> None:
        self.cfg = cfg

    def _recovery(self, records: QubitRecords, ref_ns: np.ndarray, out_dir: Path) -> Tuple[Dict, List[str]]:
        cfg = self.cfg
        a = cfg.analysis
        prep = cfg.qubit.prep
        h = align_and_tally(records, ref_ns, (a.window_before_us, a.window_after_us), a.bin_width_us, prep)
        write_histogram_csv(out_dir / HISTOGRAM_FILE, h)
        written = [HISTOGRAM_FILE]
        section: Dict[str, Any] = {"prep": prep, "events": int(ref_ns.size), "trials": h.total_trials}
        direction = Direction.DIP if prep == 1 else Direction.BUMP
        try:
            fit = fit_exp_recovery(h, direction)
        except DomainError as e:
            warning(f"recovery fit skipped: {e}")
            section["error"] = str(e)
            return section, written
        section["fit"] = fit.to_dict()
        if prep == 0:
            section["excitation"] = excitation_energy_report(fit)
            return section, written

        baseline = pre_event_baseline(h)
        section["baseline_p1"] = _finite(baseline)
        floor = min(max(a.energy_floor_kev, cfg.spectrum.lower_cut), cfg.spectrum.upper_cut)
        try:
            energies = deposit_quantiles(cfg.spectrum, floor) if a.saturation_correction else None
            trace = extract_nqp_trace(
                h, cfg.qubit.cycle.idle, baseline, cfg.burst.gamma_per_density,
                energies_kev=energies, readout_error=cfg.qubit.readout_error,
            )
        except DomainError as e:
            warning(f"n_qp extraction skipped: {e}")
            section["qp_density"] = {"error": str(e)}
            return section, written
        write_trace_csv(out_dir / TRACE_FILE, trace)
        written.append(TRACE_FILE)
        qp_fit = fit_qp_trace(trace)
        mean_deposit = RadiationEvents.from_events([RadiationEvent(0, conditional_mean_above(cfg.spectrum, floor))])
        expected = qp_trace([0.0], mean_deposit, cfg.burst)
        section["qp_density"] = {
            "fit": qp_fit.to_dict(),
            "peak_density_um3": _finite(qp_fit.amplitude),
            "trapping_time_us": _finite(qp_fit.time_constant),
            "expected_peak_density_um3": _finite(expected.values[0]),
            "saturation_corrected": energies is not None,
        }
        return section, written

    def _coincidences(self, detected: Dict[str, List[TriggerEvent]]) -> Dict[str, Any]:
        if len(detected) < 2:
            return {"error": "needs at least two channels"}
        m = conditional_matrix(
            {ch: [e.time_ns for e in evs] for ch, evs in detected.items()},
            self.cfg.analysis.coincidence_window_us,
        )
        return {
            "channels": list(m.channels),
            "matrix": [[_finite(v) for v in row] for row in m.matrix.tolist()],
            "counts": m.counts.tolist(),
            "coincidences": m.coincidences.tolist(),
            "efficiency": [_finite(v) for v in m.efficiency.tolist()],
            "efficiency_err": [_finite(v) for v in m.efficiency_err.tolist()],
            "undefined_columns": list(m.undefined_columns),
        }

    def _tls(self, run_dir: Path, ref_ns: np.ndarray, out_dir: Path) -> Tuple[Dict, List[str]]:
        cfg = self.cfg
        a = cfg.analysis
        series = read_p1_csv(run_dir / TLS_P1_FILE)
        section: Dict[str, Any] = {"truth_jumps": len(read_tls_truth_csv(run_dir / TLS_TRUTH_FILE))}
        try:
            coarse = detect_tls_scrambles(series, a.tls_k_sigma, a.tls_window_s, a.tls_merge_s)
        except DomainError as e:
            warning(f"TLS scramble detection skipped: {e}")
            section["error"] = str(e)
            return section, []
        found = refine_change_points(read_p1_csv(run_dir / TLS_P1_FINE_FILE), coarse, cfg.tls.bin_s)
        write_times_s_csv(out_dir / TLS_DETECTED_FILE, found)
        report = correlation_report(
            found,
            ref_ns * 1e-9,
            cfg.duration_s,
            exclusion_window_s=a.exclusion_window_s,
            timing_bin_s=cfg.tls.fine_bin_s,
            n_bins=a.correlation_bins,
        )
        write_correlation_csv(out_dir / CORRELATION_FILE, report)
        section["detected"] = len(found)
        section["correlation"] = report.summary()
        return section, [TLS_DETECTED_FILE, CORRELATION_FILE]

    def run(self, plans: List[ChannelPlan], run_dir: Path, out_dir: Path, dry_run: bool) -> Tuple[Dict, List[str]]:
        if dry_run:
            log_dry_run(f"would analyze the run in '{run_dir}'")
            return {}, []
        cfg = self.cfg
        truth = read_events_csv(run_dir / TRUTH_FILE)
        detected = {p.channel: read_detected_csv(p.detected_path) for p in plans}
        live = {p.channel: read_times_csv(p.live_path) for p in plans}
        ref = cfg.reference_channel
        ref_ns = np.asarray([e.time_ns for e in detected[ref]], dtype=np.int64)

        window_ns = cfg.trigger.live_window * cfg.bin_width_ns
        trigger: Dict[str, Any] = {}
        for p in plans:
            found_ns = np.asarray([e.time_ns for e in detected[p.channel]], dtype=np.int64)
            counts = agreement(live[p.channel], detected[p.channel], int(window_ns))
            trigger[p.channel] = {
                "live": len(live[p.channel]),
                "offline": len(detected[p.channel]),
                "agreement": {"matched": counts.matched, "live_only": counts.live_only,
                              "offline_only": counts.offline_only},
                "truth": _truth_match(truth.times_ns, np.sort(found_ns), TRUTH_MATCH_US * 1e3),
            }

        records = read_records_csv(run_dir / RECORDS_FILE)
        recovery, written = self._recovery(records, ref_ns, out_dir)
        report: Dict[str, Any] = {
            "seed": cfg.seed,
            "reference_channel": ref,
            "events": {"truth": len(truth), "detected": {ch: len(v) for ch, v in detected.items()}},
            "trigger": trigger,
            "recovery": recovery,
            "coincidences": self._coincidences(detected),
        }
        if cfg.tls.enabled:
            report["tls"], tls_files = self._tls(run_dir, ref_ns, out_dir)
            written += tls_files
        return report, written
