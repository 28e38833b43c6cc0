from __future__ import annotations

from pathlib import Path
from typing import List

from .logger import dry_run as log_dry_run, info
from .models import ChannelPlan, RunEstimate


def _human_bytes(n: int) -> str:
    units = ("B", "KiB", "MiB", "GiB")
    size, i = float(n), 0
    while size >= 1024 and i < len(units) - 1:
        size /= 1024
        i += 1
    return f"{n} B" if i == 0 else f"{size:.1f} {units[i]}"


class DryRunSimulator:
    """Reports what a run would do without writing anything."""

    def __init__(self) -> None:
        self.stats: dict[str, float] = {}

    def simulate_ensure_dir(self, path: Path) -> None:
        log_dry_run(f"would ensure run folder '{path}'")

    def simulate_stages(self, stages: List[str]) -> None:
        info(f"🧭 Would run stages: {' → '.join(stages)}")
        self.stats["stages"] = len(stages)

    def simulate_simulate(self, est: RunEstimate, plans: List[ChannelPlan]) -> None:
        """Simulate the synthesis stage."""
        info(f"☢️  Would sample ~{est.expected_events:.1f} radiation events over {est.logical_duration_s:g} s")
        for p in plans:
            log_dry_run(
                f"would synthesize '{p.iq_path.name}' ({est.iq_samples_per_channel} samples, "
                f"~{est.expected_detected[p.channel]:.1f} events above {p.threshold_kev:g} keV)"
            )
        log_dry_run(f"would write {est.qubit_records} qubit records")
        if est.tls_bins:
            log_dry_run(f"would write a {est.tls_bins}-bin TLS P(1) trace")
        if est.synth_duration_s < est.logical_duration_s:
            info(
                f"⏱️  Synthesis timeline {est.synth_duration_s:.3f} s "
                f"for {est.logical_duration_s:g} s of logical time"
            )
        info(f"💾 Estimated data volume: {_human_bytes(est.bytes_total)}")
        self.stats["expected_events"] = est.expected_events
        self.stats["iq_samples"] = est.iq_samples_per_channel * len(plans)
        self.stats["qubit_records"] = est.qubit_records
        self.stats["bytes_total"] = est.bytes_total

    def simulate_detect(self, plans: List[ChannelPlan]) -> None:
        """Simulate the trigger stage."""
        for p in plans:
            log_dry_run(f"would scan '{p.iq_path.name}' → '{p.live_path.name}', '{p.detected_path.name}'")
        self.stats["channels"] = len(plans)

    def simulate_analyze(self, reference_channel: str, tls_enabled: bool) -> None:
        """Simulate the analysis stage."""
        log_dry_run(f"would align qubit records on '{reference_channel}' events and fit the recovery")
        log_dry_run("would build the MKID conditional-probability matrix")
        if tls_enabled:
            log_dry_run("would detect TLS scrambles and test their timing against radiation events")

    def simulate_report(self, run_dir: Path) -> None:
        log_dry_run(f"would re-emit the report stored in '{run_dir}'")

    def get_stats(self) -> dict[str, float]:
        """Get accumulated statistics from simulation."""
        return self.stats.copy()

    def reset_stats(self) -> None:
        """Reset simulation statistics."""
        self.stats.clear()
