from __future__ import annotations

import math
from pathlib import Path
from typing import List, Optional

from .config import RunConfig
from .errors import ConfigError
from .fs import QPIQ_HEADER
from .models import ChannelPlan, RunEstimate
from .radsource import fraction_above

STAGES = ("simulate", "detect", "analyze")
ALL_STAGES = STAGES + ("report",)

# rough CSV line sizes, used only for dry-run estimates
_RECORD_LINE_BYTES = 16
_P1_LINE_BYTES = 24
_EVENT_LINE_BYTES = 32


class Planner:
    def plan_stages(self, stage: Optional[str] = None) -> List[str]:
        if stage is None:
            return list(STAGES)
        if stage not in ALL_STAGES:
            raise ConfigError("stage", f"unknown stage '{stage}' (expected one of {', '.join(ALL_STAGES)})")
        return [stage]

    def plan_channels(self, cfg: RunConfig, run_dir: Path) -> List[ChannelPlan]:
        return [
            ChannelPlan(
                channel=d.name,
                efficiency=d.efficiency,
                threshold_kev=d.threshold,
                iq_path=run_dir / f"mkid_{d.name}.qpiq",
                live_path=run_dir / f"live_{d.name}.csv",
                detected_path=run_dir / f"detected_{d.name}.csv",
            )
            for d in cfg.detectors
        ]

    def estimate(self, cfg: RunConfig) -> RunEstimate:
        """Expected sizes of a run, from the config alone."""
        n_events = cfg.rate_hz * cfg.duration_s
        detected = {
            d.name: n_events * d.efficiency * fraction_above(cfg.spectrum, d.threshold) for d in cfg.detectors
        }
        guarded_s = min(cfg.duration_s, n_events * 2.0 * cfg.compression_guard_us * 1e-6)
        synth_s = guarded_s + (cfg.duration_s - guarded_s) / cfg.time_compression
        iq_samples = int(math.floor(synth_s * 1e9 / cfg.bin_width_ns))
        records = int(math.floor(synth_s * 1e6 / cfg.qubit.cycle.period_us))
        tls_bins = int(math.floor(cfg.tls_duration_s / cfg.tls.bin_s)) if cfg.tls.enabled else 0
        size = (
            len(cfg.detectors) * (QPIQ_HEADER.size + 8 * iq_samples)
            + _RECORD_LINE_BYTES * records
            + _P1_LINE_BYTES * tls_bins
            + _EVENT_LINE_BYTES * int(math.ceil(n_events))
        )
        return RunEstimate(
            expected_events=n_events,
            expected_detected=detected,
            logical_duration_s=cfg.duration_s,
            synth_duration_s=synth_s,
            iq_samples_per_channel=iq_samples,
            qubit_records=records,
            tls_bins=tls_bins,
            bytes_total=size,
        )
