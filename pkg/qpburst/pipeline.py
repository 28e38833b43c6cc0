from __future__ import annotations

import shutil
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

from . import __version__
from .config import RunConfig
from .errors import ConfigError, FormatError, StageError
from .executors import AnalyzeService, DetectService, SimulateService
from .fs import CONFIG_FILE, MANIFEST_FILE, REPORT_FILE, read_json, write_json
from .logger import info, verbose, warning
from .materials import MaterialDatabase, load_material_db
from .models import RunManifest, StageRecord
from .planner import Planner
from .simulator import DryRunSimulator
from .utils import ensure_dir, managed_tmp_dir, promote_files, sha256_bytes


class Pipeline:
    """
    Runs the simulate → detect → analyze stages against one run directory.

    Every stage writes into a scratch folder that is promoted into the run
    directory only when the stage succeeds; ``manifest.json`` lists every
    file a stage produced.
    """

    def __init__(self, cfg: RunConfig, run_dir: Optional[Path] = None, dry_run: bool = False) -> None:
        self.cfg = cfg
        self.run_dir = Path(run_dir) if run_dir is not None else Path(cfg.output_dir)
        self.config_bytes = cfg.to_json(portable=True).encode("utf-8")
        self.config_digest = sha256_bytes(self.config_bytes)
        self.planner = Planner()
        self.plans = self.planner.plan_channels(cfg, self.run_dir)
        self.simulator = DryRunSimulator() if dry_run else None
        self._db: Optional[MaterialDatabase] = None

    @property
    def materials(self) -> MaterialDatabase:
        if self._db is None:
            path = Path(self.cfg.materials_db) if self.cfg.materials_db else None
            self._db = load_material_db(path)
        return self._db

    # manifest

    def _new_manifest(self) -> RunManifest:
        return RunManifest(self.config_digest, self.cfg.seed, __version__)

    def _write_manifest(self, manifest: RunManifest) -> None:
        write_json(self.run_dir / MANIFEST_FILE, manifest.to_dict())

    def load_manifest(self) -> RunManifest:
        path = self.run_dir / MANIFEST_FILE
        if not path.exists():
            raise ConfigError("out", f"no run found in '{self.run_dir}' (missing {MANIFEST_FILE})")
        try:
            manifest = RunManifest.from_dict(read_json(path))
        except (KeyError, TypeError) as e:
            raise FormatError(f"{MANIFEST_FILE}: malformed ({e})") from None
        stored = self.run_dir / CONFIG_FILE
        if not stored.exists() or stored.read_bytes() != self.config_bytes:
            raise ConfigError("config", f"does not match the config stored in '{self.run_dir}'")
        if manifest.config_digest != self.config_digest:
            raise ConfigError("config", f"{MANIFEST_FILE} digest does not match {CONFIG_FILE}")
        return manifest

    def _start_fresh(self) -> RunManifest:
        """Clear the files of a previous run in this directory and store the config."""
        old = self.run_dir / MANIFEST_FILE
        if old.exists():
            try:
                for name in RunManifest.from_dict(read_json(old)).files:
                    (self.run_dir / name).unlink(missing_ok=True)
            except (FormatError, KeyError, TypeError):
                warning(f"ignoring unreadable {MANIFEST_FILE} in '{self.run_dir}'")
        (self.run_dir / CONFIG_FILE).write_bytes(self.config_bytes)
        manifest = self._new_manifest()
        manifest.stages.append(StageRecord("config", [CONFIG_FILE], 0.0, "ok"))
        self._write_manifest(manifest)
        return manifest

    # stages

    def _execute(self, name: str, work: Path, manifest: RunManifest) -> List[str]:
        if name == "simulate":
            gap = self.materials.get(self.cfg.mkid_material).gap
            return SimulateService(self.cfg, gap).run(self.plans, work, False)
        if name == "detect":
            return DetectService(self.cfg).run(self.plans, self.run_dir, work, False)
        if name == "analyze":
            report, files = AnalyzeService(self.cfg).run(self.plans, self.run_dir, work, False)
            report["config_digest"] = manifest.config_digest
            report["version"] = manifest.version
            write_json(work / REPORT_FILE, report)
            return files + [REPORT_FILE]
        raise ConfigError("stage", f"unknown stage '{name}'")

    def _run_stage(self, manifest: RunManifest, name: str) -> StageRecord:
        rec = manifest.stage(name)
        info(f"▶️  Stage '{name}'")
        start = time.perf_counter()
        try:
            with managed_tmp_dir(self.run_dir / f".tmp_{name}") as work:
                files = sorted(self._execute(name, work, manifest))
                for stale in set(rec.files) - set(files):
                    (self.run_dir / stale).unlink(missing_ok=True)
                promote_files(work, self.run_dir)
        except KeyboardInterrupt:
            raise
        except Exception as e:
            rec.status = "failed"
            rec.wall_time_s = round(time.perf_counter() - start, 3)
            manifest.failed_stage = name
            self._write_manifest(manifest)
            if isinstance(e, ConfigError):
                raise
            raise StageError(name, str(e)) from e
        rec.files = files
        rec.status = "ok"
        rec.wall_time_s = round(time.perf_counter() - start, 3)
        if manifest.failed_stage == name:
            manifest.failed_stage = None
        self._write_manifest(manifest)
        verbose(f"stage '{name}' wrote {len(files)} files in {rec.wall_time_s:.2f} s")
        return rec

    def _dry_run(self, stages: List[str]) -> RunManifest:
        sim = self.simulator
        assert sim is not None
        sim.simulate_ensure_dir(self.run_dir)
        sim.simulate_stages(stages)
        for name in stages:
            if name == "simulate":
                sim.simulate_simulate(self.planner.estimate(self.cfg), self.plans)
            elif name == "detect":
                sim.simulate_detect(self.plans)
            elif name == "analyze":
                sim.simulate_analyze(self.cfg.reference_channel, self.cfg.tls.enabled)
            else:
                sim.simulate_report(self.run_dir)
        manifest = self._new_manifest()
        manifest.stages = [StageRecord(n, status="skipped") for n in stages]
        return manifest

    def run(self, stages: Optional[List[str]] = None) -> RunManifest:
        """Run the given stages (all three by default); a run starting at 'simulate' starts afresh."""
        stages = list(stages) if stages is not None else self.planner.plan_stages()
        if self.simulator:
            return self._dry_run(stages)
        ensure_dir(self.run_dir, False)
        if "simulate" in stages:
            manifest = self._start_fresh()
        else:
            manifest = self.load_manifest()
        for name in stages:
            if name == "report":
                self.load_report()
                continue
            self._run_stage(manifest, name)
        info(f"✅ Run complete: {self.run_dir}")
        return manifest

    # reports

    def load_report(self) -> Dict[str, Any]:
        manifest = self.load_manifest()
        if REPORT_FILE not in manifest.files:
            raise ConfigError("out", f"'{self.run_dir}' has no analysis report yet")
        report = read_json(self.run_dir / REPORT_FILE)
        if report.get("config_digest") != manifest.config_digest:
            raise FormatError(f"{REPORT_FILE}: written for a different config")
        return report

    def export_report(self, dest: Path) -> List[Path]:
        """Copy the report and the analysis curve files into ``dest``."""
        self.load_report()
        manifest = self.load_manifest()
        if self.simulator:
            self.simulator.simulate_report(self.run_dir)
            return []
        ensure_dir(dest, False)
        copied = []
        for name in manifest.stage("analyze").files:
            copied.append(Path(shutil.copy2(self.run_dir / name, dest / name)))
        return copied


def _fmt(x: Optional[float], spec: str = ".3f") -> str:
    return "n/a" if x is None else format(x, spec)


def report_lines(report: Dict[str, Any]) -> List[str]:
    """Human-readable summary of a stored analysis report."""
    lines = [f"seed {report.get('seed')}  reference channel {report.get('reference_channel')}"]
    events = report.get("events", {})
    detected = ", ".join(f"{ch} {n}" for ch, n in events.get("detected", {}).items())
    lines.append(f"radiation events: {events.get('truth')} truth; detected {detected}")

    rec = report.get("recovery", {})
    fit = rec.get("fit")
    if fit and fit.get("converged"):
        lines.append(
            f"prep {rec.get('prep')} recovery: tau = {_fmt(fit['time_constant'], '.2f')} ± "
            f"{_fmt(fit['time_constant_err'], '.2f')} µs, amplitude {_fmt(fit['amplitude'], '.4f')}"
        )
    elif "error" in rec:
        lines.append(f"prep {rec.get('prep')} recovery: {rec['error']}")
    else:
        lines.append(f"prep {rec.get('prep')} recovery: fit did not converge")
    qp = rec.get("qp_density", {})
    if qp.get("peak_density_um3") is not None:
        lines.append(
            f"peak junction QP density {_fmt(qp['peak_density_um3'], '.1f')} µm⁻³ "
            f"(model {_fmt(qp.get('expected_peak_density_um3'), '.1f')}), "
            f"trapping time {_fmt(qp['trapping_time_us'], '.2f')} µs"
        )
    exc = rec.get("excitation", {})
    if exc.get("excess_energy_ueV") is not None:
        lines.append(f"excitation recovery matches QPs {exc['excess_energy_ueV']:.1f} µeV above the Al gap")

    coinc = report.get("coincidences", {})
    if "channels" in coinc:
        for ch, eff in zip(coinc["channels"], coinc["efficiency"]):
            lines.append(f"{ch}: relative efficiency {_fmt(eff)}")

    tls = report.get("tls")
    if tls:
        corr = tls.get("correlation")
        if corr:
            lines.append(
                f"TLS scrambles: {tls.get('detected')} detected ({tls.get('truth_jumps')} injected); "
                f"KS p = {_fmt(corr.get('ks_pvalue'))}"
            )
        else:
            lines.append(f"TLS: {tls.get('error', 'not analyzed')}")
    return lines
