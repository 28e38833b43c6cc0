#!/usr/bin/env python3
"""
Tests for the Pipeline component (integration tests).
"""

import shutil
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import pytest

from qpburst.config import DetectorSpec, EnergySpectrum, RunConfig, TlsConfig
from qpburst.errors import ConfigError, FormatError, StageError
from qpburst.fs import CONFIG_FILE, MANIFEST_FILE, REPORT_FILE, TLS_P1_FILE, TRUTH_FILE, read_json, write_json
from qpburst.pipeline import Pipeline, report_lines


def small_config(**overrides):
    params = dict(
        seed=11,
        duration_s=20.0,
        rate_hz=0.5,
        time_compression=100.0,
        spectrum=EnergySpectrum(median=350.0, mean=351.0),
        detectors=(DetectorSpec("mkid_a", 1.0), DetectorSpec("mkid_b", 0.8)),
        tls=TlsConfig(enabled=False),
        workers=2,
    )
    params.update(overrides)
    return RunConfig(**params)


@pytest.mark.integration
class TestPipelineRun(unittest.TestCase):
    """Integration tests for a full simulate → detect → analyze run."""

    @classmethod
    def setUpClass(cls):
        cls.temp_dir = Path(tempfile.mkdtemp())
        cls.run_dir = cls.temp_dir / "run"
        cls.cfg = small_config()
        cls.manifest = Pipeline(cls.cfg, cls.run_dir).run()

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.temp_dir)

    def test_manifest_lists_every_file(self):
        stored = read_json(self.run_dir / MANIFEST_FILE)
        self.assertEqual([s["name"] for s in stored["stages"]], ["config", "simulate", "detect", "analyze"])
        self.assertTrue(all(s["status"] == "ok" for s in stored["stages"]))
        self.assertIsNone(stored["failed_stage"])
        for name in self.manifest.files:
            self.assertTrue((self.run_dir / name).exists(), name)
        self.assertIn(REPORT_FILE, self.manifest.files)
        self.assertFalse(any(p.name.startswith(".tmp_") for p in self.run_dir.iterdir()))

    def test_report_carries_the_config_digest(self):
        report = Pipeline(self.cfg, self.run_dir).load_report()
        self.assertEqual(report["config_digest"], self.manifest.config_digest)
        self.assertEqual(report["seed"], 11)
        self.assertEqual(set(report["trigger"]), {"mkid_a", "mkid_b"})

    def test_same_seed_same_files(self):
        other = self.temp_dir / "again"
        Pipeline(self.cfg, other).run()
        for name in self.manifest.files:
            if name == MANIFEST_FILE:
                continue
            self.assertEqual((self.run_dir / name).read_bytes(), (other / name).read_bytes(), name)

    def test_rerun_analysis_only(self):
        before = (self.run_dir / REPORT_FILE).read_bytes()
        manifest = Pipeline(self.cfg, self.run_dir).run(["analyze"])
        self.assertEqual((self.run_dir / REPORT_FILE).read_bytes(), before)
        self.assertEqual(manifest.stage("analyze").status, "ok")

    def test_config_mismatch(self):
        with self.assertRaises(ConfigError) as ctx:
            Pipeline(self.cfg.with_seed(12), self.run_dir).run(["detect"])
        self.assertEqual(ctx.exception.field, "config")

    def test_export_report(self):
        dest = self.temp_dir / "export"
        copied = Pipeline(self.cfg, self.run_dir).export_report(dest)
        names = {p.name for p in copied}
        self.assertIn(REPORT_FILE, names)
        self.assertEqual(names, set(self.manifest.stage("analyze").files))
        self.assertNotIn(TRUTH_FILE, names)

    def test_report_lines(self):
        lines = report_lines(Pipeline(self.cfg, self.run_dir).load_report())
        self.assertTrue(lines[0].startswith("seed 11"))
        self.assertTrue(any("mkid_b: relative efficiency" in line for line in lines))


class TestPipelineState(unittest.TestCase):
    """Test manifest handling, failures and dry runs."""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.temp_dir)
        self.run_dir = self.temp_dir / "run"
        self.cfg = small_config()

    def test_no_run_yet(self):
        with self.assertRaises(ConfigError) as ctx:
            Pipeline(self.cfg, self.run_dir).run(["detect"])
        self.assertEqual(ctx.exception.field, "out")

    def test_report_before_analysis(self):
        Pipeline(self.cfg, self.run_dir).run(["simulate"])
        with self.assertRaises(ConfigError):
            Pipeline(self.cfg, self.run_dir).load_report()

    def test_failed_stage_is_recorded(self):
        pipeline = Pipeline(self.cfg, self.run_dir)
        pipeline.run(["simulate"])
        with patch("qpburst.pipeline.DetectService.run", side_effect=RuntimeError("disk full")):
            with self.assertRaises(StageError) as ctx:
                pipeline.run(["detect"])
        self.assertEqual(ctx.exception.stage, "detect")
        self.assertIsInstance(ctx.exception.__cause__, RuntimeError)
        stored = read_json(self.run_dir / MANIFEST_FILE)
        self.assertEqual(stored["failed_stage"], "detect")
        self.assertFalse((self.run_dir / ".tmp_detect").exists())

        pipeline.run(["detect"])
        self.assertIsNone(read_json(self.run_dir / MANIFEST_FILE)["failed_stage"])

    def test_fresh_simulate_removes_old_files(self):
        tls_cfg = small_config(tls=TlsConfig(enabled=True, duration_s=10.0))
        Pipeline(tls_cfg, self.run_dir).run(["simulate"])
        self.assertTrue((self.run_dir / TLS_P1_FILE).exists())
        Pipeline(self.cfg, self.run_dir).run(["simulate"])
        self.assertFalse((self.run_dir / TLS_P1_FILE).exists())
        self.assertEqual((self.run_dir / CONFIG_FILE).read_bytes(), self.cfg.to_json(portable=True).encode())

    def test_tampered_report(self):
        pipeline = Pipeline(self.cfg, self.run_dir)
        pipeline.run(["simulate"])
        manifest = pipeline.load_manifest()
        manifest.stage("analyze").files = [REPORT_FILE]
        write_json(self.run_dir / MANIFEST_FILE, manifest.to_dict())
        write_json(self.run_dir / REPORT_FILE, {"config_digest": "0" * 64})
        with self.assertRaises(FormatError):
            pipeline.load_report()

    @patch("qpburst.simulator.log_dry_run")
    @patch("qpburst.simulator.info")
    def test_dry_run_writes_nothing(self, _info, _dry_run):
        manifest = Pipeline(self.cfg, self.run_dir, dry_run=True).run()
        self.assertFalse(self.run_dir.exists())
        self.assertEqual([s.status for s in manifest.stages], ["skipped"] * 3)


if __name__ == "__main__":
    unittest.main()
