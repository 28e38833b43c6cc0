#!/usr/bin/env python3
"""
Tests for run configuration loading and validation.
"""

import json
import shutil
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

from qpburst.config import (
    AnalysisConfig,
    BurstParams,
    DetectorSpec,
    EnergySpectrum,
    QubitConfig,
    ResonatorParams,
    RunConfig,
    TlsConfig,
    TriggerConfig,
    config_from_dict,
    load_config,
)
from qpburst.errors import ConfigError

PROJECT_ROOT = Path(__file__).parent.parent


class TestDefaults(unittest.TestCase):
    """Test default parameter values."""

    def test_run_defaults(self):
        cfg = RunConfig(seed=1)
        self.assertAlmostEqual(cfg.rate_hz, 1 / 131)
        self.assertEqual([d.name for d in cfg.detectors], ["mkid_1b", "mkid_1d", "mkid_4c"])
        self.assertEqual([d.efficiency for d in cfg.detectors], [0.90, 0.89, 0.50])
        self.assertEqual(cfg.reference_channel, "mkid_1b")
        self.assertEqual(cfg.tls_duration_s, cfg.duration_s)

    def test_resonator_derived_values(self):
        r = ResonatorParams()
        self.assertAlmostEqual(r.q_total, 18750.0)
        self.assertAlmostEqual(r.linewidth_hz, 250e3)
        self.assertAlmostEqual(r.response_time_ns, 636.6, delta=0.1)

    def test_trapping_time(self):
        self.assertAlmostEqual(BurstParams().trapping_time_us, 13.0)

    def test_qubit_cycle(self):
        cycle = QubitConfig().cycle
        self.assertAlmostEqual(cycle.period_us, 52.1)
        self.assertAlmostEqual(cycle.readout_offset_us, 1.6)

    def test_tls_coarsen_factor(self):
        self.assertEqual(TlsConfig().coarsen_factor, 10)
        self.assertEqual(TlsConfig(bin_s=0.5, fine_bin_s=0.05).coarsen_factor, 10)


class TestValidation(unittest.TestCase):
    """Test that invalid values name the offending field."""

    def assertField(self, field, fn, *args, **kwargs):
        with self.assertRaises(ConfigError) as ctx:
            fn(*args, **kwargs)
        self.assertEqual(ctx.exception.field, field)

    def test_detector_fields(self):
        self.assertField("detectors.a.efficiency", DetectorSpec, "a", 1.5)
        self.assertField("detectors.a.threshold", DetectorSpec, "a", 0.5, -1.0)

    def test_detector_names(self):
        self.assertField("detectors.name", DetectorSpec, "")
        self.assertField("detectors.name", DetectorSpec, "mkid 1b")
        self.assertField("detectors.name", DetectorSpec, "../x")
        DetectorSpec("mkid_1b.v2-a")

    def test_duplicate_channels(self):
        dets = (DetectorSpec("a"), DetectorSpec("a"))
        self.assertField("detectors", RunConfig, seed=1, detectors=dets)

    def test_run_fields(self):
        self.assertField("seed", RunConfig, seed=-1)
        self.assertField("duration_s", RunConfig, seed=1, duration_s=0.0)
        self.assertField("time_compression", RunConfig, seed=1, time_compression=0.5)
        self.assertField("bin_width_ns", RunConfig, seed=1, bin_width_ns=1.5)
        self.assertField("schema_version", RunConfig, seed=1, schema_version=2)

    def test_reference_channel(self):
        self.assertField("analysis.reference_channel", RunConfig, seed=1,
                         analysis=AnalysisConfig(reference_channel="nope"))
        cfg = RunConfig(seed=1, analysis=AnalysisConfig(reference_channel="mkid_4c"))
        self.assertEqual(cfg.reference_channel, "mkid_4c")

    def test_energy_floor(self):
        self.assertField("analysis.energy_floor_kev", AnalysisConfig, energy_floor_kev=-1.0)
        self.assertTrue(AnalysisConfig().saturation_correction)

    def test_tls_duration_within_run(self):
        self.assertField("tls.duration_s", RunConfig, seed=1, duration_s=10.0, tls=TlsConfig(duration_s=20.0))

    def test_tls_bins(self):
        self.assertField("tls.fine_bin_s", TlsConfig, bin_s=0.1, fine_bin_s=0.03)
        self.assertField("tls.jump_magnitude", TlsConfig, p1_level=0.9, jump_magnitude=0.2)

    def test_spectrum(self):
        self.assertField("spectrum", EnergySpectrum, median=0.05)
        self.assertField("spectrum.mean", EnergySpectrum, mean=200.0)

    def test_trigger(self):
        self.assertField("trigger.pulse_polarity", TriggerConfig, pulse_polarity=0)
        self.assertField("trigger.live_baseline_samples", TriggerConfig, live_baseline_samples=999)
        self.assertField("trigger.rearm_level", TriggerConfig, rearm_level=8.0)
        self.assertField("trigger.highpass_cutoff", TriggerConfig, highpass_cutoff=3e5)

    def test_burst(self):
        self.assertField("burst.mkid_slow_fraction", BurstParams, mkid_slow_fraction=1.5)
        self.assertField("burst.trapping_rate", BurstParams, trapping_rate=0.0)


class TestLoadConfig(unittest.TestCase):
    """Test reading configs from JSON."""

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())
        self.addCleanup(shutil.rmtree, self.temp_dir)

    def write(self, data):
        path = self.temp_dir / "cfg.json"
        path.write_text(data if isinstance(data, str) else json.dumps(data))
        return path

    def test_minimal(self):
        cfg = load_config(self.write({"seed": 5}))
        self.assertEqual(cfg, RunConfig(seed=5))

    def test_nested_values(self):
        cfg = load_config(self.write({
            "seed": 5,
            "detectors": [{"name": "a", "efficiency": 0.5}, {"name": "b"}],
            "trigger": {"offline_threshold": 10},
            "tls": {"enabled": False},
        }))
        self.assertEqual([d.name for d in cfg.detectors], ["a", "b"])
        self.assertEqual(cfg.trigger.offline_threshold, 10.0)
        self.assertIsInstance(cfg.trigger.offline_threshold, float)
        self.assertFalse(cfg.tls.enabled)

    def test_overrides(self):
        cfg = load_config(self.write({"seed": 5, "output_dir": "x"}), seed=9, output_dir="y")
        self.assertEqual(cfg.seed, 9)
        self.assertEqual(cfg.output_dir, "y")

    def test_seed_from_override_only(self):
        self.assertEqual(load_config(self.write({}), seed=3).seed, 3)

    def test_missing_seed(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config(self.write({}))
        self.assertEqual(ctx.exception.field, "seed")

    def test_unknown_key(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config(self.write({"seed": 1, "trigger": {"treshold": 3}}))
        self.assertEqual(ctx.exception.field, "trigger.treshold")

    def test_wrong_types(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config(self.write({"seed": "1"}))
        self.assertEqual(ctx.exception.field, "seed")
        with self.assertRaises(ConfigError) as ctx:
            load_config(self.write({"seed": 1, "detectors": {"name": "a"}}))
        self.assertEqual(ctx.exception.field, "detectors")
        with self.assertRaises(ConfigError) as ctx:
            load_config(self.write({"seed": 1, "tls": {"enabled": 1}}))
        self.assertEqual(ctx.exception.field, "tls.enabled")

    def test_error_inside_list(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config(self.write({"seed": 1, "detectors": [{"name": "a", "gain": 2}]}))
        self.assertEqual(ctx.exception.field, "detectors[0].gain")

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(self.temp_dir / "absent.json")

    def test_bad_json(self):
        with self.assertRaises(ConfigError):
            load_config(self.write("{seed: 1"))

    def test_shipped_example(self):
        cfg = load_config(PROJECT_ROOT / "configs" / "desk.json")
        self.assertEqual(cfg.time_compression, 10000.0)
        self.assertEqual(len(cfg.detectors), 3)


class TestSerialization(unittest.TestCase):
    """Test canonical JSON output."""

    def test_round_trip(self):
        cfg = RunConfig(seed=7, duration_s=12.5, tls=TlsConfig(enabled=False))
        self.assertEqual(config_from_dict(json.loads(cfg.to_json())), cfg)

    def test_portable_form_drops_output_dir(self):
        a = RunConfig(seed=7).with_output_dir("one")
        b = RunConfig(seed=7).with_output_dir("two")
        self.assertNotIn("output_dir", json.loads(a.to_json(portable=True)))
        self.assertEqual(a.to_json(portable=True), b.to_json(portable=True))
        self.assertNotEqual(a.to_json(), b.to_json())

    def test_canonical(self):
        cfg = RunConfig(seed=7)
        self.assertEqual(cfg.to_json(), replace(cfg).to_json())
        self.assertTrue(cfg.to_json().endswith("\n"))


if __name__ == "__main__":
    unittest.main()
