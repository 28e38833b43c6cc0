#!/usr/bin/env python3
"""
Tests for the live IQ trigger and the offline matched-filter detector.
"""

import unittest
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from qpburst.config import BurstParams, ResonatorParams, TriggerConfig
from qpburst.errors import DomainError
from qpburst.models import IqStream, RadiationEvents, TriggerEvent
from qpburst.synth import iter_iq_chunks, synth_iq_stream
from qpburst.trigger import (
    IqBaseline,
    LiveTrigger,
    OfflineDetector,
    agreement,
    boxcar_template,
    detect_chunks,
    detection_efficiency_curve,
    exponential_template,
    live_trigger,
    matched_filter_score,
    offline_detect,
)

GAP = 340.0


def stream_with(times_ns, energies_kev, duration_s, seed, burst=None, resonator=None):
    ev = RadiationEvents(np.asarray(times_ns, dtype=np.int64), np.asarray(energies_kev, dtype=float))
    return synth_iq_stream(ev, resonator or ResonatorParams(), burst or BurstParams(), GAP, duration_s, seed)


def noise(n, sigma, seed, centre=0.6 + 0.1j):
    rng = np.random.default_rng(seed)
    return centre + sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


class TestLiveTrigger(unittest.TestCase):
    """Test the IQ-asymmetry live trigger."""

    def setUp(self):
        self.cfg = TriggerConfig()

    def test_baseline_needs_enough_samples(self):
        with self.assertRaises(DomainError):
            IqBaseline.estimate(noise(999, 0.03, 1))

    def test_baseline_estimate(self):
        b = IqBaseline.estimate(noise(20_000, 0.03, 1))
        self.assertAlmostEqual(b.centre.real, 0.6, delta=0.002)
        self.assertAlmostEqual(b.centre.imag, 0.1, delta=0.002)
        self.assertAlmostEqual(b.sigma, 0.03, delta=0.002)

    def test_pure_noise_rarely_triggers(self):
        b = IqBaseline.estimate(noise(10_000, 0.03, 2))
        windows = noise(2000 * 256, 0.03, 3).reshape(2000, 256)
        fired = sum(live_trigger(w, b, self.cfg) for w in windows)
        self.assertLessEqual(fired, 2)

    def test_zero_noise_never_triggers(self):
        flat = np.full(2000, 0.625 + 0j)
        b = IqBaseline.estimate(flat)
        self.assertFalse(live_trigger(flat[:256], b, self.cfg))

    def test_event_window_triggers(self):
        s = stream_with([3_000_000], [350.0], 0.004, 5)
        b = IqBaseline.estimate(s.samples[:2000])
        self.assertTrue(live_trigger(s.samples[3000:3256], b, self.cfg))

    def test_scan_flags_the_event_window(self):
        s = stream_with([50_000_000], [350.0], 0.1, 6)
        flags = LiveTrigger(self.cfg).scan(s)
        self.assertTrue(flags)
        window_ns = self.cfg.live_window * s.bin_width_ns
        self.assertTrue(any(abs(f - 50_000_000) <= window_ns for f in flags))
        self.assertTrue(all(f >= 50_000_000 - window_ns for f in flags))

    def test_scan_is_chunking_invariant(self):
        ev = RadiationEvents(np.array([20_000_000, 60_000_000]), np.array([300.0, 800.0]))
        args = (ev, ResonatorParams(), BurstParams(), GAP, 0.1, 7)
        whole = LiveTrigger(self.cfg)
        expected = whole.scan(synth_iq_stream(*args))
        live = LiveTrigger(self.cfg)
        got = []
        for chunk in iter_iq_chunks(*args, chunk_samples=7919):
            got += live.feed(chunk)
        got += live.flush()
        self.assertEqual(got, expected)
        self.assertEqual(live.windows_scanned, whole.windows_scanned)

    def test_non_contiguous_chunks(self):
        live = LiveTrigger(self.cfg)
        live.feed(IqStream(0, 1000, noise(100, 0.03, 1)))
        with self.assertRaises(DomainError):
            live.feed(IqStream(500_000, 1000, noise(100, 0.03, 2)))


class TestMatchedFilter(unittest.TestCase):
    """Test the matched-filter primitives."""

    def test_template_unit_norm(self):
        h = exponential_template(35.0, 1000)
        self.assertEqual(h.size, 175)
        self.assertAlmostEqual(np.linalg.norm(h), 1.0)
        self.assertTrue(np.all(np.diff(h) < 0))

    def test_score_alignment(self):
        h = exponential_template(5.0, 1000)
        x = np.zeros(200)
        x[50:50 + h.size] = h
        score = matched_filter_score(x, h)
        self.assertEqual(score.size, x.size - h.size + 1)
        self.assertEqual(int(np.argmax(score)), 50)
        self.assertAlmostEqual(score[50], 1.0)

    def test_linear_in_amplitude(self):
        h = exponential_template(35.0, 1000)
        x = np.zeros(600)
        x[100:100 + h.size] = 0.3 * h
        np.testing.assert_allclose(matched_filter_score(2 * x, h), 2 * matched_filter_score(x, h))

    def test_matched_template_beats_boxcar(self):
        rng = np.random.default_rng(12)
        h = exponential_template(35.0, 1000)
        box = boxcar_template(h.size)
        shape = h / h.max()
        matched, boxed = [], []
        for _ in range(1000):
            x = shape + rng.standard_normal(h.size)
            matched.append(float(x @ h))
            boxed.append(float(x @ box))
        result = stats.ttest_rel(matched, boxed, alternative="greater")
        self.assertLess(result.pvalue, 0.01)


class TestOfflineDetector(unittest.TestCase):
    """Test the streaming offline detector."""

    def setUp(self):
        self.cfg = TriggerConfig()

    def test_pure_noise(self):
        s = stream_with([], [], 1.0, 21)
        self.assertEqual(offline_detect(s, self.cfg), [])

    def test_single_event_timestamp(self):
        t0 = 150_000_000
        s = stream_with([t0], [350.0], 0.3, 22, burst=BurstParams(mkid_slow_fraction=0.0))
        found = offline_detect(s, self.cfg, "mkid_a")
        self.assertEqual(len(found), 1)
        self.assertLessEqual(abs(found[0].time_ns - t0), 2_000)
        self.assertEqual(found[0].channel, "mkid_a")
        self.assertGreater(found[0].score, self.cfg.offline_threshold)

    def test_event_with_slow_tail(self):
        t0 = 150_000_000
        found = offline_detect(stream_with([t0], [350.0], 0.3, 23), self.cfg)
        self.assertEqual(len(found), 1)
        self.assertLessEqual(abs(found[0].time_ns - t0), 2_000)

    def test_rearms_between_separate_events(self):
        times = [120_000_000, 220_000_000]
        found = offline_detect(stream_with(times, [500.0, 500.0], 0.3, 27), self.cfg)
        self.assertEqual(len(found), 2)
        for ev, t in zip(found, times):
            self.assertLessEqual(abs(ev.time_ns - t), 2_000)

    def test_small_deposit_missed(self):
        s = stream_with([150_000_000], [10.0], 0.3, 24)
        self.assertEqual(offline_detect(s, self.cfg), [])

    def test_holdoff(self):
        times = [120_000_000, 120_010_000, 120_015_000, 160_000_000]
        found = offline_detect(stream_with(times, [400.0] * 4, 0.3, 25), self.cfg)
        t = np.array([e.time_ns for e in found])
        self.assertTrue(found)
        self.assertTrue(np.all(np.diff(t) >= self.cfg.holdoff * 1e3))

    def test_chunking_invariant(self):
        ev = RadiationEvents(np.array([130_000_000, 170_000_000, 250_000_000]), np.array([200.0, 500.0, 90.0]))
        args = (ev, ResonatorParams(), BurstParams(), GAP, 0.35, 26)
        expected = offline_detect(synth_iq_stream(*args), self.cfg)
        self.assertTrue(expected)
        for chunk in (700, 4096, 99_999):
            got = detect_chunks(iter_iq_chunks(*args, chunk_samples=chunk), self.cfg)
            self.assertEqual([e.time_ns for e in got], [e.time_ns for e in expected])
            for a, b in zip(got, expected):
                self.assertAlmostEqual(a.score, b.score, places=6)

    def test_stream_shorter_than_template(self):
        s = IqStream(0, 1000, noise(100, 0.03, 1))
        with self.assertRaises(DomainError):
            offline_detect(s, self.cfg)

    def test_flush_without_samples(self):
        with self.assertRaises(DomainError):
            OfflineDetector(self.cfg).flush()

    def test_lowpass_above_nyquist(self):
        cfg = replace(self.cfg, lowpass_cutoff=6e5)
        with self.assertRaises(DomainError):
            offline_detect(stream_with([], [], 0.01, 1), cfg)

    def test_negative_polarity_ignores_positive_pulses(self):
        cfg = replace(self.cfg, pulse_polarity=-1)
        s = stream_with([150_000_000], [350.0], 0.3, 22, burst=BurstParams(mkid_slow_fraction=0.0))
        found = offline_detect(s, cfg)
        self.assertFalse([e for e in found if abs(e.time_ns - 150_000_000) <= 2_000])


@pytest.mark.slow
class TestOfflineNoiseHour(unittest.TestCase):
    """A full hour of nominal resonator noise through the offline detector."""

    def test_no_false_events(self):
        chunks = iter_iq_chunks(
            RadiationEvents.empty(), ResonatorParams(), BurstParams(), GAP, 3600.0, 27, chunk_samples=1 << 22
        )
        self.assertEqual(detect_chunks(chunks, TriggerConfig()), [])


class TestAgreement(unittest.TestCase):
    """Test live/offline agreement counting."""

    def test_counts(self):
        offline = [TriggerEvent(100_000, 20.0, "a"), TriggerEvent(5_000_000, 9.0, "a")]
        counts = agreement([0, 1_000_000], offline, 256_000)
        self.assertEqual((counts.matched, counts.live_only, counts.offline_only), (1, 1, 1))

    def test_empty(self):
        counts = agreement([], [], 256_000)
        self.assertEqual((counts.matched, counts.live_only, counts.offline_only), (0, 0, 0))


class TestEfficiencyCurve(unittest.TestCase):
    """Test the injected-event efficiency curve."""

    def test_needs_enough_trials(self):
        with self.assertRaises(DomainError):
            detection_efficiency_curve([100.0], 0.03, 10, 1)

    @pytest.mark.slow
    def test_curve_shape(self):
        eff = detection_efficiency_curve([0.0, 10.0, 100.0, 1000.0], 0.03, 100, 31)
        self.assertEqual(eff[0], 0.0)
        self.assertLessEqual(eff[1], 0.05)
        self.assertGreaterEqual(eff[2], 0.95)
        self.assertGreaterEqual(eff[3], 0.95)


if __name__ == "__main__":
    unittest.main()
