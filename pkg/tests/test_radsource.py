#!/usr/bin/env python3
"""
Tests for ground-truth radiation sampling.
"""

import unittest

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from qpburst.config import DetectorSpec, EnergySpectrum
from qpburst.errors import DomainError
from qpburst.models import RadiationEvent, RadiationEvents
from qpburst.radsource import (
    conditional_mean_above,
    deposit_quantiles,
    detect_outcome,
    detect_outcomes,
    fraction_above,
    lognormal_parameters,
    sample_arrivals,
    sample_deposit_energy,
    sample_events,
)


class TestArrivals(unittest.TestCase):
    """Test Poisson arrival sampling."""

    def test_zero_rate(self):
        self.assertEqual(sample_arrivals(0.0, 100.0, 1).size, 0)

    def test_sorted_and_in_range(self):
        t = sample_arrivals(5.0, 100.0, 7)
        self.assertTrue(np.all(np.diff(t) >= 0))
        self.assertGreaterEqual(t.min(), 0)
        self.assertLess(t.max(), 100 * 10**9)

    def test_deterministic(self):
        np.testing.assert_array_equal(sample_arrivals(1.0, 500.0, 42), sample_arrivals(1.0, 500.0, 42))
        self.assertFalse(np.array_equal(sample_arrivals(1.0, 500.0, 42), sample_arrivals(1.0, 500.0, 43)))

    def test_count_matches_rate(self):
        duration = 90 * 3600.0
        counts = [sample_arrivals(1 / 131, duration, seed).size for seed in range(10)]
        for n in counts:
            self.assertLess(abs(n - 2473), 200)
        self.assertLess(abs(np.mean(counts) - 2473), 3 * np.sqrt(2473 / 10))

    def test_gaps_are_exponential(self):
        t = sample_arrivals(1.0, 10000.0, 2024) * 1e-9
        gaps = np.diff(t)
        self.assertGreater(stats.kstest(gaps, "expon", args=(0.0, 1.0)).pvalue, 0.001)

    def test_invalid_arguments(self):
        with self.assertRaises(DomainError):
            sample_arrivals(-1.0, 10.0, 1)
        with self.assertRaises(DomainError):
            sample_arrivals(1.0, 0.0, 1)


class TestEnergySpectrum(unittest.TestCase):
    """Test the deposited-energy spectrum."""

    def setUp(self):
        self.spectrum = EnergySpectrum()

    def test_lognormal_parameters(self):
        mu, sigma = lognormal_parameters(self.spectrum)
        self.assertAlmostEqual(np.exp(mu), 260.0)
        self.assertAlmostEqual(sigma, 0.7325, places=3)

    def test_sample_moments(self):
        e = sample_deposit_energy(self.spectrum, 11, size=200_000)
        self.assertAlmostEqual(np.mean(e), 340.0, delta=17.0)
        self.assertAlmostEqual(np.median(e), 260.0, delta=13.0)
        self.assertAlmostEqual(np.std(e), 287.0, delta=20.0)

    def test_scalar_draw(self):
        e = sample_deposit_energy(self.spectrum, 3)
        self.assertIsInstance(e, float)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31))
    def test_draws_stay_in_bounds(self, seed):
        s = EnergySpectrum(median=260.0, mean=340.0, lower_cut=100.0, upper_cut=600.0)
        e = sample_deposit_energy(s, seed, size=2000)
        self.assertGreaterEqual(e.min(), 100.0)
        self.assertLessEqual(e.max(), 600.0)

    def test_conditional_mean(self):
        s = self.spectrum
        self.assertAlmostEqual(conditional_mean_above(s, s.lower_cut), 340.0, delta=17.0)
        self.assertAlmostEqual(conditional_mean_above(s, 40.0), 350.0, delta=17.5)
        self.assertEqual(conditional_mean_above(s, s.upper_cut), s.upper_cut)
        self.assertGreater(conditional_mean_above(s, 500.0), conditional_mean_above(s, 40.0))

    def test_conditional_mean_out_of_bounds(self):
        with self.assertRaises(DomainError):
            conditional_mean_above(self.spectrum, 0.01)

    def test_fraction_above(self):
        s = self.spectrum
        self.assertEqual(fraction_above(s, 0.0), 1.0)
        self.assertEqual(fraction_above(s, s.upper_cut), 0.0)
        self.assertAlmostEqual(fraction_above(s, s.median), 0.5, delta=1e-3)


class TestDetection(unittest.TestCase):
    """Test per-detector detection outcomes."""

    def test_below_threshold(self):
        d = DetectorSpec("mkid_a", 1.0, threshold=40.0)
        self.assertFalse(detect_outcome(RadiationEvent(0, 39.9), d, 1))

    def test_perfect_efficiency(self):
        d = DetectorSpec("mkid_a", 1.0, threshold=40.0)
        self.assertTrue(detect_outcome(RadiationEvent(0, 40.0), d, 1))

    def test_hit_fraction(self):
        d = DetectorSpec("mkid_a", 0.9)
        events = RadiationEvents(np.arange(10_000, dtype=np.int64) * 1000, np.full(10_000, 300.0))
        hits = detect_outcomes(events, d, 5)
        self.assertAlmostEqual(hits.mean(), 0.90, delta=0.01)

    def test_outcome_is_fixed_per_event_detector_and_seed(self):
        d = DetectorSpec("mkid_a", 0.5)
        ev = RadiationEvent(123456, 250.0)
        first = [detect_outcome(ev, d, s) for s in range(50)]
        again = [detect_outcome(ev, d, s) for s in range(50)]
        self.assertEqual(first, again)
        self.assertIn(True, first)
        self.assertIn(False, first)

    def test_channels_are_independent(self):
        events = sample_events(1.0, 2000.0, EnergySpectrum(), 9)
        a = detect_outcomes(events, DetectorSpec("mkid_a", 0.5), 9)
        b = detect_outcomes(events, DetectorSpec("mkid_b", 0.5), 9)
        self.assertFalse(np.array_equal(a, b))


class TestSampleEvents(unittest.TestCase):
    """Test combined event sampling."""

    def test_columns_align(self):
        events = sample_events(2.0, 50.0, EnergySpectrum(), 1)
        self.assertEqual(events.times_ns.size, events.energies_kev.size)
        self.assertGreater(len(events), 0)

    def test_deterministic(self):
        a = sample_events(2.0, 50.0, EnergySpectrum(), 1)
        b = sample_events(2.0, 50.0, EnergySpectrum(), 1)
        np.testing.assert_array_equal(a.times_ns, b.times_ns)
        np.testing.assert_array_equal(a.energies_kev, b.energies_kev)


class TestDepositQuantiles(unittest.TestCase):
    """Test the equal-mass energy grid of the spectrum."""

    def test_grid_above_threshold(self):
        e = deposit_quantiles(EnergySpectrum(), 40.0, n=500)
        self.assertEqual(e.size, 500)
        self.assertTrue(np.all(e >= 40.0))
        self.assertTrue(np.all(np.diff(e) > 0))

    def test_mean_matches_conditional_mean(self):
        s = EnergySpectrum()
        e = deposit_quantiles(s, 40.0, n=4000)
        self.assertAlmostEqual(e.mean(), conditional_mean_above(s, 40.0), delta=0.02 * e.mean())

    def test_invalid_arguments(self):
        with self.assertRaises(DomainError):
            deposit_quantiles(EnergySpectrum(), 40.0, n=0)
        with self.assertRaises(DomainError):
            deposit_quantiles(EnergySpectrum(), 12000.0)


@pytest.mark.slow
class TestLongRunRate(unittest.TestCase):
    """90 h of arrivals at one event per 131 s."""

    def test_counts_within_five_percent(self):
        rate, duration = 1.0 / 131.0, 90 * 3600.0
        expected = rate * duration
        counts = np.array([sample_arrivals(rate, duration, seed).size for seed in range(20)])
        self.assertGreaterEqual(int(np.sum(np.abs(counts - expected) <= 0.05 * expected)), 18)
        self.assertAlmostEqual(counts.mean(), expected, delta=0.05 * expected)


if __name__ == "__main__":
    unittest.main()
