#!/usr/bin/env python3
"""
Tests for quasiparticle burst dynamics.
"""

import math
import unittest

import numpy as np
from hypothesis import given, settings, strategies as st

from qpburst.burst import (
    junction_nqp,
    mkid_initial_count,
    mkid_qp_count,
    p1_survival,
    p_excite,
    qp_trace,
    time_since_last_event_us,
)
from qpburst.config import BurstParams
from qpburst.errors import DomainError
from qpburst.models import QpKind, RadiationEvent, RadiationEvents


def events(*pairs):
    """RadiationEvents from (time_ns, energy_keV) pairs."""
    return RadiationEvents.from_events([RadiationEvent(t, e) for t, e in pairs])


class TestJunctionDensity(unittest.TestCase):
    """Test the junction QP density."""

    def setUp(self):
        self.p = BurstParams()

    def test_peak_after_average_deposit(self):
        self.assertAlmostEqual(junction_nqp(0, events((0, 350.0)), self.p), 84.0, places=9)

    def test_one_trapping_time_later(self):
        t_ns = self.p.trapping_time_us * 1e3
        self.assertAlmostEqual(junction_nqp(t_ns, events((0, 350.0)), self.p), 84.0 / math.e, places=6)

    def test_superposition(self):
        both = junction_nqp(1000, events((0, 350.0), (0, 120.0)), self.p)
        single = junction_nqp(1000, events((0, 350.0)), self.p) + junction_nqp(1000, events((0, 120.0)), self.p)
        self.assertAlmostEqual(both, single, places=9)

    def test_event_list_is_sorted(self):
        ev = events((5000, 120.0), (0, 350.0))
        self.assertEqual(ev.times_ns.tolist(), [0, 5000])
        self.assertEqual(ev.energies_kev.tolist(), [350.0, 120.0])

    def test_before_event_is_baseline(self):
        self.assertEqual(junction_nqp(-1, events((0, 350.0)), self.p, baseline=2.5), 2.5)

    def test_array_input_keeps_shape(self):
        out = junction_nqp(np.array([3000.0, 0.0, 1000.0]), events((0, 350.0)), self.p)
        self.assertEqual(out.shape, (3,))
        self.assertAlmostEqual(out[1], 84.0)
        self.assertGreater(out[2], out[0])

    @settings(max_examples=40)
    @given(st.floats(min_value=0.1, max_value=12000.0), st.floats(min_value=0.1, max_value=10.0))
    def test_linear_in_energy(self, energy, scale):
        a = junction_nqp(5000, events((0, energy)), self.p)
        b = junction_nqp(5000, events((0, energy * scale)), self.p)
        self.assertAlmostEqual(b, a * scale, delta=1e-9 * max(1.0, b))


class TestMkidCount(unittest.TestCase):
    """Test the MKID film QP count."""

    def test_initial_count_at_threshold_energy(self):
        n0 = mkid_initial_count([40.0], BurstParams(), 340.0)[0]
        self.assertAlmostEqual(n0, 7.35e4, delta=7.35e2)

    def test_fast_recovery_only(self):
        p = BurstParams(mkid_slow_fraction=0.0)
        n0 = mkid_initial_count([40.0], p, 340.0)[0]
        self.assertAlmostEqual(mkid_qp_count(35_000, events((0, 40.0)), p, 340.0), n0 / math.e, places=3)

    def test_slow_tail(self):
        p = BurstParams()
        late = mkid_qp_count(1_000_000, events((0, 40.0)), p, 340.0)
        n0 = mkid_initial_count([40.0], p, 340.0)[0]
        self.assertAlmostEqual(late, n0 * 0.1 * math.exp(-0.5), delta=n0 * 1e-6)

    def test_no_events(self):
        self.assertEqual(mkid_qp_count(1000, RadiationEvents.empty(), BurstParams(), 340.0), 0.0)

    def test_needs_gap(self):
        with self.assertRaises(DomainError):
            mkid_initial_count([40.0], BurstParams(), 0.0)


class TestQubitProbabilities(unittest.TestCase):
    """Test the qubit outcome probabilities."""

    def setUp(self):
        self.p = BurstParams()

    def test_survival_without_events(self):
        self.assertAlmostEqual(p1_survival(1000, RadiationEvents.empty(), self.p, 1.0, 0.95), 0.95)

    def test_survival_long_after_event(self):
        self.assertAlmostEqual(p1_survival(10**9, events((0, 350.0)), self.p, 1.0, 0.95), 0.95, places=9)

    def test_survival_at_event(self):
        self.assertAlmostEqual(p1_survival(0, events((0, 350.0)), self.p, 1.0, 0.95), 0.95 * math.exp(-0.2016), places=6)

    def test_survival_recovers_monotonically(self):
        t = np.linspace(0, 200_000, 400)
        p1 = p1_survival(t, events((0, 5000.0)), self.p, 1.0, 0.95)
        self.assertTrue(np.all(np.diff(p1) >= 0))
        self.assertTrue(np.all((p1 >= 0) & (p1 <= 1)))

    def test_survival_preconditions(self):
        with self.assertRaises(DomainError):
            p1_survival(0, RadiationEvents.empty(), self.p, 0.0, 0.95)
        with self.assertRaises(DomainError):
            p1_survival(0, RadiationEvents.empty(), self.p, 1.0, 1.5)

    def test_excitation(self):
        self.assertEqual(p_excite(-1.0, self.p, 0.02), 0.02)
        self.assertAlmostEqual(p_excite(0.0, self.p, 0.02), 0.07)
        self.assertAlmostEqual(p_excite(8.3, self.p, 0.02), 0.02 + 0.05 / math.e)

    def test_excitation_must_stay_a_probability(self):
        with self.assertRaises(DomainError):
            p_excite(0.0, BurstParams(excitation_peak=0.5), 0.6)

    def test_time_since_last_event(self):
        dt = time_since_last_event_us(np.array([-5, 0, 2500, 10_000]), np.array([0, 5000], dtype=np.int64))
        self.assertTrue(np.isinf(dt[0]))
        np.testing.assert_allclose(dt[1:], [0.0, 2.5, 5.0])


class TestQpTrace(unittest.TestCase):
    """Test trace evaluation."""

    def test_junction_trace(self):
        trace = qp_trace(np.arange(0.0, 50.0, 1.0), events((0, 350.0)), BurstParams())
        self.assertEqual(trace.kind, QpKind.JUNCTION_DENSITY)
        self.assertAlmostEqual(trace.values[0], 84.0)
        self.assertTrue(np.all(np.diff(trace.values) < 0))

    def test_mkid_trace_needs_gap(self):
        with self.assertRaises(DomainError):
            qp_trace([0.0, 1.0], events((0, 350.0)), BurstParams(), QpKind.MKID_COUNT)


if __name__ == "__main__":
    unittest.main()
