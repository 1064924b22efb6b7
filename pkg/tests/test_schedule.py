"""Tests for schedule.py and rng_streams.py"""
import io
import math
import unittest
from contextlib import redirect_stdout

import numpy as np

from errors import DimensionError, RangeError, ScheduleError
from helpers import schedule_from_alphas
from rng_streams import init_stream, stream, stream_position, window_stream
from schedule import TimestepPlan, add_noise, build_schedule, make_plan, sigma_sq


def quiet_schedule(*args, **kwargs):
    with redirect_stdout(io.StringIO()):
        return build_schedule(*args, **kwargs)


class TestBuildSchedule(unittest.TestCase):
    def test_single_step(self):
        sched = quiet_schedule(1, "linear-beta", (0.5, 0.5))
        self.assertEqual(sched.alphas, (0.5,))

    def test_two_steps_hand_product(self):
        sched = quiet_schedule(2, "linear-beta", (0.1, 0.3))
        self.assertAlmostEqual(sched.alphas[0], 0.9, places=12)
        self.assertAlmostEqual(sched.alphas[1], 0.63, places=12)

    def test_fifty_steps_default_betas(self):
        sched = quiet_schedule(50, "linear-beta", (1e-4, 2e-2))
        self.assertAlmostEqual(sched.alphas[0], 0.9999, places=12)
        for a, b in zip(sched.alphas, sched.alphas[1:]):
            self.assertLess(b, a)

    def test_default_schedule_is_quiet(self):
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            sched = build_schedule(1000)
        self.assertEqual(sched.T, 1000)
        self.assertLess(sched.alphas[-1], 0.01)
        self.assertNotIn("[WARN]", buffer.getvalue())

    def test_weak_final_noise_warns(self):
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            build_schedule(10, "linear-beta", (1e-4, 2e-2))
        self.assertIn("[WARN]", buffer.getvalue())

    def test_cosine_strictly_decreasing(self):
        sched = quiet_schedule(200, "cosine")
        self.assertTrue(np.all(np.diff(sched.alphas) < 0))
        self.assertTrue(0.0 < sched.alphas[-1] < sched.alphas[0] <= 1.0)

    def test_bad_arguments(self):
        with self.assertRaises(ScheduleError):
            build_schedule(0)
        with self.assertRaises(ScheduleError):
            build_schedule(10, "linear-beta", (0.3, 0.1))
        with self.assertRaises(ScheduleError):
            build_schedule(10, "linear-beta", (0.0, 0.1))
        with self.assertRaises(ScheduleError):
            build_schedule(10, "linear-beta", (0.1, 1.0))
        with self.assertRaises(ScheduleError):
            build_schedule(10, "quadratic")

    def test_alpha_zero_is_one(self):
        sched = quiet_schedule(5, "linear-beta", (0.1, 0.2))
        self.assertEqual(sched.alpha(0), 1.0)
        with self.assertRaises(RangeError):
            sched.alpha(6)

    def test_to_config(self):
        cfg = quiet_schedule(5, "linear-beta", (0.1, 0.2)).to_config()
        self.assertEqual(cfg["schedule.T"], 5)
        self.assertEqual(cfg["schedule.kind"], "linear-beta")
        self.assertEqual(cfg["schedule.params"], [0.1, 0.2])


class TestAddNoise(unittest.TestCase):
    def setUp(self):
        self.sched = schedule_from_alphas((1.0, 0.25, 0.1))
        self.rng = np.random.default_rng(0)

    def test_unit_alpha_returns_x0(self):
        x0 = self.rng.standard_normal((3, 4, 2))
        eps = self.rng.standard_normal((3, 4, 2))
        np.testing.assert_array_equal(add_noise(x0, 1, eps, self.sched), x0)

    def test_scalar_hand_value(self):
        out = add_noise(np.array([[[1.0]]]), 2, np.array([[[2.0]]]), self.sched)
        self.assertAlmostEqual(float(out[0, 0, 0]), 2.2320508, places=7)

    def test_zero_signal_is_scaled_noise(self):
        e = self.rng.standard_normal((2, 2, 3))
        out = add_noise(np.zeros_like(e), 3, e, self.sched)
        np.testing.assert_allclose(out, math.sqrt(0.9) * e, rtol=0, atol=1e-15)

    def test_zero_noise_is_exact_scaling(self):
        sched = quiet_schedule(100)
        x0 = self.rng.standard_normal((4, 4, 1))
        for t in (1, 17, 100):
            np.testing.assert_array_equal(
                add_noise(x0, t, np.zeros_like(x0), sched), math.sqrt(sched.alpha(t)) * x0
            )

    def test_monte_carlo_variance(self):
        sched = quiet_schedule(100)
        t, n = 40, 100_000
        a = sched.alpha(t)
        x0 = np.full((n, 1, 1), 0.7)
        eps = np.random.default_rng(1).standard_normal(x0.shape)
        var = float(np.var(add_noise(x0, t, eps, sched)))
        self.assertLess(abs(var - (1 - a)), 3 * math.sqrt(2 / n) * (1 - a))

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            add_noise(np.zeros((2, 2, 1)), 1, np.zeros((2, 3, 1)), self.sched)

    def test_t_zero_rejected(self):
        with self.assertRaises(RangeError):
            add_noise(np.zeros((1, 1, 1)), 0, np.zeros((1, 1, 1)), self.sched)


class TestSigmaSq(unittest.TestCase):
    def test_first_step_is_zero(self):
        for sched in (schedule_from_alphas((0.9, 0.5)), quiet_schedule(30, "cosine")):
            self.assertEqual(sigma_sq(1, sched), 0.0)

    def test_hand_values(self):
        self.assertAlmostEqual(sigma_sq(2, schedule_from_alphas((0.9, 0.5))), 0.0888889, places=7)
        self.assertAlmostEqual(sigma_sq(3, schedule_from_alphas((0.9, 0.5, 0.1))), 0.4444444, places=7)

    def test_out_of_range(self):
        sched = schedule_from_alphas((0.9, 0.5))
        with self.assertRaises(RangeError):
            sigma_sq(0, sched)
        with self.assertRaises(RangeError):
            sigma_sq(3, sched)


class TestMakePlan(unittest.TestCase):
    def test_full_plan(self):
        plan = make_plan(quiet_schedule(50), 50)
        self.assertEqual(plan.steps, tuple(range(50, 0, -1)))

    def test_thousand_to_fifty_matches_enumeration(self):
        plan = make_plan(quiet_schedule(1000), 50)
        expected = [int(math.floor(1000 * (1 - i / 50) + 0.5)) for i in range(50)]
        expected[-1] = 1
        self.assertEqual(list(plan.steps), expected)
        self.assertEqual(len(plan), 50)

    def test_single_jump(self):
        self.assertEqual(make_plan(quiet_schedule(10, "linear-beta", (0.1, 0.3)), 1).steps, (1,))

    def test_every_length_is_exact(self):
        for T in range(1, 40):
            sched = schedule_from_alphas(np.linspace(0.99, 0.01, T))
            for n in range(1, T + 1):
                plan = make_plan(sched, n)
                self.assertEqual(len(plan), n)
                self.assertEqual(plan.steps[0], T if n > 1 else 1)
                self.assertEqual(plan.steps[-1], 1)

    def test_too_many_steps(self):
        with self.assertRaises(RangeError):
            make_plan(schedule_from_alphas((0.9, 0.5)), 3)

    def test_transitions_end_at_zero(self):
        plan = TimestepPlan(steps=(9, 5, 1))
        self.assertEqual(plan.transitions(), [(9, 5), (5, 1), (1, 0)])

    def test_plan_invariants(self):
        with self.assertRaises(RangeError):
            TimestepPlan(steps=())
        with self.assertRaises(RangeError):
            TimestepPlan(steps=(5, 2))
        with self.assertRaises(RangeError):
            TimestepPlan(steps=(3, 3, 1))


class TestRngStreams(unittest.TestCase):
    def test_same_key_same_draws(self):
        a = window_stream(7, 3, 120).standard_normal(5)
        b = window_stream(7, 3, 120).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_keys_are_independent(self):
        base = window_stream(7, 3, 120).standard_normal(5)
        for other in (window_stream(7, 4, 120), window_stream(7, 3, 119), window_stream(8, 3, 120), init_stream(7)):
            self.assertFalse(np.array_equal(base, other.standard_normal(5)))

    def test_position_tracks_consumption(self):
        gen = stream(0, 1, 2, 3)
        before = stream_position(gen)
        self.assertEqual(before, stream_position(stream(0, 1, 2, 3)))
        gen.standard_normal(3)
        self.assertNotEqual(before, stream_position(gen))


if __name__ == "__main__":
    unittest.main()
