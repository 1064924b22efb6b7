"""Tests for losses.py — Gram style loss, filter-bank feature loss and their gradients"""
import unittest

import numpy as np

from errors import DimensionError
from helpers import gradient_check
from losses import (
    FeatureLoss,
    StyleLoss,
    feature_mse_grad,
    feature_mse_loss,
    identity_filter_bank,
    make_filter_bank,
    make_loss,
    style_grad,
    style_loss,
)


class TestStyleLoss(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_identical_inputs(self):
        a = self.rng.standard_normal((6, 5, 3))
        self.assertEqual(style_loss(a, a), 0.0)
        np.testing.assert_array_equal(style_grad(a, a), np.zeros_like(a))

    def test_single_channel_constant_grids(self):
        self.assertAlmostEqual(style_loss(np.full((4, 4, 1), 2.0), np.ones((4, 4, 1))), 9.0, places=12)

    def test_symmetric_and_scaled(self):
        a = self.rng.standard_normal((5, 7, 2))
        b = 2.0 * self.rng.standard_normal((5, 7, 2))
        self.assertAlmostEqual(style_loss(a, b), style_loss(b, a), places=12)
        self.assertAlmostEqual(style_loss(a, b, scale=7.5), 7.5 * style_loss(a, b), places=10)
        np.testing.assert_allclose(style_grad(a, b, scale=3.0), 3.0 * style_grad(a, b), rtol=1e-12)

    def test_gradient_matches_finite_differences(self):
        a = self.rng.standard_normal((6, 6, 3))
        b = 1.5 * self.rng.standard_normal((6, 6, 3)) + 0.3
        err = gradient_check(lambda x: style_loss(x, b), style_grad(a, b), a, self.rng)
        self.assertLess(err, 1e-6)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            style_loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
        with self.assertRaises(DimensionError):
            style_grad(np.zeros((4, 4)), np.zeros((4, 4)))


class TestFeatureLoss(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)
        self.bank = make_filter_bank(3, seed=4)

    def test_identical_inputs(self):
        a = self.rng.standard_normal((8, 8, 3))
        self.assertEqual(feature_mse_loss(self.bank, a, a), 0.0)

    def test_identity_bank_is_mse(self):
        bank = identity_filter_bank(2)
        a = self.rng.standard_normal((5, 6, 2))
        b = self.rng.standard_normal((5, 6, 2))
        self.assertAlmostEqual(feature_mse_loss(bank, a, b), float(np.mean((a - b) ** 2)), places=12)
        np.testing.assert_allclose(feature_mse_grad(bank, a, b), 2.0 * (a - b) / a.size, rtol=1e-12)

    def test_symmetric_and_scaled(self):
        a = self.rng.standard_normal((8, 8, 3))
        b = self.rng.standard_normal((8, 8, 3))
        self.assertAlmostEqual(feature_mse_loss(self.bank, a, b), feature_mse_loss(self.bank, b, a), places=12)
        self.assertAlmostEqual(
            feature_mse_loss(self.bank, a, b, scale=4.0), 4.0 * feature_mse_loss(self.bank, a, b), places=10
        )

    def test_gradient_matches_finite_differences(self):
        a = self.rng.standard_normal((8, 12, 3))
        b = self.rng.standard_normal((8, 12, 3))
        err = gradient_check(
            lambda x: feature_mse_loss(self.bank, x, b), feature_mse_grad(self.bank, a, b), a, self.rng
        )
        self.assertLess(err, 1e-4)

    def test_gradient_with_layer_weights(self):
        bank = make_filter_bank(2, channels=(4, 4), kernel=5, seed=9, weights=(0.5, 2.0))
        a = self.rng.standard_normal((6, 6, 2))
        b = self.rng.standard_normal((6, 6, 2))
        err = gradient_check(lambda x: feature_mse_loss(bank, x, b), feature_mse_grad(bank, a, b), a, self.rng)
        self.assertLess(err, 1e-4)

    def test_grid_too_small_for_bank(self):
        a = np.zeros((3, 3, 3))
        with self.assertRaises(DimensionError):
            feature_mse_loss(self.bank, a, a)

    def test_channel_mismatch(self):
        a = np.zeros((8, 8, 2))
        with self.assertRaises(DimensionError):
            feature_mse_loss(self.bank, a, a)


class TestFilterBank(unittest.TestCase):
    def test_seeded_and_read_only(self):
        a = make_filter_bank(3, seed=2)
        b = make_filter_bank(3, seed=2)
        c = make_filter_bank(3, seed=3)
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.kernel, lb.kernel)
        self.assertFalse(np.array_equal(a.layers[0].kernel, c.layers[0].kernel))
        with self.assertRaises(ValueError):
            a.layers[0].kernel[0, 0, 0, 0] = 1.0

    def test_layer_shapes(self):
        bank = make_filter_bank(4, channels=(8, 16), kernel=3)
        self.assertEqual(bank.layers[0].kernel.shape, (3, 3, 4, 8))
        self.assertEqual(bank.layers[1].kernel.shape, (3, 3, 8, 16))
        self.assertEqual(bank.weights, (1.0, 1.0))

    def test_bad_weights(self):
        with self.assertRaises(DimensionError):
            make_filter_bank(3, channels=(4, 4), weights=(1.0,))


class TestMakeLoss(unittest.TestCase):
    def test_by_name(self):
        style = make_loss("style", 3, scale=2.0)
        self.assertIsInstance(style, StyleLoss)
        self.assertEqual(style.scale, 2.0)
        feature = make_loss("feature", 3, bank_channels=(4,), bank_seed=1)
        self.assertIsInstance(feature, FeatureLoss)
        self.assertEqual(feature.bank.in_channels, 3)

    def test_objects_match_functions(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((8, 8, 3))
        b = rng.standard_normal((8, 8, 3))
        loss = make_loss("feature", 3, scale=3.0, bank_seed=2)
        self.assertEqual(loss.value(a, b), feature_mse_loss(loss.bank, a, b, 3.0))
        np.testing.assert_array_equal(loss.grad_a(a, b), feature_mse_grad(loss.bank, a, b, 3.0))

    def test_unknown_kind(self):
        with self.assertRaises(ValueError):
            make_loss("lpips", 3)


if __name__ == "__main__":
    unittest.main()
