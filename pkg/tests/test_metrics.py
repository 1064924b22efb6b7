"""Tests for metrics.py — intra-panorama coherence and reference baselines"""
import json
import unittest

import numpy as np

from constants import NOT_COMPUTED_METRICS
from errors import GeometryError, RangeError
from losses import StyleLoss, make_loss
from metrics import MetricsReport, evaluate_panorama, intra_metric, reference_baseline


class TestIntraMetric(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.style = StyleLoss()

    def test_repeated_tile_scores_zero(self):
        tile = self.rng.standard_normal((8, 16, 3))
        z = np.concatenate([tile] * 6, axis=1)
        mean, pairs = intra_metric(z, self.style, 6)
        self.assertEqual(mean, 0.0)
        self.assertEqual(len(pairs), 15)

    def test_two_crops(self):
        a = self.rng.standard_normal((4, 8, 2))
        b = 3.0 * self.rng.standard_normal((4, 8, 2))
        mean, pairs = intra_metric(np.concatenate([a, b], axis=1), self.style, 2)
        self.assertEqual([(i, j) for i, j, _ in pairs], [(0, 1)])
        self.assertAlmostEqual(mean, self.style.value(a, b), places=12)

    def test_pairs_are_enumerated_in_order(self):
        z = self.rng.standard_normal((4, 24, 1))
        _, pairs = intra_metric(z, self.style, 4)
        self.assertEqual([(i, j) for i, j, _ in pairs], [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])

    def test_crop_permutation_keeps_the_mean(self):
        tiles = [self.rng.standard_normal((4, 8, 3)) for _ in range(4)]
        order = [2, 0, 3, 1]
        a, _ = intra_metric(np.concatenate(tiles, axis=1), self.style, 4)
        b, _ = intra_metric(np.concatenate([tiles[k] for k in order], axis=1), self.style, 4)
        self.assertAlmostEqual(a, b, places=12)

    def test_explicit_crop_width(self):
        z = self.rng.standard_normal((4, 24, 1))
        self.assertEqual(intra_metric(z, self.style, 3, crop_width=8), intra_metric(z, self.style, 3))

    def test_geometry_errors(self):
        z = np.zeros((4, 20, 1))
        with self.assertRaises(GeometryError):
            intra_metric(z, self.style, 1)
        with self.assertRaises(GeometryError):
            intra_metric(z, self.style, 3)
        with self.assertRaises(GeometryError):
            intra_metric(z, self.style, 2, crop_width=8)


class TestReferenceBaseline(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(1)
        self.samples = [rng.standard_normal((4, 4, 2)) * (k + 1) for k in range(5)]
        self.style = StyleLoss()

    def test_identical_samples(self):
        same = [np.ones((4, 4, 2))] * 3
        self.assertEqual(reference_baseline(same, self.style, 20, seed=0), (0.0, 0.0))

    def test_single_pair_has_no_spread(self):
        mean, std = reference_baseline(self.samples[:2], self.style, 10, seed=0)
        self.assertAlmostEqual(mean, self.style.value(self.samples[0], self.samples[1]), places=12)
        self.assertLess(std, 1e-12)

    def test_seeded(self):
        a = reference_baseline(self.samples, self.style, 50, seed=3)
        b = reference_baseline(self.samples, self.style, 50, seed=3)
        self.assertEqual(a, b)
        self.assertGreater(a[1], 0.0)

    def test_bad_arguments(self):
        with self.assertRaises(RangeError):
            reference_baseline(self.samples[:1], self.style, 10, seed=0)
        with self.assertRaises(RangeError):
            reference_baseline(self.samples, self.style, 0, seed=0)


class TestEvaluatePanorama(unittest.TestCase):
    def test_report_schema(self):
        rng = np.random.default_rng(2)
        z = rng.standard_normal((8, 48, 3))
        losses = {"style": StyleLoss(), "feature": make_loss("feature", 3, bank_channels=(4, 4))}
        references = [rng.standard_normal((8, 8, 3)) for _ in range(3)]
        report = evaluate_panorama(z, losses, 6, source="pano.sdt", references=references, n_pairs=5)
        self.assertIsInstance(report, MetricsReport)
        self.assertEqual(report.pair_count, 15)
        self.assertEqual(report.crop_width, 8)

        doc = json.loads(json.dumps(report.to_dict()))
        self.assertEqual(set(doc["intra"]), {"style", "feature"})
        self.assertEqual(len(doc["pairs"]["feature"]), 15)
        self.assertEqual(doc["pairs"]["style"][0], {"i": 0, "j": 1, "value": report.pairs["style"][0][2]})
        self.assertEqual(doc["reference"]["style"]["n_samples"], 3)
        self.assertEqual(doc["not_computed"], dict(NOT_COMPUTED_METRICS))

    def test_without_references(self):
        z = np.zeros((4, 16, 1))
        report = evaluate_panorama(z, {"style": StyleLoss()}, 2)
        self.assertIsNone(report.reference)
        self.assertEqual(report.intra["style"], 0.0)


if __name__ == "__main__":
    unittest.main()
