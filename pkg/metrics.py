"""Intra-panorama coherence metrics and reference-set baselines."""

from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np

from constants import NOT_COMPUTED_METRICS
from errors import GeometryError, RangeError
from rng_streams import STREAM_PAIRS, stream


def intra_metric(z, loss, n_crops, crop_width=None):
    """Mean loss over all unordered pairs of non-overlapping equal crops of z.

    Returns (mean, pairs) with pairs as (i, j, value) tuples.
    """
    W = z.shape[1]
    if n_crops < 2:
        raise GeometryError(f"Need at least 2 crops to form a pair, got {n_crops}")
    if crop_width is None:
        if W % n_crops:
            raise GeometryError(f"Panorama width {W} is not divisible into {n_crops} crops")
        crop_width = W // n_crops
    if n_crops * crop_width != W:
        raise GeometryError(
            f"{n_crops} crops of width {crop_width} do not tile a panorama of width {W}"
        )

    crops = [z[:, k * crop_width:(k + 1) * crop_width, :] for k in range(n_crops)]
    pairs = [(i, j, loss.value(crops[i], crops[j])) for i, j in combinations(range(n_crops), 2)]
    return float(np.mean([v for _, _, v in pairs])), pairs


def reference_baseline(samples, loss, n_pairs, seed):
    """Mean and population std of the loss over seeded random distinct pairs."""
    if len(samples) < 2:
        raise RangeError(f"Reference baseline needs at least 2 samples, got {len(samples)}")
    if n_pairs < 1:
        raise RangeError(f"n_pairs must be >= 1, got {n_pairs}")
    rng = stream(seed, STREAM_PAIRS)
    values = []
    for _ in range(n_pairs):
        i, j = rng.choice(len(samples), size=2, replace=False)
        values.append(loss.value(samples[i], samples[j]))
    values = np.asarray(values)
    return float(values.mean()), float(values.std())


@dataclass
class MetricsReport:
    source: str
    n_crops: int
    crop_width: int
    intra: dict                       # loss kind -> mean over pairs
    pairs: dict                       # loss kind -> [(i, j, value), ...]
    reference: Optional[dict] = None  # loss kind -> {mean, std, n_pairs, n_samples}
    not_computed: dict = field(default_factory=lambda: dict(NOT_COMPUTED_METRICS))

    @property
    def pair_count(self):
        return self.n_crops * (self.n_crops - 1) // 2

    def to_dict(self):
        return {
            "source": self.source,
            "n_crops": self.n_crops,
            "crop_width": self.crop_width,
            "pair_count": self.pair_count,
            "intra": dict(self.intra),
            "pairs": {
                kind: [{"i": i, "j": j, "value": v} for i, j, v in values]
                for kind, values in self.pairs.items()
            },
            "reference": self.reference,
            "not_computed": dict(self.not_computed),
        }


def evaluate_panorama(z, losses, n_crops, crop_width=None, source="", references=None,
                      n_pairs=1000, seed=0):
    """Runs intra_metric for every named loss, plus the reference baseline when given."""
    intra, pairs = {}, {}
    for kind, loss in losses.items():
        intra[kind], pairs[kind] = intra_metric(z, loss, n_crops, crop_width)

    reference = None
    if references:
        reference = {}
        for kind, loss in losses.items():
            mean, std = reference_baseline(references, loss, n_pairs, seed)
            reference[kind] = {
                "mean": mean,
                "std": std,
                "n_pairs": n_pairs,
                "n_samples": len(references),
            }

    return MetricsReport(
        source=source,
        n_crops=n_crops,
        crop_width=crop_width if crop_width is not None else z.shape[1] // n_crops,
        intra=intra,
        pairs=pairs,
        reference=reference,
    )
