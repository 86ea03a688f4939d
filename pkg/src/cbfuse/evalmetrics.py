"""Thresholding, Dice and aggregation of per-volume scores."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, ShapeMismatch

CLASSES = ("liver", "tumor")


def binarize(probs, threshold=0.5):
    """``probs >= threshold`` (inclusive), per channel."""
    return np.asarray(probs) >= threshold


def dice(pred, gt):
    """``2|P∩G| / (|P| + |G|)``; two empty masks score 1.0."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"dice of shapes {pred.shape} and {gt.shape}")
    denom = int(pred.sum()) + int(gt.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, gt).sum()) / denom


@dataclass
class DiceReport:
    """Per-volume Dice for each class; ``mean`` is the arithmetic mean."""

    per_volume: dict = field(default_factory=lambda: {c: [] for c in CLASSES})

    @property
    def n_volumes(self):
        return len(self.per_volume[CLASSES[0]])

    @property
    def mean(self):
        return {c: float(np.mean(v)) if v else float("nan") for c, v in self.per_volume.items()}

    def add(self, probs, labels, threshold=0.5):
        """Score one volume: ``probs`` (2, ...) against a LabelVolume or (2, ...) mask."""
        masks = binarize(probs, threshold)
        gt = labels.channels() if hasattr(labels, "channels") else np.asarray(labels)
        gt = gt.astype(bool)
        for c, name in enumerate(CLASSES):
            self.per_volume[name].append(dice(masks[c], gt[c]))
        return self

    def to_dict(self):
        return {"n_volumes": self.n_volumes, "mean": self.mean,
                "per_volume": {k: list(map(float, v)) for k, v in self.per_volume.items()}}


def aggregate(reports):
    """Combine repetitions: mean over volumes within each report, then over reports.

    The result keeps one "volume" entry per report (its mean), so its ``mean``
    is the mean of repetition means.
    """
    reports = list(reports)
    if not reports:
        raise EmptyInput("aggregate needs at least one report")
    if len(reports) == 1:
        return DiceReport({c: list(v) for c, v in reports[0].per_volume.items()})
    out = DiceReport()
    for r in reports:
        m = r.mean
        for c in CLASSES:
            out.per_volume[c].append(m[c])
    return out
