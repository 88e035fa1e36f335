"""Patch-wise precision / accuracy / F1 and the pixel-wise ordinal score."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .tiling import N_CLASSES


@dataclass(frozen=True)
class PatchMetrics:
    precision: float
    accuracy: float
    f1: float
    confusion: tuple[tuple[int, ...], ...] = ()  # rows = truth, cols = prediction

    def to_json(self) -> dict:
        return {
            "precision": self.precision,
            "accuracy": self.accuracy,
            "f1": self.f1,
            "confusion_matrix": [list(r) for r in self.confusion],
        }


def confusion_matrix(predictions: Sequence[int], truths: Sequence[int]) -> np.ndarray:
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (np.asarray(truths, dtype=np.int64), np.asarray(predictions, dtype=np.int64)), 1)
    return cm


def patch_metrics(predictions: Sequence[int], truths: Sequence[int]) -> PatchMetrics:
    """Accuracy plus macro precision and F1.

    The macro average runs over classes that occur in the predictions or the
    truths; a class with an empty denominator contributes 0 for that term.
    """
    predictions = [int(p) for p in predictions]
    truths = [int(t) for t in truths]
    if len(predictions) != len(truths):
        raise InvalidInputError("predictions and truths differ in length")
    if not predictions:
        raise InvalidInputError("metrics need at least one prediction")
    cm = confusion_matrix(predictions, truths)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    present = (predicted > 0) | (actual > 0)
    prec = np.divide(tp, predicted, out=np.zeros(N_CLASSES), where=predicted > 0)
    rec = np.divide(tp, actual, out=np.zeros(N_CLASSES), where=actual > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros(N_CLASSES), where=denom > 0)
    return PatchMetrics(
        precision=float(prec[present].mean()),
        accuracy=float(tp.sum() / len(truths)),
        f1=float(f1[present].mean()),
        confusion=tuple(tuple(int(v) for v in row) for row in cm),
    )


def pixel_score(pred, truth) -> float:
    """1 - mean ordinal error / 3 between two class rasters."""
    p = np.asarray(getattr(pred, "classes", pred), dtype=np.int64)
    t = np.asarray(getattr(truth, "classes", truth), dtype=np.int64)
    if p.shape != t.shape:
        raise InvalidInputError(f"classmap shapes differ: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise InvalidInputError("empty classmap")
    return float(1.0 - np.abs(p - t).sum() / (3.0 * p.size))


def write_metrics(path, patch: PatchMetrics | None = None, score: float | None = None, **extra) -> dict:
    out = {}
    if patch is not None:
        out.update(patch.to_json())
    if score is not None:
        out["score"] = score
    out.update(extra)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out
