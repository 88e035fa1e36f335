"""Heatmaps of cancer intensity and their discretisation into class maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import InvalidInputError
from .tiling import N_CLASSES, Patch

DEFAULT_BETA = (0.1, 0.5, 0.75)

# Normal, Benign, InSitu, Invasive
PALETTE = ((0, 0, 0), (0, 255, 0), (0, 0, 255), (255, 0, 0))


@dataclass(frozen=True)
class Heatmap:
    intensity: np.ndarray  # (height, width) float64 in [0, 1]

    @property
    def width(self) -> int:
        return self.intensity.shape[1]

    @property
    def height(self) -> int:
        return self.intensity.shape[0]


@dataclass(frozen=True)
class ClassMap:
    classes: np.ndarray  # (height, width) uint8 ordinals

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def height(self) -> int:
        return self.classes.shape[0]


def scale_probability(prob) -> float:
    """Expected class ordinal divided by 3, so Normal -> 0 and Invasive -> 1."""
    prob = np.asarray(prob, dtype=np.float64)
    return float(np.dot(np.arange(N_CLASSES), prob) / (N_CLASSES - 1))


def render_heatmap(patches: Sequence[tuple[Patch, float]], width: int, height: int) -> Heatmap:
    """Average the intensities of all patch windows covering each pixel.

    Uncovered pixels are 0.
    """
    total = np.zeros((height, width), dtype=np.float64)
    count = np.zeros((height, width), dtype=np.int64)
    for patch, value in patches:
        x, y = patch.origin
        if x < 0 or y < 0 or x + patch.size > width or y + patch.size > height:
            raise InvalidInputError(f"patch {patch.id} lies outside the slide")
        total[y:y + patch.size, x:x + patch.size] += value
        count[y:y + patch.size, x:x + patch.size] += 1
    out = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    return Heatmap(np.clip(out, 0.0, 1.0))


def _check_beta(beta) -> tuple[float, float, float]:
    beta = tuple(float(b) for b in beta)
    if len(beta) != N_CLASSES - 1 or not (0 < beta[0] < beta[1] < beta[2] < 1):
        raise InvalidInputError(f"beta must satisfy 0 < b1 < b2 < b3 < 1, got {beta}")
    return beta


def classify_intensity(values, beta=DEFAULT_BETA) -> np.ndarray:
    """Bins [0,b1], (b1,b2], (b2,b3], (b3,1] map to ordinals 0..3."""
    beta = _check_beta(beta)
    return np.searchsorted(np.asarray(beta), np.asarray(values, dtype=np.float64), side="left").astype(np.uint8)


def classmap_from_heatmap(h: Heatmap, beta=DEFAULT_BETA) -> ClassMap:
    return ClassMap(classify_intensity(h.intensity, beta))


def save_heatmap(h: Heatmap, path) -> None:
    data = np.floor(np.clip(h.intensity, 0, 1) * 255 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def save_classmap(cm: ClassMap, path) -> None:
    im = Image.fromarray(cm.classes.astype(np.uint8), mode="P")
    im.putpalette([c for rgb in PALETTE for c in rgb])
    im.save(path, format="PNG")


def load_classmap(path) -> ClassMap:
    with Image.open(path) as im:
        if im.mode == "P":
            return ClassMap(np.asarray(im, dtype=np.uint8).copy())
        rgb = np.asarray(im.convert("RGB"), dtype=np.int64)
    out = np.zeros(rgb.shape[:2], dtype=np.uint8)
    for k, color in enumerate(PALETTE):
        out[(rgb == np.array(color)).all(axis=2)] = k
    return ClassMap(out)
