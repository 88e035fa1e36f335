"""Slide rasters, PNG I/O and foreground segmentation.

The main segmenter builds a 4-neighbour grid graph over the pixels, takes
its minimum spanning tree, cuts tree edges heavier than a threshold and
classifies the resulting subtrees by mean luminance: every subtree whose
mean is within ``rgb_margin`` of the brightest subtree is background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import InvalidInputError
from .kernels import kruskal_forest, stable_argsort_bounded


@dataclass(frozen=True)
class RasterImage:
    """RGB pixel grid stored as a ``(height, width, 3)`` uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidInputError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidInputError("image must be at least 1x1")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise InvalidInputError("channel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class ForegroundMask:
    flags: np.ndarray  # (height, width) bool, True = tissue

    def __post_init__(self):
        object.__setattr__(self, "flags", np.asarray(self.flags, dtype=bool))

    @property
    def width(self) -> int:
        return self.flags.shape[1]

    @property
    def height(self) -> int:
        return self.flags.shape[0]

    def fraction(self) -> float:
        return float(self.flags.mean())


@dataclass(frozen=True)
class SegmentationParams:
    edge_threshold: float = 100.0
    rgb_margin: float = 45.0

    def __post_init__(self):
        if not self.edge_threshold > 0:
            raise InvalidInputError("edge_threshold must be > 0")
        if not self.rgb_margin >= 0:
            raise InvalidInputError("rgb_margin must be >= 0")


def _check_image(image: RasterImage) -> None:
    if image.pixels.size == 0:
        raise InvalidInputError("zero-sized image")


MAX_SQ_DISTANCE = 3 * 255 * 255


def grid_edge_weights(pixels: np.ndarray) -> np.ndarray:
    """Squared Euclidean RGB distance (int32) for every grid edge.

    Edges are indexed horizontal-first: ``(r, c)-(r, c+1)`` in raster order,
    followed by ``(r, c)-(r+1, c)`` in raster order.
    """
    px = pixels.astype(np.int32)
    n_h = px.shape[0] * (px.shape[1] - 1)
    sq = np.empty(n_h + (px.shape[0] - 1) * px.shape[1], dtype=np.int32)
    for c in range(3):
        dh = px[:, 1:, c] - px[:, :-1, c]
        dv = px[1:, :, c] - px[:-1, :, c]
        if c == 0:
            sq[:n_h] = (dh * dh).ravel()
            sq[n_h:] = (dv * dv).ravel()
        else:
            sq[:n_h] += (dh * dh).ravel()
            sq[n_h:] += (dv * dv).ravel()
    return sq


def mst_forest_labels(image: RasterImage, edge_threshold: float = 100.0) -> np.ndarray:
    """Subtree id per pixel after cutting MST edges heavier than the threshold.

    Ids are assigned in raster order of each subtree's first pixel, so the
    labelling is canonical. Returns an ``(height, width)`` int64 array.
    """
    _check_image(image)
    h, w = image.height, image.width
    sq = grid_edge_weights(image.pixels)
    # squared integer distances sort like the distances themselves; stable
    # sort gives the (weight, edge index) tie order
    order = stable_argsort_bounded(sq, MAX_SQ_DISTANCE)
    weights = np.sqrt(sq.astype(np.float64))
    _, labels = kruskal_forest(h, w, order, weights, float(edge_threshold))
    return labels.reshape(h, w)


def subtree_luminance(image: RasterImage, labels: np.ndarray) -> np.ndarray:
    """Mean of per-pixel (R+G+B)/3 over each subtree, indexed by label."""
    channel_sum = image.pixels.astype(np.int64).sum(axis=2).ravel()
    flat = labels.ravel()
    totals = np.bincount(flat, weights=channel_sum)
    counts = np.bincount(flat)
    return totals / (3.0 * counts)


def mst_foreground_extract(
    image: RasterImage, params: SegmentationParams | None = None
) -> ForegroundMask:
    params = params or SegmentationParams()
    labels = mst_forest_labels(image, params.edge_threshold)
    means = subtree_luminance(image, labels)
    u = means.max()
    # the brightest subtree stays background even when rgb_margin == 0
    background = (means > u - params.rgb_margin) | (means == u)
    return ForegroundMask(~background[labels])


def luminance_levels(image: RasterImage) -> np.ndarray:
    """Integer luminance round((R+G+B)/3) in 0..255."""
    s = image.pixels.astype(np.int32).sum(axis=2)
    return (s + 1) // 3


def otsu_threshold(image: RasterImage) -> tuple[int, float]:
    """Return ``(t, variance)`` maximising between-class variance.

    Pixels with luminance ``< t`` form the dark class. The first maximiser
    over ``t = 0..255`` is returned.
    """
    _check_image(image)
    hist = np.bincount(luminance_levels(image).ravel(), minlength=256).astype(np.float64)
    levels = np.arange(256, dtype=np.float64)
    # dark-class pixel count and level sum for t = 0..255 (levels strictly below t)
    w0 = np.concatenate([[0.0], np.cumsum(hist)[:-1]])
    s0 = np.concatenate([[0.0], np.cumsum(hist * levels)[:-1]])
    w1 = hist.sum() - w0
    s1 = (hist * levels).sum() - s0
    # w0*w1*(m0-m1)^2 written without divisions by the class weights
    denom = w0 * w1
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(denom > 0, (w0 * s1 - w1 * s0) ** 2 / denom, 0.0)
    t = int(np.argmax(var))
    return t, float(var[t])


def otsu_foreground_extract(image: RasterImage) -> ForegroundMask:
    t, var = otsu_threshold(image)
    if var <= 0.0:
        return ForegroundMask(np.zeros((image.height, image.width), dtype=bool))
    return ForegroundMask(luminance_levels(image) < t)


def load_image(path) -> RasterImage:
    with Image.open(path) as im:
        return RasterImage(np.asarray(im.convert("RGB"), dtype=np.uint8).copy())


def save_image(image: RasterImage, path) -> None:
    Image.fromarray(image.pixels, mode="RGB").save(path, format="PNG")


def load_mask(path) -> ForegroundMask:
    with Image.open(path) as im:
        return ForegroundMask(np.asarray(im.convert("L")) >= 128)


def save_mask(mask: ForegroundMask, path) -> None:
    data = np.where(mask.flags, 255, 0).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")
