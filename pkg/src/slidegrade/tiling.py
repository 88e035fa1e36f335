"""Overlapping patch tiling, annotation rasterisation and patch labelling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError
from .imaging import ForegroundMask, RasterImage


class PatchLabel(IntEnum):
    NORMAL = 0
    BENIGN = 1
    IN_SITU = 2
    INVASIVE = 3

    @classmethod
    def parse(cls, value) -> "PatchLabel":
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            return cls(int(value))
        key = str(value).strip().lower().replace("-", "").replace("_", "").replace(" ", "")
        try:
            return _LABEL_NAMES[key]
        except KeyError:
            raise InvalidInputError(f"unknown class {value!r}") from None

    @property
    def display(self) -> str:
        return _DISPLAY[self]


_LABEL_NAMES = {
    "normal": PatchLabel.NORMAL,
    "benign": PatchLabel.BENIGN,
    "insitu": PatchLabel.IN_SITU,
    "invasive": PatchLabel.INVASIVE,
}
_DISPLAY = {
    PatchLabel.NORMAL: "Normal",
    PatchLabel.BENIGN: "Benign",
    PatchLabel.IN_SITU: "InSitu",
    PatchLabel.INVASIVE: "Invasive",
}
N_CLASSES = len(PatchLabel)


class _Noisy:
    """Marker returned for patches holding two large cancer types."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "NOISY"

    def __reduce__(self):
        return (_Noisy, ())


NOISY = _Noisy()


@dataclass(frozen=True)
class AnnotationRegion:
    polygon: tuple[tuple[float, float], ...]
    label: PatchLabel

    def __post_init__(self):
        poly = tuple((float(x), float(y)) for x, y in self.polygon)
        if len(poly) < 3:
            raise InvalidInputError("annotation polygons need at least 3 vertices")
        label = PatchLabel.parse(self.label)
        if label == PatchLabel.NORMAL:
            raise InvalidInputError("annotation regions must be a cancer class")
        object.__setattr__(self, "polygon", poly)
        object.__setattr__(self, "label", label)

    def bbox(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.polygon]
        ys = [p[1] for p in self.polygon]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class AnnotationSet:
    regions: tuple[AnnotationRegion, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))

    def check_bounds(self, width: int, height: int) -> None:
        for r in self.regions:
            x0, y0, x1, y1 = r.bbox()
            if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
                raise InvalidInputError("annotation polygon outside slide bounds")

    def to_json(self) -> dict:
        return {
            "regions": [
                {"class": r.label.display, "polygon": [[x, y] for x, y in r.polygon]}
                for r in self.regions
            ]
        }

    @classmethod
    def from_json(cls, data: dict) -> "AnnotationSet":
        regions = []
        for item in data.get("regions", []):
            regions.append(
                AnnotationRegion(
                    polygon=tuple(tuple(p) for p in item["polygon"]),
                    label=PatchLabel.parse(item["class"]),
                )
            )
        return cls(tuple(regions))


def load_annotations(path) -> AnnotationSet:
    with open(path) as fh:
        return AnnotationSet.from_json(json.load(fh))


def save_annotations(annotations: AnnotationSet, path) -> None:
    with open(path, "w") as fh:
        json.dump(annotations.to_json(), fh)


@dataclass(frozen=True)
class Patch:
    """A square window of a slide.

    ``origin`` and ``size`` always describe the window in slide pixels; after
    :func:`resize_patch` the ``pixels`` array may be smaller than ``size``.
    """

    slide_id: str
    origin: tuple[int, int]  # (x, y) of the top-left pixel
    size: int
    pixels: np.ndarray | None = field(default=None, repr=False, compare=False)
    fg_fraction: float = 1.0
    label: PatchLabel | None = None
    features: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def id(self) -> str:
        # zero padding makes lexicographic id order row-major within a slide
        x, y = self.origin
        return f"{self.slide_id}/{y:06d}_{x:06d}"

    def window(self) -> tuple[slice, slice]:
        x, y = self.origin
        return slice(y, y + self.size), slice(x, x + self.size)

    def with_label(self, label) -> "Patch":
        return replace(self, label=label)


def tile_origins(length: int, size: int, stride: int) -> list[int]:
    """Window starts along one axis; the last one is clamped to the edge."""
    starts = list(range(0, length - size + 1, stride))
    if starts[-1] != length - size:
        starts.append(length - size)
    return starts


def tile_slide(
    image: RasterImage,
    mask: ForegroundMask,
    patch_size: int = 1536,
    overlap: float = 0.5,
    min_fg: float = 0.4,
    slide_id: str = "slide",
) -> list[Patch]:
    """Cut ``image`` into overlapping square patches with enough foreground.

    Patches are returned row-major by origin. Pixels are views into the
    slide array, not copies.
    """
    if (mask.width, mask.height) != (image.width, image.height):
        raise InvalidInputError("mask and image dimensions differ")
    if patch_size < 1 or patch_size > min(image.width, image.height):
        raise InvalidInputError(
            f"patch_size {patch_size} does not fit a {image.width}x{image.height} image"
        )
    if not 0 <= overlap < 1:
        raise InvalidInputError("overlap must lie in [0, 1)")
    if not 0 <= min_fg <= 1:
        raise InvalidInputError("min_fg must lie in [0, 1]")
    stride = max(1, int(round(patch_size * (1 - overlap))))

    # summed-area table for the foreground counts of every window
    sat = np.zeros((image.height + 1, image.width + 1), dtype=np.int64)
    sat[1:, 1:] = mask.flags.astype(np.int64).cumsum(0).cumsum(1)
    area = patch_size * patch_size

    patches = []
    for y in tile_origins(image.height, patch_size, stride):
        for x in tile_origins(image.width, patch_size, stride):
            y1, x1 = y + patch_size, x + patch_size
            fg = int(sat[y1, x1] - sat[y, x1] - sat[y1, x] + sat[y, x])
            frac = fg / area
            if frac < min_fg:
                continue
            patches.append(
                Patch(
                    slide_id=slide_id,
                    origin=(x, y),
                    size=patch_size,
                    pixels=image.pixels[y:y1, x:x1],
                    fg_fraction=frac,
                )
            )
    return patches


def rasterize_polygon(
    polygon: Sequence[tuple[float, float]],
    x0: int,
    y0: int,
    width: int,
    height: int,
) -> np.ndarray:
    """Even-odd fill of ``polygon`` over the window at ``(x0, y0)``.

    A pixel is inside when its centre is; returns a ``(height, width)`` bool
    array.
    """
    toggles = np.zeros((height, width + 1), dtype=np.uint8)
    n = len(polygon)
    for i in range(n):
        xa, ya = polygon[i]
        xb, yb = polygon[(i + 1) % n]
        if ya == yb:
            continue
        lo, hi = min(ya, yb), max(ya, yb)
        # rows whose centre py satisfies lo <= py < hi
        r0 = max(math.ceil(lo - 0.5) - y0, 0)
        r1 = min(math.ceil(hi - 0.5) - y0, height)
        if r0 >= r1:
            continue
        rows = np.arange(r0, r1)
        py = rows + y0 + 0.5
        xc = xa + (py - ya) * (xb - xa) / (yb - ya)
        # pixel centres strictly left of the crossing are toggled
        k = np.clip(np.ceil(xc - 0.5 - x0), 0, width).astype(np.int64)
        np.bitwise_xor.at(toggles, (rows, np.zeros_like(rows)), 1)
        np.bitwise_xor.at(toggles, (rows, k), 1)
    return (np.bitwise_xor.accumulate(toggles[:, :width], axis=1) & 1).astype(bool)


def class_raster(
    annotations: AnnotationSet, x0: int, y0: int, width: int, height: int
) -> np.ndarray:
    """Ordinal class per pixel over a window (Normal where unannotated).

    Where regions of different classes overlap, the higher ordinal wins, so
    the result does not depend on region order.
    """
    out = np.zeros((height, width), dtype=np.uint8)
    for region in annotations.regions:
        bx0, by0, bx1, by1 = region.bbox()
        if bx1 <= x0 or by1 <= y0 or bx0 >= x0 + width or by0 >= y0 + height:
            continue
        inside = rasterize_polygon(region.polygon, x0, y0, width, height)
        np.maximum(out, np.where(inside, np.uint8(region.label), np.uint8(0)), out=out)
    return out


def annotation_classmap(annotations: AnnotationSet, width: int, height: int) -> np.ndarray:
    return class_raster(annotations, 0, 0, width, height)


def label_from_areas(areas: Sequence[int], total: int):
    """Apply the patch labelling rules to per-class pixel counts.

    ``areas`` is indexed by ordinal; index 0 (Normal) is ignored.
    """
    cancer = [int(areas[c]) for c in range(1, N_CLASSES)]
    # integer comparisons: area > total / 3  <=>  3 * area > total
    if sum(1 for a in cancer if 3 * a > total) >= 2:
        return NOISY
    if 3 * sum(cancer) < total:
        return PatchLabel.NORMAL
    best = max(range(len(cancer)), key=lambda i: (cancer[i], i))
    return PatchLabel(best + 1)


def extract_patch_label(patch: Patch, annotations: AnnotationSet):
    """Label a patch from annotation polygons; may return :data:`NOISY`."""
    x, y = patch.origin
    raster = class_raster(annotations, x, y, patch.size, patch.size)
    areas = np.bincount(raster.ravel(), minlength=N_CLASSES)
    return label_from_areas(areas, patch.size * patch.size)


def label_patches(
    patches: Iterable[Patch], annotations: AnnotationSet, width: int, height: int
) -> list:
    """Vectorised :func:`extract_patch_label` for many patches of one slide."""
    raster = annotation_classmap(annotations, width, height)
    sats = []
    for c in range(1, N_CLASSES):
        sat = np.zeros((height + 1, width + 1), dtype=np.int64)
        sat[1:, 1:] = (raster == c).astype(np.int64).cumsum(0).cumsum(1)
        sats.append(sat)
    labels = []
    for p in patches:
        x, y = p.origin
        x1, y1 = x + p.size, y + p.size
        areas = [0] + [int(s[y1, x1] - s[y, x1] - s[y1, x] + s[y, x]) for s in sats]
        labels.append(label_from_areas(areas, p.size * p.size))
    return labels


def resize_pixels(pixels: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize to ``target x target`` with half-pixel centres.

    Channel values are rounded half-up.
    """
    if target < 1:
        raise InvalidInputError("target size must be >= 1")
    h, w = pixels.shape[:2]
    if (h, w) == (target, target):
        return pixels.copy()

    def axis(n_src):
        src = (np.arange(target) + 0.5) * (n_src / target) - 0.5
        src = np.clip(src, 0, n_src - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_src - 1)
        return i0, i1, src - i0

    r0, r1, fy = axis(h)
    c0, c1, fx = axis(w)
    px = pixels.astype(np.float64)
    top = px[r0][:, c0] * (1 - fx)[None, :, None] + px[r0][:, c1] * fx[None, :, None]
    bot = px[r1][:, c0] * (1 - fx)[None, :, None] + px[r1][:, c1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def resize_patch(patch: Patch, target: int = 512) -> Patch:
    if patch.pixels is None:
        raise InvalidInputError("patch has no pixels")
    return replace(patch, pixels=resize_pixels(patch.pixels, target))


def manifest_record(patch: Patch, label=None) -> dict:
    label = patch.label if label is None else label
    return {
        "id": patch.id,
        "slide_id": patch.slide_id,
        "origin": list(patch.origin),
        "size": patch.size,
        "fg_fraction": patch.fg_fraction,
        "label": "Noisy" if label is NOISY else (None if label is None else PatchLabel(label).display),
    }


def write_manifest(records: Iterable[dict], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out


def patch_from_record(rec: dict, pixels: np.ndarray | None = None) -> Patch:
    label = rec.get("label")
    return Patch(
        slide_id=rec["slide_id"],
        origin=(int(rec["origin"][0]), int(rec["origin"][1])),
        size=int(rec["size"]),
        pixels=pixels,
        fg_fraction=float(rec.get("fg_fraction", 1.0)),
        label=None if label in (None, "Noisy") else PatchLabel.parse(label),
    )
