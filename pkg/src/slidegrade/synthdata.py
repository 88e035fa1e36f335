"""Synthetic slides with exact ground-truth annotations.

A slide is near-white glass (luminance ~245) carrying a few dark tissue
blobs (luminance ~150) and, inside them, polygonal cancer regions. Each
class has its own base colour and noise texture. Every slide also gets a
random stain shift, and every blob and region a smaller shift of its own,
so that a model fitted on a few slides transfers imperfectly to the
others. All tissue colours stay at least 60 luminance levels below the
background, so the MST segmenter at default settings separates them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .imaging import RasterImage, save_image
from .tiling import (
    AnnotationRegion,
    AnnotationSet,
    PatchLabel,
    annotation_classmap,
    rasterize_polygon,
    save_annotations,
)


@dataclass(frozen=True)
class ClassStyle:
    """Base colour plus luminance texture of one tissue class.

    ``blocks`` lists ``(block_size, amplitude)`` layers of uniform noise
    shared by all channels and constant over square blocks; block sizes of
    4 px and up survive the 4x patch downscale of the desk preset.
    """

    color: tuple[float, float, float]
    fine_noise: float = 0.0  # uniform per-channel, per-pixel amplitude
    blocks: tuple[tuple[int, float], ...] = ()
    speckle_rate: float = 0.0  # fraction of speckle_size blocks darkened
    speckle_depth: float = 0.0
    speckle_size: int = 4


DEFAULT_STYLES = {
    PatchLabel.NORMAL: ClassStyle((185, 115, 155), fine_noise=10, blocks=((16, 6),)),
    PatchLabel.BENIGN: ClassStyle((140, 140, 175), fine_noise=4, blocks=((8, 22),)),
    PatchLabel.IN_SITU: ClassStyle(
        (115, 85, 170), fine_noise=6, speckle_rate=0.12, speckle_depth=45, speckle_size=4
    ),
    PatchLabel.INVASIVE: ClassStyle((165, 70, 115), fine_noise=6, blocks=((4, 35),)),
}


@dataclass(frozen=True)
class SlideSpec:
    width: int = 3072
    height: int = 3072
    background: float = 245.0
    background_noise: float = 8.0
    tissue_count: tuple[int, int] = (3, 5)
    tissue_radius: tuple[float, float] = (450.0, 800.0)
    # number of cancer regions per class, as an inclusive (min, max) range
    region_count: tuple[int, int] = (2, 3)
    region_radius: tuple[float, float] = (200.0, 380.0)
    stain_jitter: float = 12.0
    # extra colour shift drawn independently for every tissue blob and region
    region_jitter: float = 8.0
    styles: dict = field(default_factory=lambda: dict(DEFAULT_STYLES))
    seed: int = 0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise InvalidInputError("slides must be at least 8x8")
        if self.tissue_radius[0] <= 0 or self.tissue_radius[0] > self.tissue_radius[1]:
            raise InvalidInputError("invalid tissue radius range")
        if 2 * self.tissue_radius[1] > min(self.width, self.height):
            raise InvalidInputError("tissue blobs larger than the slide")
        if self.region_radius[0] <= 0 or self.region_radius[0] > self.region_radius[1]:
            raise InvalidInputError("invalid region radius range")
        if 2 * self.region_radius[1] > min(self.width, self.height):
            raise InvalidInputError("cancer regions larger than the slide")
        if self.region_count[0] < 0 or self.region_count[0] > self.region_count[1]:
            raise InvalidInputError("invalid region count range")
        if self.tissue_count[0] < 1 or self.tissue_count[0] > self.tissue_count[1]:
            raise InvalidInputError("invalid tissue count range; at least one blob is needed")
        if self.stain_jitter < 0 or self.region_jitter < 0:
            raise InvalidInputError("jitter must be >= 0")


PRESETS = {
    # 3072^2 slides; meant to be tiled with 256 px patches at stride 128
    "desk": SlideSpec(),
    # small slides for unit tests; tile with 64 px patches
    "small": SlideSpec(
        width=768,
        height=768,
        tissue_count=(2, 3),
        tissue_radius=(110.0, 200.0),
        region_radius=(40.0, 90.0),
    ),
}

PRESET_PATCH = {"desk": (256, 0.5, 64), "small": (64, 0.5, 32)}  # patch size, overlap, resize


def star_polygon(rng, cx, cy, radius, width, height, n_vertices=None):
    """Random star-shaped polygon around ``(cx, cy)`` clipped to the slide."""
    n = n_vertices or int(rng.integers(12, 25))
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    radii = radius * rng.uniform(0.65, 1.0, n)
    xs = np.clip(cx + radii * np.cos(angles), 0, width)
    ys = np.clip(cy + radii * np.sin(angles), 0, height)
    return tuple((round(float(x), 1), round(float(y), 1)) for x, y in zip(xs, ys))


def _block_noise(rng, amplitude, block, h, w):
    coarse = rng.uniform(-amplitude, amplitude, (h // block + 1, w // block + 1))
    return np.repeat(np.repeat(coarse, block, axis=0), block, axis=1)[:h, :w]


def _texture(rng, style: ClassStyle, shape) -> np.ndarray:
    h, w = shape
    if style.fine_noise:
        out = rng.uniform(-style.fine_noise, style.fine_noise, (h, w, 3))
    else:
        out = np.zeros((h, w, 3))
    lum = np.zeros((h, w))
    for block, amplitude in style.blocks:
        lum += _block_noise(rng, amplitude, block, h, w)
    if style.speckle_rate:
        k = style.speckle_size
        dots = rng.random((h // k + 1, w // k + 1)) < style.speckle_rate
        dots = np.repeat(np.repeat(dots, k, axis=0), k, axis=1)[:h, :w]
        lum -= style.speckle_depth * dots
    return out + lum[:, :, None]


def _polygon_window(polygon, width, height):
    """``(x0, y0, inside)`` for the polygon rasterised over its clipped bounding box."""
    xs = [x for x, _ in polygon]
    ys = [y for _, y in polygon]
    x0, y0 = max(int(min(xs)), 0), max(int(min(ys)), 0)
    x1, y1 = min(math.ceil(max(xs)) + 1, width), min(math.ceil(max(ys)) + 1, height)
    return x0, y0, rasterize_polygon(polygon, x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class SyntheticSlide:
    image: RasterImage
    annotations: AnnotationSet
    tissue: np.ndarray  # (height, width) bool, every non-glass pixel


def generate_slide(spec: SlideSpec) -> tuple[RasterImage, AnnotationSet]:
    """Render one slide; deterministic for a given ``spec.seed``."""
    slide = render_slide(spec)
    return slide.image, slide.annotations


def render_slide(spec: SlideSpec) -> SyntheticSlide:
    """Like :func:`generate_slide` but also returns the true tissue mask."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    img = spec.background + rng.uniform(-spec.background_noise, spec.background_noise, (h, w, 3))

    tissue = np.zeros((h, w), dtype=bool)
    blobs = []
    blob_windows = []
    for _ in range(int(rng.integers(spec.tissue_count[0], spec.tissue_count[1] + 1))):
        r = rng.uniform(*spec.tissue_radius)
        cx = rng.uniform(r, w - r)
        cy = rng.uniform(r, h - r)
        blobs.append((cx, cy, r))
        blob_windows.append(_polygon_window(star_polygon(rng, cx, cy, r, w, h), w, h))
        (x0, y0, inside) = blob_windows[-1]
        tissue[y0:y0 + inside.shape[0], x0:x0 + inside.shape[1]] |= inside

    regions = []
    for label in (PatchLabel.BENIGN, PatchLabel.IN_SITU, PatchLabel.INVASIVE):
        for _ in range(int(rng.integers(spec.region_count[0], spec.region_count[1] + 1))):
            cx, cy, br = blobs[int(rng.integers(len(blobs)))]
            r = min(rng.uniform(*spec.region_radius), 0.8 * br)
            ang = rng.uniform(0, 2 * np.pi)
            off = rng.uniform(0, max(br - r, 0) * 0.6)
            px = float(np.clip(cx + off * math.cos(ang), r, w - r))
            py = float(np.clip(cy + off * math.sin(ang), r, h - r))
            regions.append(AnnotationRegion(star_polygon(rng, px, py, r, w, h), label))
    annotations = AnnotationSet(tuple(regions))
    classes = annotation_classmap(annotations, w, h)

    # per-slide stain: a colour cast plus an intensity offset that may darken
    # freely but lightens by at most stain_jitter / 2, keeping tissue off-white
    shift = rng.normal(0, spec.stain_jitter, 3)
    shift = np.minimum(shift, spec.stain_jitter / 2)
    painted = tissue | (classes > 0)

    # Each blob (normal tissue) and each region is painted separately so it
    # can carry its own colour shift. Only pixels whose ground-truth class is
    # the item's class are painted, so overlaps resolve as in the raster.
    items = [(PatchLabel.NORMAL, win) for win in blob_windows]
    items += [(reg.label, _polygon_window(reg.polygon, w, h)) for reg in regions]
    for label, (x0, y0, inside) in items:
        local = np.minimum(rng.normal(0, spec.region_jitter, 3), spec.region_jitter / 2)
        y1, x1 = y0 + inside.shape[0], x0 + inside.shape[1]
        where = inside & (classes[y0:y1, x0:x1] == int(label))
        if not where.any():
            continue
        tex = _texture(rng, spec.styles[label], where.shape)
        block = np.asarray(spec.styles[label].color, dtype=np.float64) + shift + local + tex
        img[y0:y1, x0:x1][where] = block[where]
    image = RasterImage(np.clip(np.rint(img), 0, 255).astype(np.uint8))
    return SyntheticSlide(image, annotations, painted)


def generate_dataset(preset: str = "desk", count: int = 20, seed: int = 0):
    """Yield ``(slide_id, image, annotations)`` for ``count`` slides."""
    if preset not in PRESETS:
        raise InvalidInputError(f"unknown preset {preset!r}")
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    children = np.random.SeedSequence(seed).spawn(count)
    for i, child in enumerate(children):
        spec = replace(PRESETS[preset], seed=int(child.generate_state(1)[0]))
        image, ann = generate_slide(spec)
        yield f"slide{i:03d}", image, ann


def write_dataset(out_dir, preset: str = "desk", count: int = 20, seed: int = 0) -> list[str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for slide_id, image, ann in generate_dataset(preset, count, seed):
        save_image(image, out / f"{slide_id}.png")
        save_annotations(ann, out / f"{slide_id}.json")
        ids.append(slide_id)
    meta = {"preset": preset, "count": count, "seed": seed, "slides": ids}
    (out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return ids
