"""End-to-end run: segment, tile, label, train with EM, render and score.

All artifacts are written to a temporary sibling of the output directory
which is renamed into place only after every stage succeeded, so a failed
run never leaves a half-written result behind.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import logging
import os
import platform
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import PIL

from . import __version__
from .classifier import attach_features, get_backend, predict_proba_batch, save_model
from .config import PipelineConfig
from .em import run_em, split_dataset
from .errors import SlideGradeError
from .features import save_feature_cache
from .heatmap import classmap_from_heatmap, render_heatmap, save_classmap, save_heatmap, scale_probability
from .imaging import RasterImage, load_image, mst_foreground_extract, save_mask
from .kernels import BACKEND as KERNEL_BACKEND
from .metrics import pixel_score, write_metrics
from .tiling import (
    NOISY,
    AnnotationSet,
    annotation_classmap,
    label_patches,
    load_annotations,
    manifest_record,
    resize_patch,
    tile_slide,
    write_manifest,
)

log = logging.getLogger(__name__)


class StageError(SlideGradeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except (SlideGradeError, OSError, ValueError, KeyError) as exc:
        raise StageError(name, str(exc) or type(exc).__name__) from exc


@dataclass
class PreparedSlide:
    slide_id: str
    width: int
    height: int
    mask: object  # ForegroundMask
    patches: list  # resized, feature-carrying patches without pixels
    labels: list  # PatchLabel or NOISY, aligned with patches
    annotations: AnnotationSet

    def labelled(self) -> list:
        return [(p, lab) for p, lab in zip(self.patches, self.labels) if lab is not NOISY]


def discover_slides(slides_dir) -> list[tuple[str, Path, Path]]:
    """``(slide_id, image_path, annotation_path)`` for every ``*.png`` in the directory."""
    root = Path(slides_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"slides directory {root} does not exist")
    out = []
    for png in sorted(root.glob("*.png")):
        ann = png.with_suffix(".json")
        if not ann.exists():
            raise FileNotFoundError(f"missing annotations {ann.name} for {png.name}")
        out.append((png.stem, png, ann))
    if not out:
        raise FileNotFoundError(f"no .png slides in {root}")
    return out


def prepare_slide(image: RasterImage, annotations: AnnotationSet, slide_id: str, config: PipelineConfig):
    """Segment, tile, label and featurise one slide."""
    with stage("segment"):
        mask = mst_foreground_extract(image, config.segmentation())
    with stage("tile"):
        patches = tile_slide(image, mask, config.patch_size, config.overlap, config.min_fg, slide_id)
    with stage("label"):
        annotations.check_bounds(image.width, image.height)
        labels = label_patches(patches, annotations, image.width, image.height)
    with stage("features"):
        backend = get_backend(config.backend)
        small = [resize_patch(p, config.resize) for p in patches]
        small = attach_features(small, backend)
        kept = [
            replace(p, pixels=None, label=None if lab is NOISY else lab)
            for p, lab in zip(small, labels)
        ]
    return PreparedSlide(slide_id, image.width, image.height, mask, kept, labels, annotations)


def prepare_synthetic(preset: str, count: int, seed: int, config: PipelineConfig) -> list[PreparedSlide]:
    """Generate and prepare synthetic slides in memory, without touching disk."""
    from .synthdata import generate_dataset

    return [
        prepare_slide(image, ann, slide_id, config)
        for slide_id, image, ann in generate_dataset(preset, count, seed)
    ]


def _prepare_from_files(args):
    slide_id, png, ann, config = args
    with stage("load"):
        image = load_image(png)
        annotations = load_annotations(ann)
    return prepare_slide(image, annotations, slide_id, config)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def versions() -> dict:
    return {
        "slidegrade": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pillow": PIL.__version__,
        "kernels": KERNEL_BACKEND,
    }


def _dump(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_artifacts(config: PipelineConfig, slides, work: Path) -> dict:
    (work / "masks").mkdir()
    for s in slides:
        save_mask(s.mask, work / "masks" / f"{s.slide_id}.png")
    records = [manifest_record(p, lab) for s in slides for p, lab in zip(s.patches, s.labels)]
    write_manifest(records, work / "patches.jsonl")
    every = [p for s in slides for p in s.patches]
    if every:
        save_feature_cache(work / "features.f8", [p.id for p in every], np.stack([p.features for p in every]))

    with stage("split"):
        dataset = [pair for s in slides for pair in s.labelled()]
        split = split_dataset(dataset, config.annotated_fraction, config.heldout_fraction, config.seed)
    _dump(
        {
            "unit": split.unit,
            "held_out": [p.id for p, _ in split.held_out],
            "annotated": [p.id for p, _ in split.annotated],
            "unannotated": [p.id for p in split.unannotated],
        },
        work / "split.json",
    )

    with stage("em"):
        model, history = run_em(split.annotated, split.unannotated, split.held_out, config.em_config())
    save_model(history.models[0], work / "baseline_model.json")
    save_model(model, work / "model.json")
    for t, eff in enumerate(history.effective_sets, start=1):
        eff.write_jsonl(work / f"effective_set_{t}.jsonl")
    _dump(history.to_json(), work / "history.json")

    # heatmaps for held-out slides when whole slides were held out,
    # otherwise for every slide
    held_slides = sorted({p.slide_id for p, _ in split.held_out}) if split.unit == "slide" else []
    shown = [s for s in slides if s.slide_id in held_slides] if held_slides else list(slides)
    scores = {}
    with stage("heatmap"):
        (work / "heatmaps").mkdir()
        (work / "classmaps").mkdir()
        for s in shown:
            probs = predict_proba_batch(model, s.patches) if s.patches else []
            values = [(p, scale_probability(pr)) for p, pr in zip(s.patches, probs)]
            heat = render_heatmap(values, s.width, s.height)
            cmap = classmap_from_heatmap(heat, config.beta)
            save_heatmap(heat, work / "heatmaps" / f"{s.slide_id}.png")
            save_classmap(cmap, work / "classmaps" / f"{s.slide_id}.png")
            with stage("score"):
                truth = annotation_classmap(s.annotations, s.width, s.height)
                scores[s.slide_id] = pixel_score(cmap, truth)

    final = history.records[-1].metrics if history.records else history.baseline
    return write_metrics(
        work / "metrics.json",
        final,
        float(np.mean(list(scores.values()))) if scores else None,
        baseline=None if history.baseline is None else history.baseline.to_json(),
        iterations=[r.to_json() for r in history.records],
        slide_scores=scores,
        split=split.summary(),
        stopped_early=history.stopped_early,
    )


@dataclass
class RunResult:
    out_dir: Path
    metrics: dict


def run_pipeline(config: PipelineConfig) -> RunResult:
    """Run every stage and publish the artifacts atomically into ``config.out_dir``."""
    with stage("config"):
        config.validate()
        inputs = discover_slides(config.slides_dir)
    out = Path(config.out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    work = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        jobs = [(sid, png, ann, config) for sid, png, ann in inputs]
        if config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                slides = list(pool.map(_prepare_from_files, jobs))
        else:
            slides = [_prepare_from_files(job) for job in jobs]
        with stage("write"):
            metrics = _write_artifacts(config, slides, work)
            outputs = {
                str(p.relative_to(work)): sha256_file(p)
                for p in sorted(work.rglob("*"))
                if p.is_file()
            }
            manifest = {
                "config": config.to_json(include_paths=False),
                "versions": versions(),
                "inputs": {f"{png.name}": sha256_file(png) for _, png, _ in inputs}
                | {f"{ann.name}": sha256_file(ann) for _, _, ann in inputs},
                "outputs": outputs,
            }
            _dump(manifest, work / "manifest.json")
        if out.exists():
            shutil.rmtree(out)
        os.rename(work, out)
    except BaseException:
        shutil.rmtree(work, ignore_errors=True)
        raise
    return RunResult(out, metrics)
