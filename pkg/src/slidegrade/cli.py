"""Command line entry point: ``slidegrade <subcommand> ...``.

Set ``SLIDEGRADE_LOG_LEVEL`` (DEBUG, INFO, WARNING, ...) to control log
verbosity; the default is WARNING.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import load_model, predict_proba_batch, save_model
from .config import PipelineConfig, load_config
from .em import run_em, split_dataset
from .errors import SlideGradeError
from .heatmap import (
    DEFAULT_BETA,
    classmap_from_heatmap,
    load_classmap,
    render_heatmap,
    save_classmap,
    save_heatmap,
    scale_probability,
)
from .imaging import (
    SegmentationParams,
    load_image,
    load_mask,
    mst_foreground_extract,
    otsu_foreground_extract,
    save_mask,
)
from .metrics import pixel_score, write_metrics
from .pipeline import StageError, run_pipeline
from .synthdata import PRESETS, write_dataset
from .tiling import (
    NOISY,
    annotation_classmap,
    label_patches,
    load_annotations,
    manifest_record,
    patch_from_record,
    read_manifest,
    resize_patch,
    tile_slide,
    write_manifest,
)

log = logging.getLogger("slidegrade")

LOG_ENV = "SLIDEGRADE_LOG_LEVEL"


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _patch_path(root: Path, patch_id: str) -> Path:
    # ids look like "<slide>/<y>_<x>"
    return root / f"{patch_id}.png"


def _load_patches(patch_dir, manifest_path):
    """Patches of a ``tile`` output directory, with pixels loaded."""
    from PIL import Image

    root = Path(patch_dir)
    out = []
    for rec in read_manifest(manifest_path):
        with Image.open(_patch_path(root, rec["id"])) as im:
            pixels = np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
        out.append((patch_from_record(rec, pixels), rec.get("label")))
    return out


def cmd_segment(args) -> int:
    image = load_image(args.input)
    if args.method == "otsu":
        mask = otsu_foreground_extract(image)
    else:
        mask = mst_foreground_extract(image, SegmentationParams(args.edge_threshold, args.rgb_margin))
    save_mask(mask, args.output)
    print(f"foreground fraction {mask.fraction():.4f}")
    return 0


def cmd_tile(args) -> int:
    from PIL import Image

    image = load_image(args.image)
    mask = load_mask(args.mask) if args.mask else mst_foreground_extract(image)
    slide_id = args.slide_id or Path(args.image).stem
    patches = tile_slide(image, mask, args.patch_size, args.overlap, args.min_fg, slide_id)
    if args.annotations:
        ann = load_annotations(args.annotations)
        ann.check_bounds(image.width, image.height)
        labels = label_patches(patches, ann, image.width, image.height)
    else:
        labels = [None] * len(patches)
    out = Path(args.out_dir)
    records = []
    for patch, label in zip(patches, labels):
        small = resize_patch(patch, args.resize)
        path = _patch_path(out, patch.id)
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(small.pixels, mode="RGB").save(path, format="PNG")
        records.append(manifest_record(patch, label))
    write_manifest(records, out / "manifest.jsonl")
    n_noisy = sum(1 for lab in labels if lab is NOISY)
    print(f"{len(patches)} patches ({n_noisy} noisy) written to {out}")
    return 0


def cmd_synth(args) -> int:
    ids = write_dataset(args.out_dir, args.preset, args.count, args.seed)
    print(f"{len(ids)} slides written to {args.out_dir}")
    return 0


def cmd_em_run(args) -> int:
    base = PipelineConfig()
    config = base.with_overrides(
        annotated_fraction=args.annotated_fraction,
        heldout_fraction=args.heldout_fraction,
        sigma=args.sigma,
        iterations=args.iterations,
        seed=args.seed,
        learning_rate=args.learning_rate,
        epochs=args.epochs,
    )
    em_config = config.em_config()
    pairs = _load_patches(args.patches, args.labels)
    dataset = [(p, p.label) for p, lab in pairs if p.label is not None]
    if not dataset:
        raise SlideGradeError("no labelled patches in the manifest")
    split = split_dataset(dataset, config.annotated_fraction, config.heldout_fraction, config.seed)
    # patches without any label in the manifest join the unannotated pool
    extra = [p for p, lab in pairs if lab is None]
    model, history = run_em(split.annotated, split.unannotated + extra, split.held_out, em_config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.json")
    save_model(history.models[0], out / "baseline_model.json")
    for t, eff in enumerate(history.effective_sets, start=1):
        eff.write_jsonl(out / f"effective_set_{t}.jsonl")
    with open(out / "history.json", "w") as fh:
        json.dump({**history.to_json(), "split": split.summary()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    final = history.records[-1].metrics if history.records else history.baseline
    if final is not None:
        print(f"held-out accuracy {final.accuracy:.4f}")
    return 0


def cmd_heatmap(args) -> int:
    model = load_model(args.model)
    pairs = _load_patches(args.patches, args.manifest)
    patches = [p for p, _ in pairs if args.slide_id is None or p.slide_id == args.slide_id]
    if args.image:
        image = load_image(args.image)
        width, height = image.width, image.height
    elif args.width and args.height:
        width, height = args.width, args.height
    else:
        raise SlideGradeError("give --image or both --width and --height")
    probs = predict_proba_batch(model, patches) if patches else []
    heat = render_heatmap([(p, scale_probability(pr)) for p, pr in zip(patches, probs)], width, height)
    save_heatmap(heat, args.out)
    if args.classmap:
        save_classmap(classmap_from_heatmap(heat, args.beta), args.classmap)
    return 0


def cmd_score(args) -> int:
    pred = load_classmap(args.pred)
    if args.truth.endswith(".json"):
        truth = annotation_classmap(load_annotations(args.truth), pred.width, pred.height)
    else:
        truth = load_classmap(args.truth)
    score = pixel_score(pred, truth)
    if args.out:
        write_metrics(args.out, score=score)
    print(f"score {score:.6f}")
    return 0


def cmd_pipeline(args) -> int:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {k: getattr(args, k) for k in ("slides_dir", "out_dir", "seed", "workers")}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise SlideGradeError(f"--set expects key=value, got {item!r}")
        overrides[key] = json.loads(value)
    config = config.with_overrides(**overrides)
    result = run_pipeline(config)
    metrics = result.metrics
    print(f"artifacts in {result.out_dir}")
    if "accuracy" in metrics:
        print(f"held-out accuracy {metrics['accuracy']:.4f}")
    if "score" in metrics:
        print(f"pixel score {metrics['score']:.4f}")
    return 0


def _beta(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slidegrade", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="foreground mask of a slide image")
    p.add_argument("--input", required=True, help="slide PNG")
    p.add_argument("--output", required=True, help="mask PNG (255 = tissue)")
    p.add_argument("--method", choices=("mst", "otsu"), default="mst")
    p.add_argument("--edge-threshold", type=float, default=100.0)
    p.add_argument("--rgb-margin", type=float, default=45.0)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("tile", help="cut a slide into labelled patches")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", help="mask PNG; segmented with defaults when omitted")
    p.add_argument("--annotations", help="annotation JSON used to label patches")
    p.add_argument("--slide-id")
    p.add_argument("--patch-size", type=int, default=1536)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--min-fg", type=float, default=0.4)
    p.add_argument("--resize", type=int, default=512)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("synth", help="generate synthetic slides")
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("em-run", help="semi-supervised training on tiled patches")
    p.add_argument("--patches", required=True, help="patch directory written by 'tile'")
    p.add_argument("--labels", required=True, help="patch manifest JSONL with labels")
    p.add_argument("--annotated-fraction", type=float, default=0.3)
    p.add_argument("--heldout-fraction", type=float, default=0.2)
    p.add_argument("--sigma", type=float, default=0.9)
    p.add_argument("--iterations", type=int, default=2)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_em_run)

    p = sub.add_parser("heatmap", help="render heatmap and classmap of one slide")
    p.add_argument("--model", required=True)
    p.add_argument("--patches", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--slide-id")
    p.add_argument("--image", help="slide image, used for its dimensions")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--beta", type=_beta, default=DEFAULT_BETA)
    p.add_argument("--out", required=True, help="heatmap PNG")
    p.add_argument("--classmap", help="classmap PNG")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("score", help="pixel-wise score of a classmap")
    p.add_argument("--pred", required=True, help="predicted classmap PNG")
    p.add_argument("--truth", required=True, help="annotation JSON or classmap PNG")
    p.add_argument("--out", help="metrics JSON")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--slides-dir")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--set", action="append", metavar="KEY=JSON", help="override any config key")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"slidegrade {args.command}: {exc}", file=sys.stderr)
        return 1
    except (SlideGradeError, OSError, ValueError) as exc:
        print(f"slidegrade {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
