"""Semi-supervised EM training loop.

``initialize`` bootstraps the model from half of the annotated patches plus
the hardest examples of the other half. Each iteration then pseudo-labels
the unannotated pool (``e_step``) and retrains from scratch on annotated
plus accepted pseudo-labelled patches (``m_step``).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .classifier import Model, TrainConfig, log_likelihood, predict_proba_batch, train
from .errors import ConfigurationError, InvalidInputError
from .metrics import PatchMetrics, patch_metrics
from .selection import EffectiveSet, collaborative_filter, hard_example_mining
from .tiling import Patch, PatchLabel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EMConfig:
    annotated_fraction: float = 0.3
    sigma: float = 0.9
    max_iterations: int = 2
    quantile: float = 0.2
    train: TrainConfig = TrainConfig()
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.annotated_fraction <= 1:
            raise ConfigurationError("annotated_fraction must lie in (0, 1]")
        if not -1 < self.sigma <= 1:
            raise ConfigurationError("sigma must lie in (-1, 1]")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if not 0 < self.quantile <= 1:
            raise ConfigurationError("quantile must lie in (0, 1]")


@dataclass
class InitResult:
    model: Model
    first_half: list
    second_half: list
    hard_examples: list


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    effective_size: int
    q_value: float
    metrics: PatchMetrics | None

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "effective_size": self.effective_size,
            "q_value": self.q_value,
            "metrics": None if self.metrics is None else self.metrics.to_json(),
        }


@dataclass
class EMHistory:
    baseline: PatchMetrics | None = None
    records: list[IterationRecord] = field(default_factory=list)
    effective_sets: list[EffectiveSet] = field(default_factory=list)
    models: list[Model] = field(default_factory=list)  # theta^0, theta^1, ...
    stopped_early: bool = False

    def to_json(self) -> dict:
        return {
            "baseline": None if self.baseline is None else self.baseline.to_json(),
            "iterations": [r.to_json() for r in self.records],
            "stopped_early": self.stopped_early,
        }


def stratified_halves(annotated, seed: int) -> tuple[list, list]:
    """Seeded split into two halves with each class spread evenly.

    Pairs are shuffled, grouped by class and dealt alternately, so the first
    half gets ``ceil(n / 2)`` items.
    """
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(annotated))
    ordered = sorted(perm.tolist(), key=lambda i: int(annotated[i][1]))
    first = [annotated[i] for i in ordered[0::2]]
    second = [annotated[i] for i in ordered[1::2]]
    return first, second


def initialize_detailed(annotated, config: EMConfig) -> InitResult:
    annotated = list(annotated)
    if len(annotated) < 2:
        raise InvalidInputError("initialisation needs at least 2 annotated patches")
    first, second = stratified_halves(annotated, config.seed)
    model = train(first, config.train)
    hard = hard_example_mining(model, second, config.quantile)
    theta0 = train(first + hard, config.train)
    return InitResult(theta0, first, second, hard)


def initialize(annotated, config: EMConfig) -> Model:
    return initialize_detailed(annotated, config).model


def e_step(model: Model, unannotated: Sequence[Patch], annotated, config: EMConfig) -> EffectiveSet:
    if not unannotated:
        return EffectiveSet()
    return collaborative_filter(unannotated, annotated, model, config.sigma)


def m_step(annotated, effective: EffectiveSet, config: EMConfig) -> Model:
    annotated = list(annotated)
    if not annotated:
        raise InvalidInputError("M-step needs annotated patches")
    return train(annotated + effective.pairs(), config.train)


def evaluate(model: Model, dataset) -> PatchMetrics | None:
    dataset = list(dataset)
    if not dataset:
        return None
    probs = predict_proba_batch(model, [p for p, _ in dataset])
    return patch_metrics(np.argmax(probs, axis=1), [int(lab) for _, lab in dataset])


def run_em(annotated, unannotated, held_out, config: EMConfig) -> tuple[Model, EMHistory]:
    """Initialise, then alternate E and M steps for ``max_iterations``.

    Stops early when the effective set repeats the previous one exactly,
    since the retrained model would then be identical.
    """
    annotated = list(annotated)
    unannotated = list(unannotated)
    held_out = list(held_out)
    if not annotated:
        raise InvalidInputError("EM needs annotated patches")

    model = initialize(annotated, config)
    history = EMHistory(baseline=evaluate(model, held_out), models=[model])
    previous = None
    for t in range(1, config.max_iterations + 1):
        effective = e_step(model, unannotated, annotated, config)
        if previous is not None and effective.signature() == previous.signature():
            history.stopped_early = True
            log.info("effective set unchanged at iteration %d; stopping", t)
            break
        model = m_step(annotated, effective, config)
        q = log_likelihood(model, annotated, effective.pairs())
        metrics = evaluate(model, held_out)
        history.records.append(IterationRecord(t, len(effective), q, metrics))
        history.effective_sets.append(effective)
        history.models.append(model)
        log.info(
            "iteration %d: |E|=%d Q=%.4f acc=%s",
            t,
            len(effective),
            q,
            "n/a" if metrics is None else f"{metrics.accuracy:.4f}",
        )
        previous = effective
    return model, history


# -- experiment splits ---------------------------------------------------------


@dataclass
class DataSplit:
    held_out: list
    annotated: list
    unannotated: list[Patch]  # labels stripped
    unit: str  # "slide" or "patch"

    def summary(self) -> dict:
        return {
            "unit": self.unit,
            "held_out": len(self.held_out),
            "annotated": len(self.annotated),
            "unannotated": len(self.unannotated),
        }


def _take(n_total: int, fraction: float) -> int:
    return int(np.floor(fraction * n_total + 0.5))


def split_dataset(
    dataset,
    annotated_fraction: float,
    heldout_fraction: float,
    seed: int,
    by_slide: bool | None = None,
) -> DataSplit:
    """Carve a held-out set, then keep labels on ``annotated_fraction`` of the rest.

    Splits are by slide when at least three slides are present (or when
    ``by_slide`` is forced), otherwise by patch. The unannotated patches are
    returned without their labels.
    """
    dataset = list(dataset)
    if not dataset:
        raise InvalidInputError("empty dataset")
    if not 0 <= heldout_fraction < 1:
        raise ConfigurationError("heldout_fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    slides = sorted({p.slide_id for p, _ in dataset})
    if by_slide is None:
        by_slide = len(slides) >= 3

    if by_slide:
        order = [slides[i] for i in rng.permutation(len(slides))]
        n_held = _take(len(order), heldout_fraction)
        rest = order[n_held:]
        n_ann = max(1, _take(len(rest), annotated_fraction))
        held_ids, ann_ids = set(order[:n_held]), set(rest[:n_ann])
        held = [d for d in dataset if d[0].slide_id in held_ids]
        ann = [d for d in dataset if d[0].slide_id in ann_ids]
        unl = [d for d in dataset if d[0].slide_id not in held_ids | ann_ids]
    else:
        idx = rng.permutation(len(dataset)).tolist()
        n_held = _take(len(idx), heldout_fraction)
        rest = idx[n_held:]
        n_ann = max(1, _take(len(rest), annotated_fraction))
        held = [dataset[i] for i in sorted(idx[:n_held])]
        ann = [dataset[i] for i in sorted(rest[:n_ann])]
        unl = [dataset[i] for i in sorted(rest[n_ann:])]
    return DataSplit(
        held_out=held,
        annotated=ann,
        unannotated=[p.with_label(None) for p, _ in unl],
        unit="slide" if by_slide else "patch",
    )


def config_to_json(config: EMConfig) -> dict:
    return asdict(config)


def config_from_json(data: dict) -> EMConfig:
    data = dict(data)
    data["train"] = TrainConfig(**data.get("train", {}))
    return EMConfig(**data)
