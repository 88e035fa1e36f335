"""Hard-example mining and similarity-vote selection of pseudo-labels."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classifier import Model, feature_matrix, get_backend, predict_proba_batch
from .errors import InvalidInputError
from .tiling import N_CLASSES, Patch, PatchLabel


def effective_coefficient(prob, true_label) -> float:
    """Ordinal distance between prediction and truth, times the confidence.

    The predicted class is the argmax of ``prob`` (lowest ordinal on ties).
    """
    prob = np.asarray(prob, dtype=np.float64)
    ck = int(np.argmax(prob))
    return abs(ck - int(true_label)) * float(prob[ck])


def _top_count(quantile: float, n: int) -> int:
    # round() absorbs float noise such as 0.3 * 10 = 3.0000000000000004
    return min(n, math.ceil(round(quantile * n, 9)))


def hard_example_mining(model: Model, pool, quantile: float = 0.2) -> list:
    """The ``ceil(quantile * len(pool))`` pool pairs with the largest effective coefficient.

    Ties are broken by ascending patch id; the result is ordered by rank.
    """
    pool = list(pool)
    if not pool:
        raise InvalidInputError("hard example mining needs a non-empty pool")
    if not 0 < quantile <= 1:
        raise InvalidInputError("quantile must lie in (0, 1]")
    probs = predict_proba_batch(model, [p for p, _ in pool])
    alphas = [effective_coefficient(pr, lab) for pr, (_, lab) in zip(probs, pool)]
    ranked = sorted(range(len(pool)), key=lambda i: (-alphas[i], pool[i][0].id))
    return [pool[i] for i in ranked[: _top_count(quantile, len(pool))]]


@dataclass(frozen=True)
class EffectiveMember:
    patch: Patch = field(repr=False)
    label: PatchLabel
    probability: float
    votes: tuple[int, ...]

    @property
    def patch_id(self) -> str:
        return self.patch.id

    def to_json(self) -> dict:
        return {
            "id": self.patch_id,
            "label": self.label.display,
            "probability": self.probability,
            "votes": list(self.votes),
        }


@dataclass(frozen=True)
class EffectiveSet:
    members: tuple[EffectiveMember, ...] = ()

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def pairs(self) -> list[tuple[Patch, PatchLabel]]:
        return [(m.patch, m.label) for m in self.members]

    def signature(self) -> tuple[tuple[str, int], ...]:
        return tuple((m.patch_id, int(m.label)) for m in self.members)

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for m in self.members:
                fh.write(json.dumps(m.to_json(), sort_keys=True) + "\n")


def similarity_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Cosine similarity of every row of ``A`` against every row of ``B``.

    Rows with zero norm get NaN so that no comparison with them succeeds.
    """
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        S = (A @ B.T) / (na[:, None] * nb[None, :])
    S[na == 0, :] = np.nan
    S[:, nb == 0] = np.nan
    return S


def vote_counts(
    unannotated_features: np.ndarray,
    annotated_features: np.ndarray,
    annotated_labels: np.ndarray,
    sigma: float,
    chunk: int = 2048,
) -> np.ndarray:
    """Per unannotated row, how many annotated rows of each class exceed ``sigma``."""
    onehot = np.zeros((len(annotated_labels), N_CLASSES), dtype=np.int64)
    onehot[np.arange(len(annotated_labels)), annotated_labels] = 1
    out = np.zeros((len(unannotated_features), N_CLASSES), dtype=np.int64)
    for start in range(0, len(unannotated_features), chunk):
        S = similarity_matrix(unannotated_features[start:start + chunk], annotated_features)
        with np.errstate(invalid="ignore"):
            above = (S > sigma).astype(np.int64)
        out[start:start + chunk] = above @ onehot
    return out


def collaborative_filter(
    unannotated: Sequence[Patch],
    annotated,
    model: Model,
    sigma: float = 0.9,
) -> EffectiveSet:
    """Keep unannotated patches whose neighbour vote agrees with the model.

    Each annotated patch with cosine similarity above ``sigma`` casts one
    vote for its class. A patch is accepted, with the winning class as its
    pseudo-label, when that class equals the model's prediction. Patches
    without votes are skipped; vote ties go to the lower ordinal.
    """
    annotated = list(annotated)
    unannotated = list(unannotated)
    if not annotated:
        raise InvalidInputError("collaborative filtering needs annotated patches")
    if not -1 < sigma <= 1:
        raise InvalidInputError("sigma must lie in (-1, 1]")
    if not unannotated:
        return EffectiveSet()
    backend = get_backend(model.backend_id)
    fu = feature_matrix(unannotated, backend)
    fa = feature_matrix([p for p, _ in annotated], backend)
    la = np.array([int(lab) for _, lab in annotated], dtype=np.int64)
    votes = vote_counts(fu, fa, la, sigma)
    probs = backend.predict_proba_matrix(model, fu) if hasattr(
        backend, "predict_proba_matrix"
    ) else predict_proba_batch(model, unannotated)

    members = []
    for i, patch in enumerate(unannotated):
        if not votes[i].any():
            continue
        label = int(np.argmax(votes[i]))
        pred = int(np.argmax(probs[i]))
        if pred == label:
            members.append(
                EffectiveMember(
                    patch=patch,
                    label=PatchLabel(label),
                    probability=float(probs[i, label]),
                    votes=tuple(int(v) for v in votes[i]),
                )
            )
    return EffectiveSet(tuple(members))
