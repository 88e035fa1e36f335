"""Pluggable 4-class patch classifier with a softmax-regression reference.

A backend bundles a feature extractor with ``train`` / ``predict_proba``.
The reference backend fits a linear softmax model on the 64-d colour and
texture descriptor by full-batch gradient ascent on

    J(W, b) = mean_i log P(y_i | x_i) - l2 * (||W||^2 + ||b||^2)

starting from zero parameters. Averaging the log-likelihood keeps the
step size independent of the dataset size; for the reference features
(nonnegative blocks summing to 1) the curvature of J is at most 2.5 + 2 * l2,
so any step below 0.79 increases J at every epoch (for l2 < 0.01).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from . import features as _features
from .errors import ConfigurationError, InvalidInputError
from .tiling import N_CLASSES, Patch, PatchLabel

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 500
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.l2 < 0:
            raise ConfigurationError("l2 must be >= 0")


@dataclass(frozen=True)
class Model:
    backend_id: str
    weights: np.ndarray = field(repr=False)  # (N_CLASSES, dim)
    bias: np.ndarray = field(repr=False)  # (N_CLASSES,)
    config: TrainConfig = TrainConfig()

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != N_CLASSES or b.shape != (N_CLASSES,):
            raise ConfigurationError("model parameters have the wrong shape")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ConfigurationError("model parameters must be finite")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def dimension(self) -> int:
        return self.weights.shape[1]

    def to_json(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "backend": self.backend_id,
            "n_classes": N_CLASSES,
            "dimension": self.dimension,
            "weights": self.weights.ravel().tolist(),
            "bias": self.bias.tolist(),
            "config": asdict(self.config),
        }

    @classmethod
    def from_json(cls, data: dict) -> "Model":
        version = data.get("version", 1)
        if version > MODEL_FORMAT_VERSION:
            raise ConfigurationError(f"model format version {version} is newer than supported")
        dim = int(data["dimension"])
        return cls(
            backend_id=data["backend"],
            weights=np.asarray(data["weights"], dtype=np.float64).reshape(N_CLASSES, dim),
            bias=np.asarray(data["bias"], dtype=np.float64),
            config=TrainConfig(**data.get("config", {})),
        )


def save_model(model: Model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_json(), fh)


def load_model(path) -> Model:
    with open(path) as fh:
        return Model.from_json(json.load(fh))


# -- reference numerics -------------------------------------------------------


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def objective(weights, bias, X, y, l2) -> float:
    """Mean log-likelihood minus the L2 penalty."""
    logp = log_softmax(X @ weights.T + bias)
    ll = logp[np.arange(len(y)), y].mean()
    return float(ll - l2 * (np.sum(weights * weights) + np.sum(bias * bias)))


def objective_gradient(weights, bias, X, y, l2):
    """Analytic gradient of :func:`objective` w.r.t. ``(weights, bias)``."""
    p = softmax(X @ weights.T + bias)
    resid = -p
    resid[np.arange(len(y)), y] += 1.0
    resid /= len(y)
    return resid.T @ X - 2 * l2 * weights, resid.sum(axis=0) - 2 * l2 * bias


def fit_softmax(X, y, config: TrainConfig, trace: bool = False):
    """Gradient ascent from zero init; returns ``(W, b, objective_trace)``.

    ``objective_trace`` holds J before the first step and after every epoch
    (empty unless ``trace`` is set).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    W = np.zeros((N_CLASSES, X.shape[1]))
    b = np.zeros(N_CLASSES)
    history = [objective(W, b, X, y, config.l2)] if trace else []
    for _ in range(config.epochs):
        gW, gb = objective_gradient(W, b, X, y, config.l2)
        W += config.learning_rate * gW
        b += config.learning_rate * gb
        if trace:
            history.append(objective(W, b, X, y, config.l2))
    return W, b, history


# -- backends ----------------------------------------------------------------


class Backend(Protocol):
    backend_id: str
    dimension: int

    def extract_features(self, patch: Patch) -> np.ndarray: ...

    def train(self, dataset: Sequence[tuple[Patch, PatchLabel]], config: TrainConfig) -> Model: ...

    def predict_proba(self, model: Model, patch: Patch) -> np.ndarray: ...


class ReferenceBackend:
    backend_id = "softmax-linear"
    dimension = _features.FEATURE_DIM

    def extract_features(self, patch: Patch) -> np.ndarray:
        return _features.extract_features(patch)

    def feature_matrix(self, patches: Sequence[Patch]) -> np.ndarray:
        if not patches:
            return np.zeros((0, self.dimension))
        X = np.stack([self.extract_features(p) for p in patches])
        if X.shape[1] != self.dimension:
            raise ConfigurationError(
                f"extractor produced {X.shape[1]}-d features, backend expects {self.dimension}"
            )
        return X

    def train(self, dataset, config: TrainConfig | None = None) -> Model:
        config = config or TrainConfig()
        if len(dataset) == 0:
            raise InvalidInputError("cannot train on an empty dataset")
        X = self.feature_matrix([p for p, _ in dataset])
        y = np.array([int(lab) for _, lab in dataset], dtype=np.int64)
        W, b, _ = fit_softmax(X, y, config)
        return Model(self.backend_id, W, b, config)

    def predict_proba_matrix(self, model: Model, X: np.ndarray) -> np.ndarray:
        if model.backend_id != self.backend_id:
            raise ConfigurationError(f"model was trained by backend {model.backend_id!r}")
        if X.shape[1] != model.dimension or model.dimension != self.dimension:
            raise ConfigurationError(
                f"model expects {model.dimension}-d features, got {X.shape[1]}-d"
            )
        return softmax(X @ model.weights.T + model.bias)

    def predict_proba(self, model: Model, patch: Patch) -> np.ndarray:
        return self.predict_proba_matrix(model, self.feature_matrix([patch]))[0]

    def predict_proba_batch(self, model: Model, patches: Sequence[Patch]) -> np.ndarray:
        return self.predict_proba_matrix(model, self.feature_matrix(patches))


_BACKENDS: dict[str, Backend] = {ReferenceBackend.backend_id: ReferenceBackend()}
DEFAULT_BACKEND = _BACKENDS[ReferenceBackend.backend_id]


def register_backend(backend: Backend) -> None:
    _BACKENDS[backend.backend_id] = backend


def get_backend(backend_id: str | None = None) -> Backend:
    if backend_id is None:
        return DEFAULT_BACKEND
    try:
        return _BACKENDS[backend_id]
    except KeyError:
        raise ConfigurationError(f"unknown classifier backend {backend_id!r}") from None


def feature_matrix(patches: Sequence[Patch], backend: Backend | None = None) -> np.ndarray:
    backend = backend or DEFAULT_BACKEND
    if hasattr(backend, "feature_matrix"):
        return backend.feature_matrix(patches)
    if not patches:
        return np.zeros((0, backend.dimension))
    return np.stack([backend.extract_features(p) for p in patches])


def predict_proba_batch(model: Model, patches: Sequence[Patch]) -> np.ndarray:
    backend = get_backend(model.backend_id)
    if hasattr(backend, "predict_proba_batch"):
        return backend.predict_proba_batch(model, patches)
    if not patches:
        return np.zeros((0, N_CLASSES))
    return np.stack([backend.predict_proba(model, p) for p in patches])


def train(dataset, config: TrainConfig | None = None, backend: Backend | None = None) -> Model:
    return (backend or DEFAULT_BACKEND).train(dataset, config or TrainConfig())


def predict_proba(model: Model, patch: Patch) -> np.ndarray:
    return get_backend(model.backend_id).predict_proba(model, patch)


def log_likelihood(model: Model, annotated, pseudo=()) -> float:
    """Sum of log P(label | patch) over annotated and pseudo-labelled pairs."""
    pairs = list(annotated) + list(pseudo)
    if not pairs:
        return 0.0
    probs = predict_proba_batch(model, [p for p, _ in pairs])
    labels = np.array([int(lab) for _, lab in pairs])
    return float(np.log(probs[np.arange(len(pairs)), labels]).sum())


def attach_features(patches: Sequence[Patch], backend: Backend | None = None) -> list[Patch]:
    """Return copies of ``patches`` carrying precomputed feature vectors."""
    backend = backend or DEFAULT_BACKEND
    return [replace(p, features=backend.extract_features(p)) for p in patches]
