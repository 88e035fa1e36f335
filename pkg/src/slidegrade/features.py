"""Patch feature vectors and cosine similarity."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, UndefinedSimilarityError

N_BINS = 16
FEATURE_DIM = 4 * N_BINS  # three colour histograms + one gradient histogram


def color_texture_features(pixels: np.ndarray) -> np.ndarray:
    """Reference 64-d descriptor of an RGB patch.

    Layout: R, G, B histograms (16 bins of width 16 each) followed by a
    16-bin histogram of absolute horizontal luminance differences. Each
    block is normalised to sum to 1.
    """
    px = np.asarray(pixels)
    if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] == 0 or px.shape[1] == 0:
        raise InvalidInputError("patch pixels must be a non-empty (H, W, 3) array")
    px = px.astype(np.int64)
    n = px.shape[0] * px.shape[1]
    out = np.empty(FEATURE_DIM, dtype=np.float64)
    for c in range(3):
        out[c * N_BINS:(c + 1) * N_BINS] = np.bincount(
            (px[:, :, c] // 16).ravel(), minlength=N_BINS
        ) / n
    lum = px.sum(axis=2) / 3.0
    if px.shape[1] < 2:
        grad_hist = np.zeros(N_BINS)
        grad_hist[0] = 1.0
    else:
        g = np.abs(np.diff(lum, axis=1))
        bins = np.minimum((g // 16).astype(np.int64), N_BINS - 1)
        grad_hist = np.bincount(bins.ravel(), minlength=N_BINS) / bins.size
    out[3 * N_BINS:] = grad_hist
    return out


def extract_features(patch) -> np.ndarray:
    """Feature vector of a patch with the reference extractor.

    A precomputed ``patch.features`` vector is returned as is.
    """
    if getattr(patch, "features", None) is not None:
        return np.asarray(patch.features, dtype=np.float64)
    if patch.pixels is None:
        raise InvalidInputError(f"patch {patch.id} has neither pixels nor features")
    return color_texture_features(patch.pixels)


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedSimilarityError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def save_feature_cache(path, ids, matrix) -> None:
    """Write features as raw little-endian float64 rows plus a JSON sidecar."""
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise InvalidInputError("feature matrix must have one row per id")
    path = Path(path)
    path.write_bytes(matrix.tobytes())
    sidecar = {"ids": list(ids), "dimension": int(matrix.shape[1]), "dtype": "<f8"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def load_feature_cache(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f8")
    return meta["ids"], data.reshape(len(meta["ids"]), meta["dimension"]).astype(np.float64)
