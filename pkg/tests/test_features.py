import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slidegrade.errors import InvalidInputError, UndefinedSimilarityError
from slidegrade.features import (
    FEATURE_DIM,
    N_BINS,
    color_texture_features,
    cosine_similarity,
    extract_features,
    load_feature_cache,
    save_feature_cache,
)
from slidegrade.tiling import Patch

pixel_arrays = arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3)))
vectors = arrays(np.float64, 6, elements=st.floats(-100, 100, allow_nan=False))


def test_constant_patch():
    px = np.empty((5, 6, 3), np.uint8)
    px[:] = (0, 130, 255)
    f = color_texture_features(px)
    assert f.shape == (FEATURE_DIM,)
    assert f[0] == 1.0
    assert f[N_BINS + 130 // 16] == 1.0
    assert f[2 * N_BINS + 15] == 1.0
    assert f[3 * N_BINS] == 1.0
    assert f.sum() == 4.0


def test_channel_permutation_permutes_blocks(rng):
    px = rng.integers(0, 256, (8, 8, 3)).astype(np.uint8)
    f = color_texture_features(px)
    g = color_texture_features(px[:, :, [2, 0, 1]])
    blocks = f[: 3 * N_BINS].reshape(3, N_BINS)
    assert np.array_equal(g[: 3 * N_BINS].reshape(3, N_BINS), blocks[[2, 0, 1]])
    assert np.array_equal(g[3 * N_BINS:], f[3 * N_BINS:])


def test_texture_bins_by_hand():
    px = np.zeros((1, 4, 3), np.uint8)
    px[0, :, :] = np.array([0, 48, 48, 255])[:, None]
    f = color_texture_features(px)
    tex = f[3 * N_BINS:]
    # differences 48, 0, 207 -> bins 3, 0, 12
    assert tex[3] == tex[0] == tex[12] == pytest.approx(1 / 3)


@settings(max_examples=50, deadline=None)
@given(pixel_arrays)
def test_blocks_are_distributions(px):
    f = color_texture_features(px)
    assert (f >= 0).all()
    assert np.allclose(f.reshape(4, N_BINS).sum(axis=1), 1.0, atol=1e-9)
    assert np.array_equal(f, color_texture_features(px))


def test_extract_prefers_cached_features():
    p = Patch("s", (0, 0), 1, features=np.arange(3.0))
    assert extract_features(p).tolist() == [0.0, 1.0, 2.0]
    with pytest.raises(InvalidInputError):
        extract_features(Patch("s", (0, 0), 1))
    with pytest.raises(InvalidInputError):
        color_texture_features(np.zeros((0, 4, 3), np.uint8))


def test_cosine_examples():
    assert cosine_similarity([1, 2, 2], [2, 1, 2]) == pytest.approx(8 / 9, abs=1e-15)
    assert cosine_similarity([3, 4], [3, 4]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0


def test_cosine_errors():
    with pytest.raises(UndefinedSimilarityError):
        cosine_similarity([0, 0], [1, 2])
    with pytest.raises(InvalidInputError):
        cosine_similarity([1, 2], [1, 2, 3])


@settings(max_examples=100)
@given(vectors, vectors, st.floats(0.01, 100))
def test_cosine_properties(a, b, k):
    if np.linalg.norm(a) == 0 or np.linalg.norm(b) == 0:
        return
    s = cosine_similarity(a, b)
    assert abs(s) <= 1 + 1e-12
    assert s == cosine_similarity(b, a)
    assert math.isclose(cosine_similarity(k * a, b), s, rel_tol=1e-9, abs_tol=1e-12)


def test_feature_cache_round_trip(tmp_path, rng):
    m = rng.normal(size=(3, 64))
    save_feature_cache(tmp_path / "f.bin", ["a", "b", "c"], m)
    raw = (tmp_path / "f.bin").read_bytes()
    assert len(raw) == 3 * 64 * 8
    assert np.array_equal(np.frombuffer(raw, dtype="<f8").reshape(3, 64), m)
    ids, back = load_feature_cache(tmp_path / "f.bin")
    assert ids == ["a", "b", "c"] and np.array_equal(back, m)
    with pytest.raises(InvalidInputError):
        save_feature_cache(tmp_path / "g.bin", ["a"], m)
