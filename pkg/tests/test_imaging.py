import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import same_partition, threshold_components
from slidegrade.errors import InvalidInputError
from slidegrade.imaging import (
    ForegroundMask,
    RasterImage,
    SegmentationParams,
    grid_edge_weights,
    load_image,
    load_mask,
    luminance_levels,
    mst_forest_labels,
    mst_foreground_extract,
    otsu_foreground_extract,
    otsu_threshold,
    save_image,
    save_mask,
    subtree_luminance,
)


def test_uniform_white_is_all_background():
    img = RasterImage(np.full((8, 8, 3), 255, np.uint8))
    assert not mst_foreground_extract(img).flags.any()


def test_two_halves():
    px = np.full((8, 8, 3), 240, np.uint8)
    px[:, 4:] = 100
    mask = mst_foreground_extract(RasterImage(px))
    assert mask.flags[:, 4:].all()
    assert not mask.flags[:, :4].any()
    labels = mst_forest_labels(RasterImage(px), 100)
    assert len(np.unique(labels)) == 2


def test_margin_zero_keeps_brightest_subtree_background():
    px = np.full((4, 4, 3), 200, np.uint8)
    px[:2] = 20
    mask = mst_foreground_extract(RasterImage(px), SegmentationParams(100, 0))
    assert not mask.flags[2:].any()
    assert mask.flags[:2].all()


@pytest.mark.parametrize("seed", range(20))
def test_partition_matches_threshold_components(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 17, 2)
    # few grey levels so that many edges sit near the threshold
    px = (rng.integers(0, 4, (h, w, 3)) * 60).astype(np.uint8)
    threshold = float(rng.choice([50.0, 100.0, 103.92304845413264, 150.0]))
    labels = mst_forest_labels(RasterImage(px), threshold)
    assert same_partition(labels, threshold_components(px, threshold))


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 10), st.integers(1, 10), st.just(3))))
def test_partition_property(px):
    labels = mst_forest_labels(RasterImage(px), 100.0)
    assert same_partition(labels, threshold_components(px, 100.0))


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 10), st.integers(1, 10), st.just(3))))
def test_brightest_subtree_is_background(px):
    img = RasterImage(px)
    labels = mst_forest_labels(img, 100.0)
    means = subtree_luminance(img, labels)
    mask = mst_foreground_extract(img)
    brightest = np.flatnonzero(means == means.max())
    for lab in brightest:
        assert not mask.flags[labels == lab].any()
    assert mask.flags.shape == px.shape[:2]


def test_labels_are_canonical():
    px = np.zeros((3, 3, 3), np.uint8)
    px[1, :] = 255
    labels = mst_forest_labels(RasterImage(px), 10)
    assert labels.tolist() == [[0, 0, 0], [1, 1, 1], [2, 2, 2]]


def test_edge_weights_layout():
    px = np.zeros((2, 3, 3), np.uint8)
    px[0, 1] = (3, 4, 0)
    wts = grid_edge_weights(px)
    # two rows of two horizontal edges, then three vertical edges
    assert wts.tolist() == [25, 25, 0, 0, 0, 25, 0]


def test_determinism(rng):
    img = RasterImage(rng.integers(0, 256, (20, 20, 3)).astype(np.uint8))
    a = mst_foreground_extract(img).flags
    b = mst_foreground_extract(img).flags
    assert np.array_equal(a, b)


def test_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        RasterImage(np.zeros((0, 3, 3), np.uint8))
    with pytest.raises(InvalidInputError):
        RasterImage(np.zeros((3, 3), np.uint8))
    with pytest.raises(InvalidInputError):
        RasterImage(np.full((2, 2, 3), 300))
    with pytest.raises(InvalidInputError):
        SegmentationParams(edge_threshold=0)
    with pytest.raises(InvalidInputError):
        SegmentationParams(rgb_margin=-1)


def exhaustive_otsu(levels):
    hist = np.bincount(levels.ravel(), minlength=256).astype(float)
    best_t, best = 0, -1.0
    for t in range(256):
        w0, w1 = hist[:t].sum(), hist[t:].sum()
        if w0 == 0 or w1 == 0:
            var = 0.0
        else:
            m0 = (hist[:t] * np.arange(t)).sum() / w0
            m1 = (hist[t:] * np.arange(t, 256)).sum() / w1
            var = w0 * w1 * (m0 - m1) ** 2 / hist.sum() ** 2
        if var > best + 1e-9:
            best_t, best = t, var
    return best_t, best


def test_otsu_bimodal():
    px = np.full((4, 8, 3), 200, np.uint8)
    px[:, :4] = 50
    mask = otsu_foreground_extract(RasterImage(px))
    assert mask.flags[:, :4].all() and not mask.flags[:, 4:].any()


def test_otsu_constant_is_background():
    img = RasterImage(np.full((5, 5, 3), 77, np.uint8))
    assert not otsu_foreground_extract(img).flags.any()


@pytest.mark.parametrize("seed", range(10))
def test_otsu_matches_exhaustive_scan(seed):
    rng = np.random.default_rng(seed)
    img = RasterImage(rng.integers(0, 256, (12, 12, 3)).astype(np.uint8))
    t, _ = otsu_threshold(img)
    ref_t, ref_var = exhaustive_otsu(luminance_levels(img))
    assert t == ref_t
    mask = otsu_foreground_extract(img)
    assert np.array_equal(mask.flags, luminance_levels(img) < t)


def test_png_round_trip(tmp_path, rng):
    img = RasterImage(rng.integers(0, 256, (7, 9, 3)).astype(np.uint8))
    save_image(img, tmp_path / "a.png")
    assert np.array_equal(load_image(tmp_path / "a.png").pixels, img.pixels)
    mask = ForegroundMask(rng.random((7, 9)) < 0.5)
    save_mask(mask, tmp_path / "m.png")
    assert np.array_equal(load_mask(tmp_path / "m.png").flags, mask.flags)
