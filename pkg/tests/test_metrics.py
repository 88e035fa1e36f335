import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slidegrade.errors import InvalidInputError
from slidegrade.heatmap import ClassMap
from slidegrade.metrics import confusion_matrix, patch_metrics, pixel_score, write_metrics

labels = st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=40)


def test_perfect_agreement():
    m = patch_metrics([0, 1, 2, 3, 1], [0, 1, 2, 3, 1])
    assert (m.precision, m.accuracy, m.f1) == (1.0, 1.0, 1.0)


def test_binary_style_case():
    m = patch_metrics([0, 1, 1, 1], [0, 0, 1, 1])
    assert m.accuracy == 0.75
    assert m.precision == pytest.approx(5 / 6)
    # recall N 1/2, B 1 -> F1 N 2/3, B 4/5
    assert m.f1 == pytest.approx((2 / 3 + 4 / 5) / 2)
    assert m.confusion[0] == (1, 1, 0, 0)


def test_constant_predictor():
    m = patch_metrics([2] * 8, [0, 1, 2, 3] * 2)
    assert m.accuracy == 0.25


def test_metric_errors():
    with pytest.raises(InvalidInputError):
        patch_metrics([0], [0, 1])
    with pytest.raises(InvalidInputError):
        patch_metrics([], [])


@settings(max_examples=100)
@given(labels, st.randoms(use_true_random=False))
def test_metric_properties(pairs, rnd):
    pred = [p for p, _ in pairs]
    truth = [t for _, t in pairs]
    m = patch_metrics(pred, truth)
    for v in (m.precision, m.accuracy, m.f1):
        assert 0 <= v <= 1
    idx = list(range(len(pairs)))
    rnd.shuffle(idx)
    m2 = patch_metrics([pred[i] for i in idx], [truth[i] for i in idx])
    assert (m2.precision, m2.accuracy, m2.f1) == pytest.approx((m.precision, m.accuracy, m.f1))
    assert np.asarray(m.confusion).sum() == len(pairs)
    cm = confusion_matrix(pred, truth)
    assert m.accuracy == np.trace(cm) / len(pairs)


def test_pixel_score_examples():
    a = np.zeros((4, 4), np.uint8)
    assert pixel_score(a, a) == 1.0
    assert pixel_score(np.full((4, 4), 3), a) == 0.0
    half = a.copy()
    half[:2] = 1
    assert pixel_score(ClassMap(half), ClassMap(a)) == pytest.approx(1 - 0.5 / 3)
    with pytest.raises(InvalidInputError):
        pixel_score(np.zeros((2, 2)), np.zeros((2, 3)))


@settings(max_examples=60)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=30), st.lists(st.integers(0, 3), min_size=1, max_size=30))
def test_pixel_score_properties(a, b):
    n = min(len(a), len(b))
    pa, pb = np.array(a[:n]), np.array(b[:n])
    s = pixel_score(pa, pb)
    assert 0 <= s <= 1
    assert s == pixel_score(pb, pa)
    assert (s == 1) == np.array_equal(pa, pb)
    worse = pa.copy()
    i = int(np.argmin(np.abs(pa - pb)))
    worse[i] = 3 if pb[i] < 2 else 0
    assert pixel_score(worse, pb) <= s


def test_write_metrics(tmp_path):
    m = patch_metrics([0, 1], [0, 0])
    out = write_metrics(tmp_path / "m.json", m, 0.9, note="x")
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc == out
    assert set(doc) == {"precision", "accuracy", "f1", "confusion_matrix", "score", "note"}
