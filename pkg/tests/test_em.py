import numpy as np
import pytest

from conftest import blob_dataset, feature_patch
from slidegrade.classifier import TrainConfig, fit_softmax, log_likelihood, objective, train
from slidegrade.em import (
    EMConfig,
    config_from_json,
    config_to_json,
    e_step,
    evaluate,
    initialize,
    initialize_detailed,
    m_step,
    run_em,
    split_dataset,
    stratified_halves,
)
from slidegrade.errors import ConfigurationError, InvalidInputError
from slidegrade.selection import EffectiveSet, collaborative_filter
from slidegrade.tiling import Patch, PatchLabel

FAST = TrainConfig(learning_rate=0.5, epochs=60)


def fast_config(**kw):
    return EMConfig(train=FAST, **kw)


def unlabelled(data):
    return [p.with_label(None) for p, _ in data]


def test_stratified_halves_balance(rng):
    data = blob_dataset(rng, 7)
    first, second = stratified_halves(data, 3)
    assert len(first) + len(second) == len(data)
    for c in range(4):
        n1 = sum(int(l) == c for _, l in first)
        n2 = sum(int(l) == c for _, l in second)
        assert abs(n1 - n2) <= 1
    assert {p.id for p, _ in first}.isdisjoint({p.id for p, _ in second})


def test_initialize_merges_quantile_of_second_half(rng):
    data = blob_dataset(rng, 50)  # 200 examples, halves of 100
    res = initialize_detailed(data, fast_config(quantile=0.2))
    assert len(res.second_half) == 100
    assert len(res.hard_examples) == 20
    second_ids = {p.id for p, _ in res.second_half}
    assert {p.id for p, _ in res.hard_examples} <= second_ids


def test_initialize_learnable_data_fits_merged_set(rng):
    data = blob_dataset(rng, 20, spread=0.02)
    res = initialize_detailed(data, EMConfig())
    merged = res.first_half + res.hard_examples
    assert evaluate(res.model, merged).accuracy == 1.0


def test_initialize_is_deterministic(rng):
    data = blob_dataset(rng, 10)
    a, b = initialize(data, fast_config(seed=4)), initialize(data, fast_config(seed=4))
    assert np.array_equal(a.weights, b.weights)


def test_initialize_needs_two_examples(rng):
    with pytest.raises(InvalidInputError):
        initialize(blob_dataset(rng, 1)[:1], fast_config())


def test_e_step_matches_filter(rng):
    data = blob_dataset(rng, 10)
    pool = unlabelled(blob_dataset(np.random.default_rng(7), 10, slide_id="u"))
    model = train(data, FAST)
    eff = e_step(model, pool, data, fast_config())
    assert eff.signature() == collaborative_filter(pool, data, model, 0.9).signature()
    assert len(e_step(model, [], data, fast_config())) == 0


def test_m_step_with_empty_set_trains_on_annotated(rng):
    data = blob_dataset(rng, 10)
    a = m_step(data, EffectiveSet(), fast_config())
    b = train(data, FAST)
    assert np.array_equal(a.weights, b.weights)
    with pytest.raises(InvalidInputError):
        m_step([], EffectiveSet(), fast_config())


def test_m_step_improves_over_zero_init_and_q_resums(rng):
    data = blob_dataset(rng, 10)
    pool = unlabelled(blob_dataset(np.random.default_rng(8), 10, slide_id="u"))
    cfg = fast_config()
    eff = e_step(train(data, FAST), pool, data, cfg)
    model = m_step(data, eff, cfg)
    pairs = data + eff.pairs()
    X = np.stack([p.features for p, _ in pairs])
    y = np.array([int(l) for _, l in pairs])
    zero = objective(np.zeros((4, 64)), np.zeros(4), X, y, FAST.l2)
    assert objective(model.weights, model.bias, X, y, FAST.l2) >= zero
    q = log_likelihood(model, data, eff.pairs())
    probs = [
        np.exp(model.weights @ p.features + model.bias) for p, _ in pairs
    ]
    ref = sum(float(np.log(pr[int(l)] / pr.sum())) for pr, (_, l) in zip(probs, pairs))
    assert abs(q - ref) <= 1e-9


def test_run_em_history(rng):
    data = blob_dataset(rng, 15)
    pool = unlabelled(blob_dataset(np.random.default_rng(9), 15, slide_id="u"))
    held = blob_dataset(np.random.default_rng(10), 5, slide_id="h")
    model, hist = run_em(data, pool, held, fast_config(max_iterations=1))
    assert len(hist.records) == 1
    model, hist = run_em(data, pool, held, fast_config(max_iterations=2))
    assert 1 <= len(hist.records) <= 2
    assert [r.iteration for r in hist.records] == list(range(1, len(hist.records) + 1))
    for r in hist.records:
        assert np.isfinite(r.q_value)
        assert r.effective_size <= len(pool)
        assert r.metrics is not None
    assert hist.baseline is not None
    ids_d = {p.id for p, _ in data}
    for eff in hist.effective_sets:
        assert ids_d.isdisjoint({m.patch_id for m in eff})
    doc = hist.to_json()
    assert len(doc["iterations"]) == len(hist.records)


def test_run_em_is_deterministic(rng):
    data = blob_dataset(rng, 10)
    pool = unlabelled(blob_dataset(np.random.default_rng(11), 10, slide_id="u"))
    a, ha = run_em(data, pool, [], fast_config(seed=2))
    b, hb = run_em(data, pool, [], fast_config(seed=2))
    assert np.array_equal(a.weights, b.weights)
    assert ha.to_json() == hb.to_json()


def test_run_em_stops_when_effective_set_repeats(rng):
    data = blob_dataset(rng, 10, spread=0.01)
    pool = unlabelled(blob_dataset(np.random.default_rng(12), 10, spread=0.01, slide_id="u"))
    _, hist = run_em(data, pool, [], fast_config(max_iterations=5))
    assert hist.stopped_early
    assert len(hist.records) < 5
    sigs = [e.signature() for e in hist.effective_sets]
    assert all(a != b for a, b in zip(sigs, sigs[1:]))


def test_run_em_needs_annotated():
    with pytest.raises(InvalidInputError):
        run_em([], [], [], fast_config())


def test_config_validation_and_json():
    with pytest.raises(ConfigurationError):
        EMConfig(annotated_fraction=0)
    with pytest.raises(ConfigurationError):
        EMConfig(max_iterations=0)
    with pytest.raises(ConfigurationError):
        EMConfig(sigma=-1)
    cfg = EMConfig(sigma=0.8, train=TrainConfig(epochs=3))
    assert config_from_json(config_to_json(cfg)) == cfg


def make_slides(n_slides, per_slide):
    out = []
    for s in range(n_slides):
        for i in range(per_slide):
            out.append((Patch(f"s{s}", (i, 0), 1, features=np.ones(64)), PatchLabel(i % 4)))
    return out


def test_split_by_slide():
    data = make_slides(10, 6)
    sp = split_dataset(data, 0.3, 0.2, seed=1)
    assert sp.unit == "slide"
    slides = lambda pairs: {p.slide_id for p, _ in pairs}
    held, ann = slides(sp.held_out), slides(sp.annotated)
    unl = {p.slide_id for p in sp.unannotated}
    assert (len(held), len(ann), len(unl)) == (2, 2, 6)
    assert held.isdisjoint(ann) and held.isdisjoint(unl) and ann.isdisjoint(unl)
    assert all(p.label is None for p in sp.unannotated)
    assert sp.summary() == {"unit": "slide", "held_out": 12, "annotated": 12, "unannotated": 36}


def test_split_by_patch_with_few_slides():
    data = make_slides(2, 50)
    sp = split_dataset(data, 0.3, 0.2, seed=1)
    assert sp.unit == "patch"
    assert (len(sp.held_out), len(sp.annotated), len(sp.unannotated)) == (20, 24, 56)
    again = split_dataset(data, 0.3, 0.2, seed=1)
    assert [p.id for p, _ in again.annotated] == [p.id for p, _ in sp.annotated]
    with pytest.raises(ConfigurationError):
        split_dataset(data, 0.3, 1.0, seed=1)
    with pytest.raises(InvalidInputError):
        split_dataset([], 0.3, 0.2, seed=1)
