import numpy as np
import pytest

from oavi.evaluation import Polynomial
from oavi.fitter import GeneratorSet, OaviConfig
from oavi.monomials import Term
from oavi.pipeline import (
    ClassTransformer,
    LinearOvrClassifier,
    MinMaxScaler,
    OaviPipeline,
    coefficient_counts,
    compute_metrics,
    error_rate,
    fit_transformer,
    generator_features,
    minmax_scale,
    sparsity,
    train_classifier,
    transform,
)


def T(*e):
    return Term(e)


def circle(radius, k, center=0.5, phase=0.0):
    a = 2 * np.pi * np.arange(k) / k + phase
    return np.column_stack([center + radius * np.cos(a), center + radius * np.sin(a)])


def test_minmax_examples():
    Z, _, s = minmax_scale(np.array([[2.0, 5.0], [4.0, 5.0]]))
    assert np.array_equal(Z, [[0.0, 0.0], [1.0, 0.0]])
    _, other, _ = minmax_scale(np.array([[2.0], [4.0]]), np.array([[5.0], [1.0], [3.0]]))
    assert np.array_equal(other, [[1.0], [-0.5], [0.5]])
    _, far, _ = minmax_scale(np.array([[2.0], [4.0]]), np.array([[9.0], [-7.0]]))
    assert np.array_equal(far, [[1.0], [-1.0]])


def test_minmax_without_clamp():
    s = MinMaxScaler.fit(np.array([[2.0], [4.0]]), clamp=False)
    assert s.transform(np.array([[5.0]]))[0, 0] == 1.5
    with pytest.raises(ValueError):
        s.transform(np.ones((1, 2)))


def hand_set(polys, terms, n):
    return GeneratorSet(polys, terms, [0.0] * len(polys), [0.0] * len(polys), n)


def test_feature_examples():
    circ = Polynomial((T(0, 0), T(2, 0), T(0, 2)), [-1.0, 1.0])
    gs = hand_set([circ], [T(0, 0), T(2, 0)], 2)
    assert generator_features(gs, [[0.0, 1.0]])[0, 0] == 0.0
    gx = Polynomial((T(0, 0), T(1, 0)), [0.0])
    gs = hand_set([gx], [T(0, 0)], 2)
    assert generator_features(gs, [[-0.5, 0.2]])[0, 0] == 0.5
    with pytest.raises(ValueError):
        generator_features(gs, [[0.1, 0.2, 0.3]])


def test_two_circles():
    inner, outer = circle(0.3, 24), circle(0.45, 24, phase=0.1)
    X = np.vstack([inner, outer])
    y = np.repeat([0, 1], 24)
    cfg = OaviConfig(psi=1e-4)
    t = fit_transformer(X, y, cfg, clamp=False)
    Z = t.scaler.transform(X)
    for c, own, other in ((0, Z[:24], Z[24:]), (1, Z[24:], Z[:24])):
        gs = t.generator_sets[c]
        F_own, F_other = generator_features(gs, own), generator_features(gs, other)
        good = [j for j, g in enumerate(gs.generators) if g.degree == 2
                and (F_own[:, j] ** 2).mean() <= cfg.psi and F_other[:, j].mean() > 0.01]
        assert good


def test_single_class_has_one_block():
    t = fit_transformer(circle(0.3, 10), np.zeros(10, dtype=int), OaviConfig(psi=1e-3))
    assert len(t.generator_sets) == 1
    assert t.transform(circle(0.3, 10)).shape[1] == t.n_features_out


def test_two_point_toy():
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    t = fit_transformer(X, np.array([0, 1]), OaviConfig(psi=0.0, eps=0.0))
    gs0 = t.generator_sets[0]
    assert gs0.leading_terms == [T(1, 0), T(0, 1)]
    np.testing.assert_array_equal(generator_features(gs0, [[1.0, 1.0]]), [[1.0, 1.0]])


def test_transform_on_training_class_is_small():
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, size=(60, 3))
    y = rng.integers(0, 3, 60)
    for lam in (0.0, 0.5):
        cfg = OaviConfig(psi=0.01, lam=lam)
        t = fit_transformer(X, y, cfg)
        F = transform(t, X)
        assert F.shape == (60, t.n_features_out)
        assert np.all(F >= 0)
        col = 0
        for c, gs in zip(t.classes, t.generator_sets):
            block = F[y == c, col:col + len(gs.generators)]
            assert np.all((block ** 2).mean(axis=0) <= cfg.psi * (1 + 1e-9))
            col += len(gs.generators)


def test_classifier_separable_toy():
    F = np.array([[0.0], [0.0], [1.0], [1.0]])
    y = np.array([0, 0, 1, 1])
    clf = train_classifier(F, y, C=10.0)
    assert error_rate(y, clf.predict(F)) == 0.0


def test_classifier_tiny_C_degenerates():
    rng = np.random.default_rng(1)
    F = rng.uniform(size=(20, 3))
    y = rng.integers(0, 3, 20)
    clf = train_classifier(F, y, C=1e-8)
    assert np.all(clf.coef == 0) and np.all(clf.intercept == 0)
    assert np.all(clf.predict(F) == clf.classes[0])


def test_classifier_one_hot():
    F = np.repeat(np.eye(3), 5, axis=0)
    y = np.repeat([0, 1, 2], 5)
    clf = train_classifier(F, y, C=1.0)
    assert np.array_equal(clf.predict(F), y)
    assert np.all(np.isfinite(clf.coef))


def test_classifier_ties_go_to_lowest_class():
    clf = LinearOvrClassifier(classes=np.array([4, 7]), coef=np.zeros((2, 1)), intercept=np.zeros(2))
    assert np.array_equal(clf.predict(np.ones((3, 1))), [4, 4, 4])


def test_classifier_rejects_bad_features():
    with pytest.raises(FloatingPointError):
        train_classifier(np.array([[np.nan], [1.0]]), np.array([0, 1]), 1.0)


def test_sparsity_examples():
    assert coefficient_counts([0.0, 0.5, 0.0]) == (3, 2)
    assert sparsity([[0.0, 0.5, 0.0]]) == pytest.approx(2 / 3)
    assert sparsity([[0.1, -2.0], [3.0]]) == 0.0
    assert sparsity([[0.0, 1.0], [1.0, 2.0, 3.0]]) == pytest.approx(1 / 5)
    assert coefficient_counts([1e-13, -1e-12]) == (2, 1)


def test_compute_metrics_identities():
    rng = np.random.default_rng(2)
    X = rng.uniform(0, 1, size=(45, 2))
    y = rng.integers(0, 3, 45)
    pipe = OaviPipeline(OaviConfig(psi=0.01), C=1.0).fit(X[:30], y[:30])
    rep = compute_metrics(pipe.transformer, pipe.classifier, (X[:30], y[:30], X[30:], y[30:]),
                          {"search_time": 1.5, "train_time": 0.25})
    gens = [g for gs in pipe.transformer.generator_sets for g in gs.generators]
    assert rep.n_generators == len(gens)
    assert rep.g_e == sum(g.coefficients.size for g in gens)
    assert rep.g_n + rep.g_z == rep.g_e
    assert 0.0 <= rep.spar <= 1.0
    assert rep.spar == pytest.approx(sparsity([g.coefficients for g in gens]))
    assert rep.test_error == error_rate(y[30:], pipe.predict(X[30:]))
    assert rep.search_time == 1.5 and rep.train_time == 0.25
    d = rep.to_dict(timing=False)
    assert "test_time" not in d and d["g_e"] == rep.g_e


def test_pipeline_reproducible():
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 1, size=(40, 3))
    y = rng.integers(0, 2, 40)
    runs = []
    for _ in range(2):
        pipe = OaviPipeline(OaviConfig(psi=0.005, lam=0.1), C=1.0).fit(X, y)
        runs.append(compute_metrics(pipe.transformer, pipe.classifier, (X, y, X, y)).to_dict(timing=False))
    assert runs[0] == runs[1]


def test_empty_generator_block():
    gs = hand_set([], [T(0)], 1)
    t = ClassTransformer(MinMaxScaler.fit([[0.0], [1.0]]), [gs, gs], np.array([0, 1]), OaviConfig(psi=0.1))
    assert t.transform([[0.3]]).shape == (1, 0)
    assert t.empty_classes == [0, 1]
