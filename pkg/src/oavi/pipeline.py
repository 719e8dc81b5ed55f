"""Per-class generator features followed by a linear one-vs-rest classifier."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.svm import LinearSVC

from .evaluation import EvaluationCache, as_points, fill_cache
from .fitter import GeneratorSet, OaviConfig, fit

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-12  # |c| below this counts as a zero coefficient
CLAMP = 1.0  # scaled test values are clipped to [-CLAMP, CLAMP]


@dataclass
class MinMaxScaler:
    """Per-feature affine map sending the training range onto [0, 1].

    A constant training column maps every value to 0.
    """

    low: np.ndarray
    span: np.ndarray
    clamp: bool = True

    @classmethod
    def fit(cls, X, clamp: bool = True) -> "MinMaxScaler":
        X = as_points(X)
        low = X.min(axis=0)
        return cls(low, X.max(axis=0) - low, clamp)

    @property
    def n_features(self) -> int:
        return self.low.shape[0]

    def transform(self, X) -> np.ndarray:
        X = as_points(X)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        safe = np.where(self.span > 0, self.span, 1.0)
        Z = np.where(self.span > 0, (X - self.low) / safe, 0.0)
        if self.clamp:
            Z = np.clip(Z, -CLAMP, CLAMP)
        return Z


def minmax_scale(train, other=None, clamp: bool = True):
    """Fit the scaler on ``train`` and apply it to ``train`` and ``other``.

    Returns ``(train_scaled, other_scaled, scaler)``; ``other_scaled`` is None
    when ``other`` is.
    """
    scaler = MinMaxScaler.fit(train, clamp)
    other_scaled = None if other is None else scaler.transform(other)
    return scaler.transform(train), other_scaled, scaler


def _coefficient_block(gs: GeneratorSet) -> np.ndarray:
    # generator j uses a prefix of O; pad with zeros to |O| rows
    C = np.zeros((len(gs.terms), len(gs.generators)))
    for j, g in enumerate(gs.generators):
        C[: g.coefficients.shape[0], j] = g.coefficients
    return C


def generator_features(gs: GeneratorSet, Z) -> np.ndarray:
    """``|g(z)|`` for every generator of ``gs`` and every row of ``Z``."""
    Z = as_points(Z)
    if Z.shape[1] != gs.n_vars:
        raise ValueError(f"generators over {gs.n_vars} variables, points have {Z.shape[1]}")
    if not gs.generators:
        return np.zeros((Z.shape[0], 0))
    cache = EvaluationCache(Z)
    leads = gs.leading_terms
    fill_cache(cache, list(gs.terms) + leads)
    values = cache.matrix(gs.terms) @ _coefficient_block(gs) + cache.matrix(leads)
    return np.abs(values)


@dataclass
class ClassTransformer:
    """One generator set per class plus the scaling fitted on the training data."""

    scaler: MinMaxScaler
    generator_sets: list[GeneratorSet]
    classes: np.ndarray
    config: OaviConfig

    @property
    def n_features_out(self) -> int:
        return sum(len(gs.generators) for gs in self.generator_sets)

    @property
    def empty_classes(self) -> list:
        return [c for c, gs in zip(self.classes, self.generator_sets) if not gs.generators]

    def features(self, Z) -> np.ndarray:
        """Feature map of already-scaled points."""
        blocks = [generator_features(gs, Z) for gs in self.generator_sets]
        return np.hstack(blocks)

    def transform(self, X) -> np.ndarray:
        """Scale raw points, then apply the feature map."""
        return self.features(self.scaler.transform(X))


def fit_transformer(X, y, cfg: OaviConfig, clamp: bool = True) -> ClassTransformer:
    """Fit the scaler on ``X`` and one generator set per class of ``y``."""
    X = as_points(X)
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise ValueError("labels must be a vector with one entry per point")
    scaler = MinMaxScaler.fit(X, clamp)
    Z = scaler.transform(X)
    classes = np.unique(y)
    sets = []
    for c in classes:
        gs = fit(Z[y == c], cfg)
        if not gs.generators:
            logger.warning("class %s produced no generators; its feature block is empty", c)
        sets.append(gs)
    return ClassTransformer(scaler, sets, classes, cfg)


def transform(t: ClassTransformer, points) -> np.ndarray:
    return t.transform(points)


@dataclass
class LinearOvrClassifier:
    """One l1-penalized squared-hinge linear model per class.

    Each binary problem is solved by liblinear's primal coordinate descent.
    Prediction takes the argmax of the class scores, ties going to the lowest
    class index.
    """

    C: float = 1.0
    tol: float = 1e-4
    max_iter: int = 1000
    classes: np.ndarray | None = None
    coef: np.ndarray | None = None  # (n_classes, n_features)
    intercept: np.ndarray | None = None
    converged: list[bool] = field(default_factory=list)

    def fit(self, F, y) -> "LinearOvrClassifier":
        F = np.asarray(F, dtype=np.float64)
        y = np.asarray(y)
        if F.ndim != 2 or F.shape[0] != y.shape[0]:
            raise ValueError("features and labels do not match")
        if not np.all(np.isfinite(F)):
            raise FloatingPointError("non-finite features")
        if not self.C > 0:
            raise ValueError("C must be positive")
        self.classes = np.unique(y)
        k, p = self.classes.shape[0], F.shape[1]
        self.coef = np.zeros((k, p))
        self.intercept = np.zeros(k)
        self.converged = [True] * k
        if k < 2 or p == 0:
            return self
        for i, c in enumerate(self.classes):
            svm = LinearSVC(
                penalty="l1", loss="squared_hinge", dual=False, C=self.C,
                tol=self.tol, max_iter=self.max_iter, random_state=0,
            )
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", ConvergenceWarning)
                svm.fit(F, np.where(y == c, 1, -1))
            if any(issubclass(w.category, ConvergenceWarning) for w in caught):
                self.converged[i] = False
                logger.info("classifier for class %s hit the iteration cap", c)
            self.coef[i] = svm.coef_[0]
            self.intercept[i] = svm.intercept_[0]
        if not (np.all(np.isfinite(self.coef)) and np.all(np.isfinite(self.intercept))):
            raise FloatingPointError("classifier weights are not finite")
        return self

    def decision_function(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=np.float64)
        return F @ self.coef.T + self.intercept

    def predict(self, F) -> np.ndarray:
        if self.classes.shape[0] == 1:
            return np.full(np.asarray(F).shape[0], self.classes[0])
        return self.classes[np.argmax(self.decision_function(F), axis=1)]


def train_classifier(F, y, C: float, tol: float = 1e-4, max_iter: int = 1000) -> LinearOvrClassifier:
    return LinearOvrClassifier(C=C, tol=tol, max_iter=max_iter).fit(F, y)


@dataclass
class OaviPipeline:
    """Scaling, per-class generator features and the linear classifier, fitted together."""

    config: OaviConfig
    C: float = 1.0
    clamp: bool = True
    transformer: ClassTransformer | None = None
    classifier: LinearOvrClassifier | None = None

    def fit(self, X, y) -> "OaviPipeline":
        self.transformer = fit_transformer(X, y, self.config, self.clamp)
        F = self.transformer.transform(X)
        self.classifier = train_classifier(F, y, self.C)
        return self

    def transform(self, X) -> np.ndarray:
        return self.transformer.transform(X)

    def predict(self, X) -> np.ndarray:
        return self.classifier.predict(self.transform(X))


def error_rate(y_true, y_pred) -> float:
    """Misclassification in percent."""
    y_true = np.asarray(y_true)
    return 100.0 * float(np.mean(y_true != np.asarray(y_pred))) if y_true.size else 0.0


def coefficient_counts(coefficients) -> tuple[int, int]:
    """``(g_e, g_z)`` for one coefficient vector without its leading 1."""
    c = np.asarray(coefficients, dtype=np.float64).reshape(-1)
    return int(c.shape[0]), int(np.count_nonzero(np.abs(c) < ZERO_TOL))


def sparsity(coefficient_vectors) -> float:
    """Zero entries over all entries, pooled across generators; 0 for no entries."""
    counts = [coefficient_counts(c) for c in coefficient_vectors]
    total = sum(e for e, _ in counts)
    return sum(z for _, z in counts) / total if total else 0.0


@dataclass
class MetricsReport:
    n_generators: int
    n_terms: int
    max_degree: int
    g_e: int
    g_z: int
    g_n: int
    spar: float
    train_error: float
    test_error: float
    search_time: float = 0.0
    train_time: float = 0.0
    test_time: float = 0.0

    TIMING_FIELDS = ("search_time", "train_time", "test_time")

    def to_dict(self, timing: bool = True) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if not timing:
            for k in self.TIMING_FIELDS:
                d.pop(k)
        return d


def compute_metrics(t: ClassTransformer, classifier: LinearOvrClassifier, splits, timers=None) -> MetricsReport:
    """Generator statistics and train/test error.

    ``splits`` is ``(X_train, y_train, X_test, y_test)`` in raw (unscaled)
    coordinates; ``timers`` may carry ``search_time``, ``train_time`` and
    ``test_time`` in seconds.
    """
    X_tr, y_tr, X_te, y_te = splits
    gens = [g for gs in t.generator_sets for g in gs.generators]
    counts = [coefficient_counts(g.coefficients) for g in gens]
    g_e = sum(e for e, _ in counts)
    g_z = sum(z for _, z in counts)
    timers = dict(timers or {})
    if "test_time" not in timers:
        start = time.perf_counter()
        test_pred = classifier.predict(t.transform(X_te))
        timers["test_time"] = time.perf_counter() - start
    else:
        test_pred = classifier.predict(t.transform(X_te))
    return MetricsReport(
        n_generators=len(gens),
        n_terms=sum(len(gs.terms) for gs in t.generator_sets),
        max_degree=max((g.degree for g in gens), default=0),
        g_e=g_e,
        g_z=g_z,
        g_n=g_e - g_z,
        spar=g_z / g_e if g_e else 0.0,
        train_error=error_rate(y_tr, classifier.predict(t.transform(X_tr))),
        test_error=error_rate(y_te, test_pred),
        search_time=float(timers.get("search_time", 0.0)),
        train_time=float(timers.get("train_time", 0.0)),
        test_time=float(timers["test_time"]),
    )
