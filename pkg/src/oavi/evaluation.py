"""Evaluation vectors of terms and polynomials over a point set."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .monomials import Term, factor, render


class CacheOrderError(RuntimeError):
    """A term was requested before the term it is built from was cached."""


def as_points(X) -> np.ndarray:
    """Validate a point set and return it as a float64 ``(m, n)`` array."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"points must be a 2-d array, got shape {X.shape}")
    m, n = X.shape
    if m < 1 or n < 1:
        raise ValueError(f"need at least one point and one feature, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("points contain non-finite entries")
    return X


class EvaluationCache:
    """Map from terms to their evaluation vectors over fixed points.

    A term of degree >= 2 is produced as the elementwise product of its parent
    (see :func:`oavi.monomials.factor`) and a data column, so the parent has to
    be evaluated first. Nothing is ever evaluated recursively.
    """

    def __init__(self, points):
        self.points = as_points(points)
        self.m, self.n = self.points.shape
        self._vectors: dict[Term, np.ndarray] = {}
        self.factorization: dict[Term, tuple[Term, int]] = {}

    def __contains__(self, t: Term) -> bool:
        return t in self._vectors

    def __len__(self):
        return len(self._vectors)

    def evaluate(self, t: Term) -> np.ndarray:
        vec = self._vectors.get(t)
        if vec is not None:
            return vec
        if t.n_vars != self.n:
            raise ValueError(f"term over {t.n_vars} variables, points have {self.n}")
        if t.degree == 0:
            vec = np.ones(self.m)
        elif t.degree == 1:
            vec = self.points[:, t.exponents.index(1)].copy()
        else:
            parent, i = factor(t)
            pvec = self._vectors.get(parent)
            if pvec is None:
                raise CacheOrderError(
                    f"parent {render(parent)} of {render(t)} is not cached"
                )
            vec = pvec * self.points[:, i]
            self.factorization[t] = (parent, i)
        vec.flags.writeable = False
        self._vectors[t] = vec
        return vec

    def matrix(self, terms: Sequence[Term]) -> np.ndarray:
        if not terms:
            return np.empty((self.m, 0))
        return np.column_stack([self.evaluate(t) for t in terms])


def evaluate_term(t: Term, cache: EvaluationCache) -> np.ndarray:
    return cache.evaluate(t)


@dataclass(frozen=True, eq=False)
class Polynomial:
    """``sum_i c_i t_i + t`` with ``t`` the DegLex-largest term (coefficient 1).

    ``terms`` lists the support in ascending order, the last entry is the
    leading term; ``coefficients`` holds one entry per non-leading term.
    """

    terms: tuple[Term, ...]
    coefficients: np.ndarray = field(repr=False)

    def __post_init__(self):
        terms = tuple(self.terms)
        coeffs = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        if not terms:
            raise ValueError("a polynomial needs a leading term")
        if coeffs.shape[0] != len(terms) - 1:
            raise ValueError(
                f"{len(terms)} terms need {len(terms) - 1} coefficients, got {coeffs.shape[0]}"
            )
        keys = [t.sort_key() for t in terms]
        if any(k1 >= k2 for k1, k2 in zip(keys, keys[1:])):
            raise ValueError("support terms must be strictly ascending in DegLex")
        coeffs = coeffs.copy()
        coeffs.flags.writeable = False
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def leading_term(self) -> Term:
        return self.terms[-1]

    @property
    def leading_coefficient(self) -> float:
        return 1.0

    @property
    def degree(self) -> int:
        return self.leading_term.degree

    def full_coefficients(self) -> np.ndarray:
        return np.append(self.coefficients, 1.0)

    def to_string(self, names=None, precision: int = 6) -> str:
        parts = [
            f"{c:+.{precision}g}*{render(t, names)}"
            for c, t in zip(self.coefficients, self.terms)
            if c != 0.0
        ]
        parts.append("+" + render(self.leading_term, names))
        return " ".join(parts)


def evaluate_polynomial(f: Polynomial, cache: EvaluationCache) -> np.ndarray:
    lead = cache.evaluate(f.leading_term)
    if len(f.terms) == 1:
        return lead.copy()
    return cache.matrix(f.terms[:-1]) @ f.coefficients + lead


def mse(f: Polynomial, points) -> float:
    """Mean squared evaluation ``||f(X)||^2 / m``."""
    cache = points if isinstance(points, EvaluationCache) else EvaluationCache(points)
    fill_cache(cache, f.terms)
    v = evaluate_polynomial(f, cache)
    return float(v @ v) / cache.m


def fill_cache(cache: EvaluationCache, terms) -> None:
    """Evaluate ``terms`` together with every ancestor they need, lowest degree first."""
    needed = set()
    stack = [t for t in terms if t not in cache]
    while stack:
        t = stack.pop()
        if t in needed or t in cache:
            continue
        needed.add(t)
        if t.degree >= 2:
            stack.append(factor(t)[0])
    for t in sorted(needed, key=Term.sort_key):
        cache.evaluate(t)


def evaluate_direct(t: Term, points) -> np.ndarray:
    """Pointwise ``prod_i x_i^{e_i}`` without any caching."""
    X = as_points(points)
    return np.prod(X ** np.asarray(t.exponents, dtype=np.float64), axis=1)
