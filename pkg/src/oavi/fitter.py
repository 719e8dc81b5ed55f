"""Oracle-based construction of generators of the approximately vanishing ideal."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .evaluation import EvaluationCache, Polynomial, as_points
from .monomials import Term, divides, sort_terms
from .solvers import SOLVERS, OracleProblem, OracleSolution

logger = logging.getLogger(__name__)

ORACLES = ("pfw", "cg", "agd", "exact")


@dataclass(frozen=True)
class OaviConfig:
    """Hyperparameters of one fit.

    ``eps`` defaults to ``psi / 2``. ``oracle`` selects the solver and its
    feasible region: ``pfw`` (l1-ball), ``cg`` (l2-ball), ``agd``
    (unconstrained) or ``exact`` (closed-form least squares, for testing).
    """

    psi: float
    eps: float | None = None
    lam: float = 0.0
    tau: float = 50.0
    max_degree: int = 10
    oracle: str = "pfw"
    max_iter: int = 10_000

    def __post_init__(self):
        if self.eps is None:
            object.__setattr__(self, "eps", self.psi / 2.0)
        if not self.psi >= self.eps >= 0:
            raise ValueError(f"need psi >= eps >= 0, got psi={self.psi}, eps={self.eps}")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.tau < 2:
            raise ValueError("tau must be >= 2")
        if self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")
        if self.oracle not in ORACLES:
            raise ValueError(f"unknown oracle {self.oracle!r}; choose from {ORACLES}")

    @property
    def region(self) -> str:
        return SOLVERS[self.oracle][0]


@dataclass
class GeneratorSet:
    generators: list[Polynomial]
    terms: list[Term]  # O, ascending, starts with the constant term
    generator_mse: list[float]
    generator_objective: list[float]
    n_vars: int
    oracle_calls: int = 0
    degree_reached: int = 0
    capped: bool = False
    unconverged_calls: int = 0
    border_sizes: list[int] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def leading_terms(self) -> list[Term]:
        return [g.leading_term for g in self.generators]

    def stats(self) -> dict:
        return {
            "n_generators": len(self.generators),
            "n_terms": len(self.terms),
            "max_degree": max((g.degree for g in self.generators), default=0),
            "degree_reached": self.degree_reached,
            "oracle_calls": self.oracle_calls,
            "capped": self.capped,
            "unconverged_calls": self.unconverged_calls,
            "wall_time": self.wall_time,
        }


def build_border(O: list[Term], G: list[Polynomial], d: int, n: int) -> list[Term]:
    """Degree-``d`` border of ``O``, ascending in DegLex.

    Candidates are products of degree-1 and degree-(d-1) terms of ``O``; a
    candidate survives unless it is divisible by a leading term of ``G``.
    """
    if d < 1:
        raise ValueError("border degree must be >= 1")
    if d == 1:
        return [Term.variable(i, n) for i in range(n)]
    O1 = [t for t in O if t.degree == 1]
    Oprev = [t for t in O if t.degree == d - 1]
    candidates = {s * t for s in O1 for t in Oprev}
    leads = [g.leading_term for g in G if g.degree <= d - 1]
    border = [u for u in candidates if not any(divides(lt, u) for lt in leads)]
    return sort_terms(border)


def make_problem(A, b, cfg: OaviConfig, gram=None) -> OracleProblem:
    region = cfg.region
    kw = dict(lam=cfg.lam, eps=cfg.eps, psi=cfg.psi, max_iter=cfg.max_iter, gram=gram)
    if region == "unconstrained":
        return OracleProblem(A, b, region=region, **kw)
    return OracleProblem.with_tau(A, b, cfg.tau, region, **kw)


def oracle_call(
    cache: EvaluationCache, O: list[Term], t: Term, cfg: OaviConfig, A=None, gram=None
) -> tuple[Polynomial, OracleSolution]:
    """Candidate generator with leading term ``t`` and remaining terms in ``O``.

    ``A`` and ``gram`` may pass the evaluation matrix of ``O`` and ``A'A/m``.
    """
    if O and not O[-1] < t:
        raise ValueError("the leading term must exceed every term of O")
    if A is None:
        A = cache.matrix(O)
    b = cache.evaluate(t)
    sol = SOLVERS[cfg.oracle][1](make_problem(A, b, cfg, gram))
    return Polynomial(tuple(O) + (t,), sol.coefficients), sol


def vanishing_value(g: Polynomial, A: np.ndarray, b: np.ndarray, lam: float) -> float:
    """``mse(g) + lam/2 ||c||^2`` computed from the residual."""
    r = A @ g.coefficients + b
    c = g.coefficients
    return float(r @ r) / b.shape[0] + 0.5 * lam * float(c @ c)


def fit(X, cfg: OaviConfig) -> GeneratorSet:
    """Run the degree-by-degree construction of generators ``G`` and terms ``O``."""
    X = as_points(X)
    m, n = X.shape
    start = time.perf_counter()
    cache = EvaluationCache(X)
    one = Term.one(n)
    O = [one]
    # evaluation matrix of O and its Gram matrix, capacity doubled on demand
    cols = np.empty((m, 32))
    gram = np.empty((32, 32))
    cols[:, 0] = cache.evaluate(one)
    gram[0, 0] = 1.0
    G, G_mse, G_obj = [], [], []
    result = GeneratorSet(G, O, G_mse, G_obj, n)

    d = 1
    while True:
        border = build_border(O, G, d, n)
        if not border:
            break
        if d > cfg.max_degree:
            result.capped = True
            logger.info("degree cap %d reached with %d border terms left", cfg.max_degree, len(border))
            break
        result.border_sizes.append(len(border))
        for u in border:
            k = len(O)
            g, sol = oracle_call(cache, O, u, cfg, A=cols[:, :k], gram=gram[:k, :k])
            result.oracle_calls += 1
            if not sol.converged:
                result.unconverged_calls += 1
            b = cache.evaluate(u)
            value = vanishing_value(g, cols[:, :k], b, cfg.lam)
            if value <= cfg.psi:
                G.append(g)
                G_obj.append(value)
                r = cols[:, :k] @ g.coefficients + b
                G_mse.append(float(r @ r) / m)
            else:
                if k == cols.shape[1]:
                    cols = np.hstack([cols, np.empty((m, k))])
                    grown = np.empty((2 * k, 2 * k))
                    grown[:k, :k] = gram
                    gram = grown
                row = cols[:, :k].T @ b / m
                gram[k, :k] = row
                gram[:k, k] = row
                gram[k, k] = float(b @ b) / m
                cols[:, k] = b
                O.append(u)
        result.degree_reached = d
        d += 1

    if result.unconverged_calls:
        logger.warning("%d oracle calls hit the iteration cap", result.unconverged_calls)
    result.wall_time = time.perf_counter() - start
    return result


def _min_mse(A: np.ndarray, b: np.ndarray) -> float:
    if A.shape[1] == 0:
        return float(b @ b) / b.shape[0]
    v = np.linalg.lstsq(A, -b, rcond=None)[0]
    r = A @ v + b
    return float(r @ r) / b.shape[0]


def check_maximality(result: GeneratorSet, X, cfg: OaviConfig) -> bool:
    """Diagnostic: no term of ``O`` is the leading term of a (psi - eps)-vanishing
    polynomial whose other terms are the smaller terms of ``O``.

    Each check solves the unconstrained least-squares problem exactly, so it is
    meaningful for ``lam = 0``.
    """
    cache = EvaluationCache(X)
    A = cache.matrix(result.terms)
    for j in range(1, len(result.terms)):
        if _min_mse(A[:, :j], A[:, j]) <= cfg.psi - cfg.eps:
            return False
    return True
