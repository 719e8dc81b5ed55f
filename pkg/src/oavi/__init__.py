"""Generators of approximately vanishing ideals via Frank-Wolfe-type oracles,
and their use as a feature map for linear classification."""

from .evaluation import EvaluationCache, Polynomial, evaluate_polynomial, mse
from .fitter import GeneratorSet, OaviConfig, check_maximality, fit
from .monomials import Term, deglex_compare, divides, multiply

__all__ = [
    "EvaluationCache",
    "GeneratorSet",
    "OaviConfig",
    "Polynomial",
    "Term",
    "check_maximality",
    "deglex_compare",
    "divides",
    "evaluate_polynomial",
    "fit",
    "mse",
    "multiply",
]

__version__ = "0.1.0"
