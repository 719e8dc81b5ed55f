"""Monomials over n variables and the degree-lexicographic term order.

Terms are exponent tuples. Inside a fixed total degree, ties are broken
lexicographically with the *last* variable most significant, which gives
``x1 < x2 < x1^2 < x1*x2 < x2^2`` for two variables. Variable order follows
the column order of the data, so permuting columns can change the output of
the fitter.
"""

from __future__ import annotations

from functools import total_ordering
from typing import Iterable, Sequence

ORDER_CONVENTION = (
    "deglex: total degree first; ties compared lexicographically on the "
    "exponent tuple with the last variable most significant"
)


class DimensionError(ValueError):
    """Raised when terms over different numbers of variables are combined."""


@total_ordering
class Term:
    """Immutable monomial ``x1^e1 * ... * xn^en``.

    Comparison operators implement DegLex, hashing uses the exponent tuple.
    """

    __slots__ = ("exponents", "degree", "_key")

    def __init__(self, exponents: Iterable[int]):
        exps = tuple(int(e) for e in exponents)
        if not exps:
            raise DimensionError("a term needs at least one variable")
        if any(e < 0 for e in exps):
            raise ValueError(f"negative exponent in {exps}")
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "degree", sum(exps))
        object.__setattr__(self, "_key", (self.degree, exps[::-1]))

    def __setattr__(self, name, value):
        raise AttributeError("Term is immutable")

    @classmethod
    def one(cls, n: int) -> "Term":
        return cls((0,) * n)

    @classmethod
    def variable(cls, i: int, n: int) -> "Term":
        """The degree-1 term x_{i+1} (``i`` is 0-based)."""
        if not 0 <= i < n:
            raise DimensionError(f"variable index {i} out of range for n={n}")
        exps = [0] * n
        exps[i] = 1
        return cls(exps)

    @property
    def n_vars(self) -> int:
        return len(self.exponents)

    def sort_key(self) -> tuple:
        return self._key

    def __eq__(self, other):
        if not isinstance(other, Term):
            return NotImplemented
        return self.exponents == other.exponents

    def __hash__(self):
        return hash(self.exponents)

    def __lt__(self, other: "Term") -> bool:
        return deglex_compare(self, other) < 0

    def __mul__(self, other: "Term") -> "Term":
        return multiply(self, other)

    def __repr__(self):
        return f"Term({self.exponents})"

    def __str__(self):
        return render(self)


def _check_dims(a: Term, b: Term) -> None:
    if len(a.exponents) != len(b.exponents):
        raise DimensionError(
            f"terms over {len(a.exponents)} and {len(b.exponents)} variables"
        )


def deglex_compare(a: Term, b: Term) -> int:
    """Return -1, 0 or 1 as ``a`` is smaller than, equal to or larger than ``b``."""
    _check_dims(a, b)
    ka, kb = a._key, b._key
    if ka < kb:
        return -1
    if ka > kb:
        return 1
    return 0


def multiply(a: Term, b: Term) -> Term:
    _check_dims(a, b)
    return Term(x + y for x, y in zip(a.exponents, b.exponents))


def divides(a: Term, b: Term) -> bool:
    """True iff ``a | b``, i.e. every exponent of ``a`` is at most that of ``b``."""
    _check_dims(a, b)
    return all(x <= y for x, y in zip(a.exponents, b.exponents))


def factor(t: Term) -> tuple[Term, int]:
    """Split a non-constant term as ``parent * x_i``.

    ``i`` is the lowest-index variable with a positive exponent, which makes
    evaluation caches reproducible.
    """
    for i, e in enumerate(t.exponents):
        if e > 0:
            exps = list(t.exponents)
            exps[i] -= 1
            return Term(exps), i
    raise ValueError("the constant term has no factorization")


def sort_terms(terms: Iterable[Term]) -> list[Term]:
    return sorted(terms, key=Term.sort_key)


def render(t: Term, names: Sequence[str] | None = None) -> str:
    """Human-readable form such as ``x1^2*x3``; the constant term renders as ``1``."""
    parts = []
    for i, e in enumerate(t.exponents):
        if e == 0:
            continue
        name = names[i] if names is not None else f"x{i + 1}"
        parts.append(name if e == 1 else f"{name}^{e}")
    return "*".join(parts) if parts else "1"
