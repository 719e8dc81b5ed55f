"""Convex solvers for the (regularized, optionally ball-constrained) squared loss.

All solvers minimize

    f(v) = ||A v + b||^2 / m + (lam / 2) ||v||^2

over R^k, the l1-ball or the l2-ball of a given radius. Inner loops work with
the Gram form ``v'Qv + 2 c'v + bb`` (``Q = A'A/m``, ``c = A'b/m``) so an
iteration is independent of m; the vanishing test and the reported objective
use the residual form. The loops are compiled with numba.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

VANISHING = "vanishing-reached"
GAP = "gap-below-eps"
STALLED = "stalled"
ITERATION_CAP = "iteration-cap"
EXACT = "exact"
_REASONS = (ITERATION_CAP, VANISHING, GAP, STALLED)

REGIONS = ("unconstrained", "l1", "l2")

STALL_TOL = 1e-12
DROP_TOL = 1e-12
AGD_STALL_WINDOW = 5


@dataclass
class OracleProblem:
    """One least-squares instance.

    ``radius`` is the ball radius for the ``l1``/``l2`` regions. ``psi=None``
    disables the early stop on a vanishing objective. ``gram`` may pass a
    precomputed ``A'A/m``.
    """

    A: np.ndarray
    b: np.ndarray
    lam: float = 0.0
    region: str = "unconstrained"
    radius: float | None = None
    eps: float = 0.0
    psi: float | None = None
    max_iter: int = 10_000
    stall_tol: float = STALL_TOL
    record_history: bool = False
    gram: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if A.ndim == 1:
            A = A.reshape(-1, 1)
        if A.ndim != 2 or A.shape[0] != b.shape[0]:
            raise ValueError(f"A {A.shape} and b {b.shape} do not match")
        if A.shape[0] < 1 or A.shape[1] < 1:
            raise ValueError("need m >= 1 and k >= 1")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite entries in A or b")
        if self.region not in REGIONS:
            raise ValueError(f"unknown region {self.region!r}")
        if self.region != "unconstrained" and not (self.radius is not None and self.radius > 0):
            raise ValueError("ball regions need a positive radius")
        if self.lam < 0 or self.eps < 0:
            raise ValueError("lam and eps must be nonnegative")
        self.A, self.b = A, b
        m = A.shape[0]
        self.Q = A.T @ A / m if self.gram is None else self.gram
        self.c = A.T @ b / m
        self.bb = float(b @ b) / m

    @classmethod
    def with_tau(cls, A, b, tau: float, region: str, **kw) -> "OracleProblem":
        """Ball radius ``tau - 1`` so the generator including its leading 1 is tau-bounded."""
        if tau < 2:
            raise ValueError(f"tau must be >= 2, got {tau}")
        return cls(A, b, region=region, radius=tau - 1.0, **kw)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.A.shape[1]

    def objective(self, v) -> float:
        r = self.A @ v + self.b
        return float(r @ r) / self.m + 0.5 * self.lam * float(v @ v)

    def _kernel_args(self):
        psi = -np.inf if self.psi is None else float(self.psi)
        hist = np.empty(self.max_iter + 2 if self.record_history else 0)
        return (self.A, self.b, self.Q, self.c, self.bb, float(self.lam), float(self.eps),
                psi, int(self.max_iter), float(self.stall_tol), hist)


@dataclass
class OracleSolution:
    coefficients: np.ndarray
    objective: float
    reason: str
    iterations: int
    gap: float | None = None
    history: np.ndarray | None = field(default=None, repr=False)
    active_set: dict[int, float] | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.reason != ITERATION_CAP


def objective_and_gradient(p: OracleProblem, v) -> tuple[float, np.ndarray]:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (p.k,):
        raise ValueError(f"expected a vector of length {p.k}, got shape {v.shape}")
    r = p.A @ v + p.b
    f = float(r @ r) / p.m + 0.5 * p.lam * float(v @ v)
    g = 2.0 / p.m * (p.A.T @ r) + p.lam * v
    return f, g


def atom_vector(atom: int, k: int, radius: float) -> np.ndarray:
    """Vertex of the l1-ball: atom ``2i`` is ``+radius*e_i``, ``2i+1`` is ``-radius*e_i``."""
    v = np.zeros(k)
    v[atom // 2] = radius if atom % 2 == 0 else -radius
    return v


def lmo_l1(gradient, radius: float) -> tuple[int, np.ndarray]:
    """Vertex of the l1-ball minimizing ``<gradient, s>``.

    A zero gradient returns ``+radius*e_1``.
    """
    if not radius > 0:
        raise ValueError("radius must be positive")
    g = np.asarray(gradient, dtype=np.float64)
    i = int(np.argmax(np.abs(g)))
    atom = 2 * i + 1 if g[i] > 0 else 2 * i
    return atom, atom_vector(atom, g.shape[0], radius)


def lmo_l2(gradient, radius: float) -> np.ndarray:
    """``-radius * g / ||g||``; the zero vector for a zero gradient."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    g = np.asarray(gradient, dtype=np.float64)
    nrm = float(np.linalg.norm(g))
    if nrm == 0.0:
        return np.zeros_like(g)
    return -radius * g / nrm


@numba.njit(cache=True)
def _step(slope, curvature, gamma_max):
    # minimize slope*gamma + curvature*gamma^2/2 on [0, gamma_max]
    if curvature > 0.0:
        return min(max(-slope / curvature, 0.0), gamma_max)
    return gamma_max if slope < 0.0 else 0.0


def line_search_quadratic(p: OracleProblem, x, d, gamma_max: float) -> float:
    """Exact minimizer of ``gamma -> f(x + gamma d)`` on ``[0, gamma_max]``."""
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if gamma_max < 0:
        raise ValueError("gamma_max must be nonnegative")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(d)) and math.isfinite(gamma_max)):
        raise ValueError("non-finite line search input")
    if not np.any(d):
        return 0.0
    _, g = objective_and_gradient(p, x)
    Ad = p.A @ d
    curvature = 2.0 * float(Ad @ Ad) / p.m + p.lam * float(d @ d)
    return _step(float(g @ d), curvature, float(gamma_max))


# -- compiled kernels -------------------------------------------------------
# reason codes index _REASONS


@numba.njit(cache=True)
def _matvec(Q, v, out):
    k = v.shape[0]
    for i in range(k):
        s = 0.0
        for j in range(k):
            s += Q[i, j] * v[j]
        out[i] = s


@numba.njit(cache=True)
def _gram_value(x, Qx, c, bb, lam):
    f = bb
    for i in range(x.shape[0]):
        f += x[i] * Qx[i] + 2.0 * c[i] * x[i] + 0.5 * lam * x[i] * x[i]
    return f


@numba.njit(cache=True)
def _residual_value(A, b, x, lam):
    m, k = A.shape
    f = 0.0
    for r in range(m):
        s = b[r]
        for j in range(k):
            s += A[r, j] * x[j]
        f += s * s
    f /= m
    for j in range(k):
        f += 0.5 * lam * x[j] * x[j]
    return f


@numba.njit(cache=True)
def _vanished(A, b, x, lam, f, psi):
    return f <= psi and _residual_value(A, b, x, lam) <= psi


@numba.njit(cache=True)
def _stalled(f_old, f_new, tol):
    return _small_decrease(f_old - f_new, f_old, tol)


@numba.njit(cache=True)
def _small_decrease(decrease, f, tol):
    return decrease <= tol * max(abs(f), 2.2250738585072014e-308)


@numba.njit(cache=True)
def _pfw_kernel(A, b, Q, c, bb, lam, eps, psi, max_iter, stall_tol, hist, radius, w, drop_tol):
    k = Q.shape[0]
    r = radius
    x = np.empty(k)
    for i in range(k):
        x[i] = r * (w[2 * i] - w[2 * i + 1])
    Qx = np.empty(k)
    _matvec(Q, x, Qx)
    record = hist.shape[0] > 0
    nh = 0
    reason = 0
    gap = np.nan
    it = 0
    stalled = False
    refresh = max(256, k)  # keeps the O(k^2) refresh at O(k) per iteration
    while True:
        # one pass: objective, gradient, FW vertex, gap and away vertex
        # (argmax of <g, v> over active atoms, lowest index on ties)
        f = bb
        i_fw = 0
        gmax = -1.0
        gx = 0.0
        a_atom = -1
        best = -np.inf
        for i in range(k):
            xi = x[i]
            qi = Qx[i]
            f += xi * qi + 2.0 * c[i] * xi + 0.5 * lam * xi * xi
            gi = 2.0 * (qi + c[i]) + lam * xi
            gx += gi * xi
            if abs(gi) > gmax:
                gmax = abs(gi)
                i_fw = i
            if w[2 * i] > 0.0 and r * gi > best:
                best = r * gi
                a_atom = 2 * i
            if w[2 * i + 1] > 0.0 and -r * gi > best:
                best = -r * gi
                a_atom = 2 * i + 1
        gap = r * gmax + gx
        if record:
            hist[nh] = f
            nh += 1
        if stalled:
            reason = 3
            break
        if _vanished(A, b, x, lam, f, psi):
            reason = 1
            break
        if gap <= eps:
            reason = 2
            break
        if it >= max_iter:
            break
        g_fw = 2.0 * (Qx[i_fw] + c[i_fw]) + lam * x[i_fw]
        if g_fw > 0.0:
            s_atom = 2 * i_fw + 1
            s_sign = -1.0
        else:
            s_atom = 2 * i_fw
            s_sign = 1.0
        i_a = a_atom // 2
        a_sign = 1.0 if a_atom % 2 == 0 else -1.0
        g_a = 2.0 * (Qx[i_a] + c[i_a]) + lam * x[i_a]
        # pairwise direction d = r*s_sign*e_fw - r*a_sign*e_a
        slope = r * (s_sign * g_fw - a_sign * g_a)
        if i_fw == i_a:
            coef = r * (s_sign - a_sign)
            dQd = coef * coef * Q[i_fw, i_fw]
            dd = coef * coef
        else:
            dQd = r * r * (Q[i_fw, i_fw] + Q[i_a, i_a] - 2.0 * s_sign * a_sign * Q[i_fw, i_a])
            dd = 2.0 * r * r
        curv = 2.0 * dQd + lam * dd
        gamma = _step(slope, curv, w[a_atom])
        if gamma <= 0.0:
            reason = 3
            break
        # exact decrease of the quadratic; a drop step may decrease by little
        decrease = -(slope * gamma + 0.5 * curv * gamma * gamma)
        drop_step = gamma >= w[a_atom]
        w[s_atom] += gamma
        w[a_atom] -= gamma
        x[i_fw] += gamma * r * s_sign
        x[i_a] -= gamma * r * a_sign
        u = gamma * r * s_sign
        v = gamma * r * a_sign
        for i in range(k):
            Qx[i] += u * Q[i_fw, i] - v * Q[i_a, i]
        if w[a_atom] < drop_tol:
            rest = w[a_atom]
            w[a_atom] = 0.0
        else:
            rest = 0.0
        if rest != 0.0:
            # drop a negligible weight and renormalize the remaining ones
            x[i_a] -= rest * r * a_sign
            total = 0.0
            for a in range(2 * k):
                total += w[a]
            for i in range(k):
                Qx[i] -= rest * r * a_sign * Q[i_a, i]
                x[i] /= total
                Qx[i] /= total
            for a in range(2 * k):
                w[a] /= total
        it += 1
        if it % refresh == 0:
            _matvec(Q, x, Qx)  # limit drift of the incremental update
        stalled = not drop_step and _small_decrease(decrease, f, stall_tol)
    return x, gap, reason, it, nh


@numba.njit(cache=True)
def _fw_kernel(A, b, Q, c, bb, lam, eps, psi, max_iter, stall_tol, hist, radius, x):
    k = Q.shape[0]
    r = radius
    Qx = np.empty(k)
    _matvec(Q, x, Qx)
    g = np.empty(k)
    s = np.empty(k)
    d = np.empty(k)
    Qd = np.empty(k)
    f = _gram_value(x, Qx, c, bb, lam)
    record = hist.shape[0] > 0
    nh = 0
    if record:
        hist[0] = f
        nh = 1
    reason = 0
    gap = np.nan
    it = 0
    while True:
        if _vanished(A, b, x, lam, f, psi):
            reason = 1
            break
        gn = 0.0
        for i in range(k):
            g[i] = 2.0 * (Qx[i] + c[i]) + lam * x[i]
            gn += g[i] * g[i]
        gn = np.sqrt(gn)
        gap = 0.0
        for i in range(k):
            s[i] = -r * g[i] / gn if gn > 0.0 else 0.0
            d[i] = s[i] - x[i]
            gap -= g[i] * d[i]
        if gap <= eps:
            reason = 2
            break
        if it >= max_iter:
            break
        _matvec(Q, d, Qd)
        slope = 0.0
        curv = 0.0
        for i in range(k):
            slope += g[i] * d[i]
            curv += 2.0 * d[i] * Qd[i] + lam * d[i] * d[i]
        gamma = _step(slope, curv, 1.0)
        if gamma <= 0.0:
            reason = 3
            break
        decrease = -(slope * gamma + 0.5 * curv * gamma * gamma)
        for i in range(k):
            x[i] += gamma * d[i]
            Qx[i] += gamma * Qd[i]
        it += 1
        if it % 256 == 0:
            _matvec(Q, x, Qx)
        f_new = _gram_value(x, Qx, c, bb, lam)
        if record:
            hist[nh] = f_new
            nh += 1
        done = _small_decrease(decrease, f, stall_tol)
        f = f_new
        if done:
            reason = 3
            break
    if reason == 3:
        gn = 0.0
        for i in range(k):
            g[i] = 2.0 * (Qx[i] + c[i]) + lam * x[i]
            gn += g[i] * g[i]
        gn = np.sqrt(gn)
        gap = gn * r
        for i in range(k):
            gap += g[i] * x[i]
    return x, gap, reason, it, nh


@numba.njit(cache=True)
def _agd_kernel(A, b, Q, c, bb, lam, eps, psi, max_iter, stall_tol, hist, L, x, window):
    k = Q.shape[0]
    Qx = np.empty(k)
    _matvec(Q, x, Qx)
    y = x.copy()
    Qy = Qx.copy()
    z = np.empty(k)
    Qz = np.empty(k)
    f = _gram_value(x, Qx, c, bb, lam)
    record = hist.shape[0] > 0
    nh = 0
    if record:
        hist[0] = f
        nh = 1
    recent = np.empty(window + 1)
    recent[0] = f
    n_recent = 1
    t = 1.0
    reason = 0
    it = 0
    while True:
        if _vanished(A, b, x, lam, f, psi):
            reason = 1
            break
        if it >= max_iter:
            break
        for i in range(k):
            z[i] = y[i] - (2.0 * (Qy[i] + c[i]) + lam * y[i]) / L
        _matvec(Q, z, Qz)
        fz = _gram_value(z, Qz, c, bb, lam)
        if fz > f:
            # reject and restart the momentum from the last accepted point
            for i in range(k):
                y[i] = x[i]
                Qy[i] = Qx[i]
            t = 1.0
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_new
            for i in range(k):
                y[i] = z[i] + beta * (z[i] - x[i])
                Qy[i] = Qz[i] + beta * (Qz[i] - Qx[i])
                x[i] = z[i]
                Qx[i] = Qz[i]
            f = fz
            t = t_new
        it += 1
        if record:
            hist[nh] = f
            nh += 1
        if n_recent <= window:
            recent[n_recent] = f
            n_recent += 1
        else:
            for j in range(window):
                recent[j] = recent[j + 1]
            recent[window] = f
        if n_recent == window + 1 and _stalled(recent[0], f, stall_tol):
            reason = 3
            break
    return x, reason, it, nh


def _history(p: OracleProblem, hist, nh):
    return hist[:nh].copy() if p.record_history else None


def pfw_solve(p: OracleProblem, start: int = 0) -> OracleSolution:
    """Pairwise Frank-Wolfe over the l1-ball of radius ``p.radius``.

    The iterate is a convex combination of the 2k signed vertices (atom
    ``2i`` is ``+radius*e_i``, ``2i+1`` is ``-radius*e_i``); each step moves
    weight from the away vertex to the Frank-Wolfe vertex with an exact line
    search capped at the away vertex's weight.
    """
    if p.region != "l1":
        raise ValueError("pfw_solve needs an l1-ball problem")
    k = p.k
    if not 0 <= start < 2 * k:
        raise ValueError(f"start atom {start} is not a vertex of the {k}-dim l1-ball")
    w = np.zeros(2 * k)
    w[start] = 1.0
    args = p._kernel_args()
    x, gap, code, it, nh = _pfw_kernel(*args, float(p.radius), w, DROP_TOL)
    active = {int(a): float(w[a]) for a in np.flatnonzero(w > 0)}
    return OracleSolution(x, p.objective(x), _REASONS[code], it, float(gap),
                          _history(p, args[-1], nh), active)


def fw_solve(p: OracleProblem, x0=None) -> OracleSolution:
    """Vanilla Frank-Wolfe with exact line search over the l2-ball.

    Starts from ``radius * e_1`` unless ``x0`` is given.
    """
    if p.region != "l2":
        raise ValueError("fw_solve needs an l2-ball problem")
    k, r = p.k, p.radius
    if x0 is None:
        x = np.zeros(k)
        x[0] = r
    else:
        x = np.array(x0, dtype=np.float64)
        if x.shape != (k,) or np.linalg.norm(x) > r * (1 + 1e-12):
            raise ValueError("infeasible start point")
    args = p._kernel_args()
    x, gap, code, it, nh = _fw_kernel(*args, float(r), x)
    return OracleSolution(x, p.objective(x), _REASONS[code], it, float(gap),
                          _history(p, args[-1], nh))


def power_iteration(Q: np.ndarray, n_iter: int = 200) -> float:
    """Upper estimate of the largest eigenvalue of a symmetric PSD matrix."""
    v = np.ones(Q.shape[0]) / math.sqrt(Q.shape[0])
    lam = 0.0
    for _ in range(n_iter):
        w = Q @ v
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        lam_new = float(v @ w)
        v = w / nrm
        if abs(lam_new - lam) <= 1e-10 * lam_new:
            lam = lam_new
            break
        lam = lam_new
    # Rayleigh quotients approach from below; pad so 1/L stays a safe step
    return max(lam, float(np.linalg.norm(Q @ v))) * 1.01


def agd_solve(p: OracleProblem, x0=None) -> OracleSolution:
    """Nesterov-accelerated gradient descent with step ``1/L``, started at 0.

    ``L = 2*lambda_max(A'A/m) + lam``. A step that would increase the
    objective is rejected and the momentum restarted, so accepted iterates
    are monotone. Stops when the objective reaches ``psi``, when the relative
    progress over the last 5 iterations is below ``stall_tol``, or at the cap.
    """
    if p.region != "unconstrained":
        raise ValueError("agd_solve needs an unconstrained problem")
    x = np.zeros(p.k) if x0 is None else np.array(x0, dtype=np.float64)
    L = 2.0 * power_iteration(p.Q) + p.lam
    if L == 0.0:
        # A = 0 and lam = 0: the objective is constant
        f = p.objective(x)
        reason = VANISHING if p.psi is not None and f <= p.psi else STALLED
        hist = np.array([f]) if p.record_history else None
        return OracleSolution(x, f, reason, 0, None, hist)
    args = p._kernel_args()
    x, code, it, nh = _agd_kernel(*args, float(L), x, AGD_STALL_WINDOW)
    return OracleSolution(x, p.objective(x), _REASONS[code], it, None,
                          _history(p, args[-1], nh))


def exact_solve(p: OracleProblem) -> OracleSolution:
    """Closed-form minimizer of the unconstrained (ridge) problem via least squares."""
    if p.region != "unconstrained":
        raise ValueError("exact_solve only handles unconstrained problems")
    m, k = p.m, p.k
    A = p.A / math.sqrt(m)
    rhs = -p.b / math.sqrt(m)
    if p.lam > 0:
        A = np.vstack([A, math.sqrt(p.lam / 2.0) * np.eye(k)])
        rhs = np.concatenate([rhs, np.zeros(k)])
    x = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return OracleSolution(x, p.objective(x), EXACT, 1)


SOLVERS = {
    "pfw": ("l1", pfw_solve),
    "cg": ("l2", fw_solve),
    "agd": ("unconstrained", agd_solve),
    "exact": ("unconstrained", exact_solve),
}


def solve(p: OracleProblem, method: str | None = None) -> OracleSolution:
    if method is None:
        method = {"l1": "pfw", "l2": "cg", "unconstrained": "agd"}[p.region]
    region, fn = SOLVERS[method]
    if region != p.region:
        raise ValueError(f"solver {method!r} expects region {region!r}, got {p.region!r}")
    return fn(p)
