"""Reference solutions of the limit ODE and order/convergence checks.

The limit ODE of NAG is ``x'' + (3/t) x' + grad F(x) = 0`` with ``x(0) = x0``
and ``x'(0) = 0``.  The ``3/t`` term is singular at 0, so integration starts
at a small ``t0`` from the series ``x = x0 - t^2/8 grad F(x0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Sequence

import numpy as np

from .core import NagState, SagState, SAG_PARAMS, nag_step, sag_step, scheme_coefficients
from .exceptions import IntegrationError, OutOfRangeError, PreconditionError

__all__ = [
    "OdeSolution", "solve_limit_ode", "nag_truncation", "sag_truncation",
    "TruncationReport", "estimate_order", "convergence_gap",
    "LemmaMatrices", "LemmaReport", "lemma_matrices", "verify_lemma_bounds",
    "check_discrete_gronwall", "spectral_norm_2x2", "bessel_reference",
]

T_START = 1e-4


# --------------------------------------------------------------------------
# Reference integrator
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OdeSolution:
    """Dense trajectory ``(t, x, x', x'')`` with cubic Hermite interpolation."""

    t_grid: np.ndarray
    x_vals: np.ndarray
    v_vals: np.ndarray
    a_vals: np.ndarray
    f_ref: object
    x0: np.ndarray
    h_ref: float

    @property
    def t0(self):
        return float(self.t_grid[0])

    @property
    def T(self):
        return float(self.t_grid[-1])

    def _locate(self, t):
        if t < 0 or t > self.T * (1 + 1e-14):
            raise OutOfRangeError(f"t={t} outside [0, {self.T}]")
        i = int(np.searchsorted(self.t_grid, t, side="right")) - 1
        i = min(max(i, 0), len(self.t_grid) - 2)
        h = self.t_grid[i + 1] - self.t_grid[i]
        return i, h, (t - self.t_grid[i]) / h

    def _launch(self, t):
        g0 = self.f_ref.grad(self.x0)
        return self.x0 - (t * t / 8.0) * g0, -(t / 4.0) * g0

    def x(self, t):
        """Solution value at ``t`` (series below ``t0``)."""
        t = float(t)
        if 0 <= t < self.t0:
            return self._launch(t)[0]
        i, h, th = self._locate(t)
        if th == 0.0:
            return self.x_vals[i].copy()
        return _hermite(self.x_vals[i], self.v_vals[i], self.x_vals[i + 1],
                        self.v_vals[i + 1], h, th)

    def v(self, t):
        t = float(t)
        if 0 <= t < self.t0:
            return self._launch(t)[1]
        i, h, th = self._locate(t)
        if th == 0.0:
            return self.v_vals[i].copy()
        return _hermite(self.v_vals[i], self.a_vals[i], self.v_vals[i + 1],
                        self.a_vals[i + 1], h, th)

    def residual(self, t):
        """``||x'' + (3/t) x' + grad F(x)||`` from the interpolants at ``t``."""
        i, h, th = self._locate(float(t))
        a = _hermite_deriv(self.v_vals[i], self.a_vals[i], self.v_vals[i + 1],
                           self.a_vals[i + 1], h, th)
        x, v = self.x(t), self.v(t)
        return float(np.linalg.norm(a + 3.0 / t * v + self.f_ref.grad(x)))

    def midpoint_residual(self):
        """Largest residual over all grid-interval midpoints."""
        mids = 0.5 * (self.t_grid[:-1] + self.t_grid[1:])
        return max(self.residual(t) for t in mids)


def _hermite(p0, m0, p1, m1, h, th):
    th2 = th * th
    th3 = th2 * th
    return ((2 * th3 - 3 * th2 + 1) * p0 + (th3 - 2 * th2 + th) * h * m0
            + (-2 * th3 + 3 * th2) * p1 + (th3 - th2) * h * m1)


def _hermite_deriv(p0, m0, p1, m1, h, th):
    th2 = th * th
    return ((6 * th2 - 6 * th) * p0 / h + (3 * th2 - 4 * th + 1) * m0
            + (-6 * th2 + 6 * th) * p1 / h + (3 * th2 - 2 * th) * m1)


def solve_limit_ode(f, x0, T, h_ref, t0=T_START) -> OdeSolution:
    """Integrate the limit ODE on ``[t0, T]`` with classical RK4.

    Steps are ``min(h_ref, t/2)`` until they reach ``h_ref``; the graded
    launch keeps ``3h/t`` inside the RK4 stability interval near ``t0``.
    """
    if not T > 0 or not h_ref > 0:
        raise ValueError("T and h_ref must be positive")
    if T <= t0:
        raise ValueError(f"T must exceed t0={t0}")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    g0 = np.asarray(f.grad(x0), dtype=float)
    x = x0 - (t0 * t0 / 8.0) * g0
    v = -(t0 / 4.0) * g0

    def accel(t, x, v):
        return -3.0 / t * v - f.grad(x)

    t = t0
    ts, xs, vs, as_ = [t], [x], [v], [accel(t, x, v)]
    while t < T:
        h = min(h_ref, 0.5 * t, T - t)
        if T - (t + h) < 1e-12 * T:
            h = T - t
        k1x, k1v = v, as_[-1]
        k2x = v + 0.5 * h * k1v
        k2v = accel(t + 0.5 * h, x + 0.5 * h * k1x, k2x)
        k3x = v + 0.5 * h * k2v
        k3v = accel(t + 0.5 * h, x + 0.5 * h * k2x, k3x)
        k4x = v + h * k3v
        k4v = accel(t + h, x + h * k3x, k4x)
        x = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        t_new = t + h
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise IntegrationError(t)
        t = T if h == T - ts[-1] else t_new
        ts.append(t)
        xs.append(x)
        vs.append(v)
        as_.append(accel(t, x, v))
    return OdeSolution(np.array(ts), np.array(xs), np.array(vs), np.array(as_),
                       f, x0, float(h_ref))


def bessel_reference(t, terms=60):
    """``2 J_1(t)/t``, the exact solution for ``F = x^2/2`` and ``x0 = 1``.

    Summed from the power series of ``J_1``; accurate for ``t`` up to ~10.
    """
    u = -(t * t) / 4.0
    term, total = 1.0, 1.0
    for m in range(1, terms):
        term *= u / (m * (m + 1))
        total += term
        if abs(term) < 1e-18 * abs(total):
            break
    return total


# --------------------------------------------------------------------------
# Truncation errors
# --------------------------------------------------------------------------

def _require(sol, lo, hi):
    if lo < sol.t0 - 1e-15 or hi > sol.T * (1 + 1e-14):
        raise OutOfRangeError(f"stencil [{lo}, {hi}] outside [{sol.t0}, {sol.T}]")


def _grad_term(sol, t, h, xt, xm):
    y = xt + ((t - 3 * h) / t) * (xt - xm)
    return h * h * np.asarray(sol.f_ref.grad(y), dtype=float)


def nag_truncation(sol: OdeSolution, t, h) -> float:
    """Norm of the NAG residual after inserting the exact trajectory."""
    _require(sol, t - h, t + h)
    xp, xt, xm = sol.x(t + h), sol.x(t), sol.x(t - h)
    # weights 1, -(2t-3h)/t, (t-3h)/t sum to zero; difference form avoids
    # cancellation and is exactly zero on equilibria
    L = (xp - xt) + ((t - 3 * h) / t) * (xm - xt) + _grad_term(sol, t, h, xt, xm)
    return float(np.linalg.norm(L))


def sag_truncation(sol: OdeSolution, t, h, coeffs=None) -> float:
    """Norm of the four-term residual; default coefficients are SAG's."""
    if coeffs is None:
        coeffs = scheme_coefficients(*SAG_PARAMS)
    _require(sol, t - 2 * h, t + h)
    alpha, beta, gamma = coeffs.as_floats()
    r = h / t
    w = [a + b * r + g * r * r for a, b, g in zip(alpha, beta, gamma)]
    xt = sol.x(t)
    pts = [sol.x(t + h), xt, sol.x(t - h), sol.x(t - 2 * h)]
    L = sum(wi * (p - xt) for wi, p in zip(w, pts)) + _grad_term(sol, t, h, xt, pts[2])
    return float(np.linalg.norm(L))


@dataclass
class TruncationReport:
    scheme: str
    t: float
    h_list: list
    L_values: list
    slope: float
    r_squared: float
    status: str = "ok"

    @property
    def success(self):
        return self.status == "ok" and self.r_squared >= 0.99

    def rows(self):
        return [(self.scheme, self.t, h, L, self.slope, self.r_squared)
                for h, L in zip(self.h_list, self.L_values)]


def _loglog_fit(h, L):
    x, y = np.log(h), np.log(L)
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    slope = ((x - xm) * (y - ym)).sum() / sxx
    resid = y - (ym + slope * (x - xm))
    syy = ((y - ym) ** 2).sum()
    r2 = 1.0 - (resid ** 2).sum() / syy if syy > 0 else 1.0
    return float(slope), float(r2)


def _reference_for(f, t, h_max, h_min, x0, sol, span=1):
    if sol is not None:
        return sol
    if x0 is None:
        x0 = np.ones(f.dim)
    h_ref = min(h_min / 20.0, 1e-3)
    return solve_limit_ode(f, x0, t + h_max * (1 + 1e-9) + 2 * h_ref, h_ref)


def estimate_order(scheme, f, t, h_list: Sequence[float], x0=None, sol=None) -> TruncationReport:
    """Least-squares slope of ``log|L|`` against ``log h``.

    ``h_list`` needs at least five strictly decreasing, dyadically spaced
    values.  A reference solution is built unless ``sol`` is supplied.
    """
    h = np.asarray(h_list, dtype=float)
    if h.size < 5:
        raise PreconditionError("need at least 5 step sizes")
    ratios = h[:-1] / h[1:]
    if np.any(np.diff(h) >= 0) or not np.allclose(ratios, 2.0, rtol=1e-9):
        raise PreconditionError("h_list must be dyadic and strictly decreasing")
    sol = _reference_for(f, t, h[0], h[-1], x0, sol)
    trunc = {"nag": nag_truncation, "sag": sag_truncation}[scheme]
    L = np.array([trunc(sol, t, hi) for hi in h])
    if np.all(L == 0):
        return TruncationReport(scheme, t, h.tolist(), L.tolist(), math.nan, math.nan, "exact")
    if np.any(L == 0):
        return TruncationReport(scheme, t, h.tolist(), L.tolist(), math.nan, math.nan, "degenerate")
    slope, r2 = _loglog_fit(h, L)
    status = "ok" if r2 >= 0.99 else "poor-fit"
    return TruncationReport(scheme, t, h.tolist(), L.tolist(), slope, r2, status)


def convergence_gap(scheme, f, t, h, x0=None, sol=None) -> float:
    """``||x_n - x(t)||`` after ``n = t/h`` steps from exact ODE starts.

    NAG starts from ``x(0), x(h)``; SAG additionally uses ``x(2h)``.
    """
    n = t / h
    N = int(round(n))
    if abs(n - N) > 1e-8 * max(1.0, n) or N < 4:
        raise PreconditionError(f"t/h={n} must be an integer >= 4")
    sol = _reference_for(f, t, h, h, x0, sol)
    s = h * h
    if scheme == "nag":
        state = NagState(sol.x(h), sol.x(0.0), 1, s)
        for _ in range(N - 1):
            state = nag_step(state, f)
    elif scheme == "sag":
        state = SagState(sol.x(2 * h), sol.x(h), sol.x(0.0), 2, s)
        for _ in range(N - 2):
            state = sag_step(state, f)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return float(np.linalg.norm(state.x_curr - sol.x(t)))


# --------------------------------------------------------------------------
# Transition matrices and discrete Gronwall
# --------------------------------------------------------------------------

def spectral_norm_2x2(M) -> float:
    """2-norm of a 2x2 matrix from the closed-form Gram eigenvalue."""
    (a, b), (c, d) = [[float(v) for v in row] for row in M]
    p = a * a + c * c
    q = b * b + d * d
    r = a * b + c * d
    lam = 0.5 * (p + q + math.hypot(p - q, 2 * r))
    return math.sqrt(lam)


def _c_matrix(n):
    n = Fraction(n)
    return ((2 * n - 1) / (n + 1), -(n - 2) / (n + 1)), (Fraction(1), Fraction(0))


def _matmul(A, B):
    return tuple(tuple(sum(A[i][k] * B[k][j] for k in range(2)) for j in range(2))
                 for i in range(2))


_IDENTITY = ((Fraction(1), Fraction(0)), (Fraction(0), Fraction(1)))


@dataclass
class LemmaMatrices:
    """``C_n`` and the products ``D_{n,l} = C_n ... C_{n-l+1}`` (exact)."""

    n: int
    C: tuple
    D_of_l: Dict[int, tuple]
    norms: Dict[int, float] = field(default_factory=dict)

    def D(self, l):
        return np.array(self.D_of_l[l], dtype=float)


def lemma_matrices(n) -> LemmaMatrices:
    if n < 2:
        raise ValueError("n must be >= 2")
    D = {0: _IDENTITY}
    cur = _IDENTITY
    for l in range(1, n + 2):
        cur = _matmul(cur, _c_matrix(n - l + 1))
        D[l] = cur
    norms = {l: spectral_norm_2x2(M) for l, M in D.items()}
    return LemmaMatrices(n, _c_matrix(n), D, norms)


_P = np.array([[1.0, 1.0], [1.0, 0.0]])
_P_INV = np.array([[0.0, 1.0], [1.0, -1.0]])


@dataclass
class LemmaReport:
    n_max: int
    M: float
    M3: float
    sup_ratio: Dict[int, float]
    closed_forms_ok: bool
    triangular_bound_ok: bool

    @property
    def ok(self):
        return (math.isfinite(self.M) and self.M3 == math.sqrt(2)
                and self.closed_forms_ok and self.triangular_bound_ok)


_CLOSED = {
    -1: ((1, 0), (1, 0)),
    0: ((Fraction(1, 2), Fraction(1, 2)), (Fraction(1, 2), Fraction(1, 2))),
    1: ((0, 1), (0, 1)),
}


def verify_lemma_bounds(n_max, n_min=2) -> LemmaReport:
    """Sweep ``n`` and collect empirical constants for the D-matrix bounds.

    ``M`` is the largest ``sup_l ||D_{n,l}|| / n`` and ``M3`` the largest
    ``||D_{n,n+1}||``.  Also checks the three closed forms for ``l >= n-1``
    and, for ``0 < l <= n-2``, that ``P^{-1} D P = [[1, a], [0, b]]`` with
    ``0 < a <= l``, ``0 < b <= 1`` and norm at most ``n + 2``.
    """
    if n_max < 4:
        raise ValueError("n_max must be >= 4")
    sup_ratio = {}
    m3 = 0.0
    closed_ok = True
    tri_ok = True
    for n in range(n_min, n_max + 1):
        lm = lemma_matrices(n)
        sup_ratio[n] = max(lm.norms.values()) / n
        m3 = max(m3, lm.norms[n + 1])
        for off, want in _CLOSED.items():
            got = lm.D_of_l[n + off]
            if any(Fraction(got[i][j]) != Fraction(want[i][j]) for i in range(2) for j in range(2)):
                closed_ok = False
        for l in range(1, n - 1):
            Dt = _P_INV @ lm.D(l) @ _P
            a, b = Dt[0, 1], Dt[1, 1]
            if (abs(Dt[0, 0] - 1) > 1e-12 or abs(Dt[1, 0]) > 1e-12
                    or not (0 < a <= l + 1e-12) or not (0 < b <= 1 + 1e-12)
                    or spectral_norm_2x2(Dt) > n + 2):
                tri_ok = False
    return LemmaReport(n_max, max(sup_ratio.values()), m3, sup_ratio, closed_ok, tri_ok)


def check_discrete_gronwall(eta, alpha, beta, rtol=1e-12) -> bool:
    """Check ``eta_n <= exp(alpha n) (beta + alpha eta_0)`` for ``n >= 1``.

    The hypothesis ``eta_n <= beta + alpha * sum_{i<n} eta_i`` is verified
    first; a violation raises :class:`PreconditionError` naming the index.
    """
    if not (alpha > 0 and beta > 0):
        raise PreconditionError("alpha and beta must be positive")
    eta = np.asarray(eta, dtype=float)
    if np.any(eta <= 0):
        raise PreconditionError("sequence must be positive", int(np.argmin(eta > 0)))
    partial = np.concatenate(([0.0], np.cumsum(eta)[:-1]))
    cap = beta + alpha * partial
    for n in range(1, eta.size):
        if eta[n] > cap[n] * (1 + rtol):
            raise PreconditionError(f"hypothesis fails at index {n}", n)
    n = np.arange(eta.size)
    bound = np.exp(alpha * n) * (beta + alpha * eta[0])
    return bool(np.all(eta[1:] <= bound[1:] * (1 + rtol)))
