"""Objectives and the discrete steppers: gradient descent, NAG and SAG.

NAG is used in its one-sequence form

    x_{n+1} = y_n - s * grad F(y_n),   y_n = x_n + (n-3)/n * (x_n - x_{n-1}),

started from ``x_0 = x_1``.  SAG keeps one more history point:

    Y_k = a1(k) X_k + a2(k) X_{k-1} + a3(k) X_{k-2}
    Z_k = (2k-3)/k X_k - (k-3)/k X_{k-1}
    X_{k+1} = Y_k - k s / (2k+4) * grad F(Z_k)

started from ``X_0 = X_1 = X_2`` at ``k = 2``.  The SAG weights are the
``n``-normalised form of the general four-term recurrence produced by
:func:`scheme_coefficients` with ``(k, m1, m2) = (1/2, 0, 3)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .exceptions import DegenerateSchemeError, DivergenceError

__all__ = [
    "Objective", "CountingObjective", "quadratic", "logistic",
    "NagState", "SagState", "SchemeCoefficients", "Trajectory",
    "nag_momentum", "nesterov_t_momentum", "nag_step", "sag_weights", "sag_weights_exact",
    "sag_points", "sag_step",
    "gd_step", "scheme_coefficients", "normalized_recurrence", "run_optimizer",
    "DIVERGENCE_NORM",
]

DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class Objective:
    """Smooth objective ``F`` with gradient oracle.

    ``hessian`` is only needed by stability probes; ``lipschitz`` is the
    gradient Lipschitz constant when known.
    """

    dim: int
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    lipschitz: Optional[float] = None
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "objective"

    def __call__(self, x):
        return self.value(x)

    def curvature_at(self, x):
        if self.hessian is None:
            raise NotImplementedError(f"{self.name} has no Hessian")
        return self.hessian(x)


class CountingObjective:
    """Wraps an :class:`Objective` and counts oracle calls."""

    def __init__(self, f: Objective):
        self._f = f
        self.dim = f.dim
        self.lipschitz = f.lipschitz
        self.name = f.name
        self.value_calls = 0
        self.grad_calls = 0

    def value(self, x):
        self.value_calls += 1
        return self._f.value(x)

    __call__ = value

    def grad(self, x):
        self.grad_calls += 1
        return self._f.grad(x)

    def curvature_at(self, x):
        return self._f.curvature_at(x)


def quadratic(A, center=None, name="quadratic"):
    """``F(x) = 1/2 (x-c)^T A (x-c)`` for symmetric PSD ``A``.

    A 1-D ``A`` is read as the diagonal, which keeps large separable
    problems cheap.  A scalar gives the 1-D problem ``F(x) = A x^2 / 2``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1)
    diagonal = A.ndim == 1
    dim = A.shape[0]
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float).reshape(dim)

    if diagonal:
        L = float(np.max(A)) if dim else 0.0

        def grad(x):
            return A * (np.asarray(x, dtype=float) - c)

        def hess(x):
            return np.diag(A)
    else:
        if not np.allclose(A, A.T):
            raise ValueError("A must be symmetric")
        L = float(np.linalg.eigvalsh(A)[-1])

        def grad(x):
            return A @ (np.asarray(x, dtype=float) - c)

        def hess(x):
            return A

    def value(x):
        d = np.asarray(x, dtype=float) - c
        return 0.5 * float(d @ grad(x))

    return Objective(dim, value, grad, lipschitz=L, hessian=hess, name=name)


def logistic(features, labels, ridge=0.1, name="logistic"):
    """Ridge-regularised logistic loss, mean over samples.

    ``labels`` are in {-1, +1}.  The ridge term keeps the minimiser finite on
    separable data.
    """
    A = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    m, dim = A.shape
    L = float(np.linalg.norm(A, 2) ** 2 / (4 * m) + ridge)

    def value(x):
        margins = y * (A @ x)
        return float(np.mean(np.logaddexp(0.0, -margins)) + 0.5 * ridge * (x @ x))

    def grad(x):
        margins = y * (A @ x)
        w = -y * _sigmoid(-margins)
        return A.T @ w / m + ridge * x

    def hess(x):
        p = _sigmoid(y * (A @ x))
        return (A.T * (p * (1 - p))) @ A / m + ridge * np.eye(dim)

    return Objective(dim, value, grad, lipschitz=L, hessian=hess, name=name)


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


# --------------------------------------------------------------------------
# States and steppers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NagState:
    x_curr: np.ndarray
    x_prev: np.ndarray
    n: int
    s: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("NAG index n must be >= 1")
        if not self.s > 0:
            raise ValueError("step size must be positive")


@dataclass(frozen=True)
class SagState:
    x_curr: np.ndarray
    x_prev: np.ndarray
    x_prev2: np.ndarray
    k: int
    s: float

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("SAG index k must be >= 2")
        if not self.s > 0:
            raise ValueError("step size must be positive")


def nag_momentum(n):
    """``(n-3)/n``, negative for n < 3 and used that way."""
    return (n - 3) / n


def nesterov_t_momentum():
    """Momentum rule ``(t_{n-1} - 1) / t_n`` of the t-sequence variant.

    ``t_1 = 1`` and ``t_{j+1} = (1 + sqrt(1 + 4 t_j^2)) / 2``.  Plugged into
    :func:`nag_step` this is the smooth counterpart of FISTA.
    """
    ts = [None, 1.0]

    def momentum(n):
        while len(ts) <= n:
            ts.append(0.5 * (1.0 + math.sqrt(1.0 + 4.0 * ts[-1] ** 2)))
        return 0.0 if n < 2 else (ts[n - 1] - 1.0) / ts[n]

    return momentum


def _check_finite(v, index):
    if not np.all(np.isfinite(v)):
        raise DivergenceError(index)
    return v


def nag_step(state: NagState, f, momentum: Optional[Callable[[int], float]] = None) -> NagState:
    """One NAG iteration; ``momentum(n)`` defaults to ``(n-3)/n``."""
    beta = nag_momentum(state.n) if momentum is None else momentum(state.n)
    y = state.x_curr + beta * (state.x_curr - state.x_prev)
    g = _check_finite(np.asarray(f.grad(y), dtype=float), state.n)
    x_next = _check_finite(y - state.s * g, state.n)
    return NagState(x_next, state.x_curr, state.n + 1, state.s)


def sag_weights_exact(k):
    """Exact SAG weights at index ``k`` as Fractions.

    Returns ``((a1, a2, a3), (b1, b2), c)`` with
    ``Y = a1 X_k + a2 X_{k-1} + a3 X_{k-2}``, ``Z = b1 X_k + b2 X_{k-1}`` and
    gradient weight ``c`` so that ``X_{k+1} = Y - c s grad F(Z)``.
    """
    k = Fraction(k)
    y = (
        (10 * k * k + 9 * k + 6) / (4 * k * k + 8 * k),
        -(4 * k * k + 3) / (2 * k * k + 4 * k),
        (2 * k - 1) / (4 * k + 8),
    )
    z = ((2 * k - 3) / k, -(k - 3) / k)
    return y, z, k / (2 * k + 4)


def sag_weights(k):
    """Floating-point version of :func:`sag_weights_exact`."""
    k = float(k)
    y = (
        (10 * k * k + 9 * k + 6) / (4 * k * k + 8 * k),
        -(4 * k * k + 3) / (2 * k * k + 4 * k),
        (2 * k - 1) / (4 * k + 8),
    )
    z = ((2 * k - 3) / k, -(k - 3) / k)
    return y, z, k / (2 * k + 4)


def sag_points(k, x, x1, x2):
    """``(Y_k, Z_k, c_k)`` from the history ``X_k, X_{k-1}, X_{k-2}``.

    Written as offsets from ``X_k`` (the weights sum to one), so a constant
    history gives back exactly that constant.
    """
    (_, a2, a3), (_, b2), c = sag_weights(k)
    d1 = x1 - x
    y = x + a2 * d1 + a3 * (x2 - x)
    z = x + b2 * d1
    return y, z, c


def sag_step(state: SagState, f) -> SagState:
    y, z, c = sag_points(state.k, state.x_curr, state.x_prev, state.x_prev2)
    _check_finite(y, state.k)
    _check_finite(z, state.k)
    g = _check_finite(np.asarray(f.grad(z), dtype=float), state.k)
    x_next = _check_finite(y - c * state.s * g, state.k)
    return SagState(x_next, state.x_curr, state.x_prev, state.k + 1, state.s)


def gd_step(x, f, s):
    if not s > 0:
        raise ValueError("step size must be positive")
    g = _check_finite(np.asarray(f.grad(x), dtype=float), 0)
    return x - s * g


# --------------------------------------------------------------------------
# General four-term scheme
# --------------------------------------------------------------------------

def _as_fraction(v):
    if isinstance(v, Fraction):
        return v
    if isinstance(v, float):
        return Fraction(v).limit_denominator(10**12)
    return Fraction(v)


@dataclass(frozen=True)
class SchemeCoefficients:
    """Coefficients of ``sum_i (alpha_i + beta_i/n + gamma_i/n^2) x_{n+2-i}``."""

    alpha: tuple
    beta: tuple
    gamma: tuple
    k_param: Fraction
    m1: Fraction
    m2: Fraction

    def as_floats(self):
        return (tuple(map(float, self.alpha)), tuple(map(float, self.beta)),
                tuple(map(float, self.gamma)))


def scheme_coefficients(k, m1, m2) -> SchemeCoefficients:
    """Three-parameter family of fourth-order consistent coefficients.

    Floats are converted to nearby rationals so downstream identities stay
    exact; pass ``Fraction`` for full control.
    """
    k, m1, m2 = _as_fraction(k), _as_fraction(m1), _as_fraction(m2)
    alpha = (Fraction(2), Fraction(-5), Fraction(4), Fraction(-1))
    beta = (Fraction(9, 2) - k, -6 + 3 * k, Fraction(3, 2) - 3 * k, k)
    gamma = (m1, -(3 * m1 + m2 + 3) / 2, m2, (m1 - m2 + 3) / 2)
    return SchemeCoefficients(alpha, beta, gamma, k, m1, m2)


SAG_PARAMS = (Fraction(1, 2), Fraction(0), Fraction(3))


def normalized_recurrence(coeffs: SchemeCoefficients, n):
    """Explicit update weights of the scheme at index ``n``.

    Returns ``(w1, w2, w3, g)`` with
    ``x_{n+1} = w1 x_n + w2 x_{n-1} + w3 x_{n-2} + g h^2 grad F(...)``.
    ``n = math.inf`` gives the large-``n`` limit.  Exact for integer or
    Fraction ``n``.
    """
    if n == math.inf:
        a = coeffs.alpha
        if a[0] == 0:
            raise DegenerateSchemeError("alpha_1 is zero")
        lead = a[0]
        rest = a[1:]
    else:
        if n < 2:
            raise ValueError("n must be >= 2")
        n = Fraction(n)
        c = [a + b / n + g / (n * n) for a, b, g in zip(coeffs.alpha, coeffs.beta, coeffs.gamma)]
        lead = c[0]
        rest = c[1:]
        if lead == 0:
            raise DegenerateSchemeError(f"leading coefficient vanishes at n={n}")
    w = tuple(-r / lead for r in rest)
    return w + (-1 / lead,)


# --------------------------------------------------------------------------
# Driver
# --------------------------------------------------------------------------

@dataclass
class Trajectory:
    """Iterates and objective values of one run.

    For NAG ``iterates[j]`` is ``x_{j+1}``; for SAG it is ``X_{j+2}``; for GD
    it is ``x_j``.  When a caller opts out of recording, ``iterates`` holds
    only the final point while ``values`` is complete.
    """

    iterates: list
    values: list
    step: float
    method: str
    reason: str = "max-iter"
    steps: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    @property
    def final(self):
        return self.iterates[-1]

    def __len__(self):
        return len(self.values)


def _diverged(x):
    return not np.all(np.isfinite(x)) or float(np.max(np.abs(x))) > DIVERGENCE_NORM


def run_optimizer(method, f, x0, s, max_iter, tol=0.0, momentum=None) -> Trajectory:
    """Run ``gd``, ``nag`` or ``sag`` from ``x0`` with fixed step ``s``.

    Stops when ``||grad F(x)|| <= tol``, after ``max_iter`` steps, or when
    the iterate leaves ``||x||_inf <= 1e12`` or turns non-finite.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol < 0:
        raise ValueError("tol must be >= 0")
    if method not in ("gd", "nag", "sag"):
        raise ValueError(f"unknown method {method!r}")
    x0 = np.asarray(x0, dtype=float).reshape(-1).copy()

    traj = Trajectory([x0], [f(x0)], s, method)
    if np.linalg.norm(f.grad(x0)) <= tol:
        traj.reason = "tol"
        return traj

    if method == "nag":
        state = NagState(x0, x0, 1, s)
    elif method == "sag":
        state = SagState(x0, x0, x0, 2, s)
    x = x0
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_iter):
            try:
                if method == "gd":
                    x = gd_step(x, f, s)
                elif method == "nag":
                    state = nag_step(state, f, momentum)
                    x = state.x_curr
                else:
                    state = sag_step(state, f)
                    x = state.x_curr
            except DivergenceError:
                traj.reason = "diverged"
                return traj
            traj.iterates.append(x)
            traj.values.append(f(x))
            if _diverged(x):
                traj.reason = "diverged"
                return traj
            if np.linalg.norm(f.grad(x)) <= tol:
                traj.reason = "tol"
                return traj
    return traj

