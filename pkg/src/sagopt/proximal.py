"""Nuclear-norm matrix completion: FISTA, APG, SFISTA and backtracking.

Objective::

    F(X) = 1/2 ||P_obs(X) - M_obs||_F^2 + lam ||X||_*

The smooth part has gradient ``P_obs(X - M)`` (Lipschitz constant 1) and the
prox of ``tau ||.||_*`` is singular-value soft-thresholding.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .core import Trajectory, sag_points
from .exceptions import StallError
from .svd import svd

__all__ = [
    "CompletionProblem", "BacktrackConfig", "FistaState", "smooth_value", "smooth_grad",
    "objective", "nuclear_norm", "svt", "t_next", "fista_run", "apg_run",
    "sfista_run", "backtracking_run", "DIVERGENCE_FACTOR", "save_dense", "load_dense",
    "save_matrix_csv", "load_matrix_csv", "save_mask_csv", "load_mask_csv",
]

DIVERGENCE_FACTOR = 1e3
# SVT inside the solver loops; "jacobi" and "lapack" route through svd()
PROX_SVD = "gram"


@dataclass(frozen=True)
class CompletionProblem:
    """Observed entries of a matrix plus the nuclear-norm weight.

    ``mask`` is a boolean ``rows x cols`` array; ``m_obs`` holds the observed
    values in row-major order of ``mask``.
    """

    rows: int
    cols: int
    mask: np.ndarray
    m_obs: np.ndarray
    lambda_reg: float = 1.0
    m_true: Optional[np.ndarray] = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (self.rows, self.cols):
            raise ValueError("mask shape does not match problem size")
        m_obs = np.asarray(self.m_obs, dtype=float).reshape(-1)
        if m_obs.size != int(mask.sum()):
            raise ValueError("one observed value per mask entry required")
        if not np.all(np.isfinite(m_obs)):
            raise ValueError("observed values must be finite")
        if self.lambda_reg < 0:
            raise ValueError("lambda_reg must be nonnegative")
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "m_obs", m_obs)

    @classmethod
    def from_matrix(cls, M, mask, lambda_reg=1.0, keep_truth=True):
        M = np.asarray(M, dtype=float)
        mask = np.asarray(mask, dtype=bool)
        return cls(M.shape[0], M.shape[1], mask, M[mask], lambda_reg,
                   M if keep_truth else None)

    @property
    def indices(self):
        return np.argwhere(self.mask)

    @property
    def M_obs(self):
        """Observed entries zero-filled to a full matrix."""
        out = np.zeros((self.rows, self.cols))
        out[self.mask] = self.m_obs
        return out


@dataclass(frozen=True)
class BacktrackConfig:
    beta: float = 0.8
    s_init: float = 1.0
    max_halvings: int = 60

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not self.s_init > 0:
            raise ValueError("s_init must be positive")


@dataclass
class FistaState:
    X_curr: np.ndarray
    X_prev: np.ndarray
    Y: np.ndarray
    t_k: float
    k: int
    s: float


def smooth_value(X, p: CompletionProblem):
    r = X[p.mask] - p.m_obs
    return 0.5 * float(r @ r)


def smooth_grad(X, p: CompletionProblem):
    g = np.zeros_like(X, dtype=float)
    g[p.mask] = X[p.mask] - p.m_obs
    return g


def nuclear_norm(X, method="jacobi"):
    return float(svd(X, method).sigma.sum())


def objective(X, p: CompletionProblem, method="lapack"):
    h = p.lambda_reg * nuclear_norm(X, method) if p.lambda_reg else 0.0
    return smooth_value(X, p) + h


def _svt(Y, tau, method=PROX_SVD):
    """SVT plus the nuclear norm of the result (free from the shrunk sigma)."""
    if tau == 0:
        return np.array(Y, dtype=float, copy=True), None
    if method == "gram":
        return _svt_gram(Y, tau)
    f = svd(Y, method)
    shrunk = np.maximum(f.sigma - tau, 0.0)
    keep = shrunk > 0
    X = (f.U[:, keep] * shrunk[keep]) @ f.V[:, keep].T
    if not keep.any():
        X = np.zeros_like(Y, dtype=float)
    return X, float(shrunk.sum())


def _svt_gram(Y, tau):
    """SVT from the eigenpairs of the smaller Gram matrix above ``tau^2``.

    Only singular values that survive the shrinkage are computed.
    """
    wide = Y.shape[0] < Y.shape[1]
    A = Y.T if wide else Y
    G = A.T @ A
    lam, W = scipy.linalg.eigh(G, subset_by_value=[tau * tau, np.inf], driver="evr",
                               check_finite=False)
    sigma = np.sqrt(lam)
    keep = sigma > tau
    if not keep.any():
        return np.zeros_like(Y, dtype=float), 0.0
    sigma, W = sigma[keep], W[:, keep]
    X = (A @ W) * ((sigma - tau) / sigma) @ W.T
    return (X.T if wide else X), float((sigma - tau).sum())


def svt(Y, tau, method=PROX_SVD):
    """``argmin_X 1/2 ||X - Y||_F^2 + tau ||X||_*``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return _svt(np.asarray(Y, dtype=float), tau, method)[0]


def t_next(t):
    return 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))


class _Recorder:
    """Objective bookkeeping and the divergence rule shared by all runs."""

    def __init__(self, p, X0, s, method, keep_iterates):
        self.p = p
        self.keep = keep_iterates
        f0 = objective(X0, p)
        self.limit = DIVERGENCE_FACTOR * f0 if f0 > 0 else math.inf
        self.traj = Trajectory([X0], [f0], s, method)

    def push(self, X, nuc):
        """Record ``X``; returns False once the run counts as diverged."""
        if not np.all(np.isfinite(X)):
            self.traj.reason = "diverged"
            return False
        h = 0.0 if self.p.lambda_reg == 0 else self.p.lambda_reg * nuc
        val = smooth_value(X, self.p) + h
        if self.keep:
            self.traj.iterates.append(X)
        else:
            self.traj.iterates[-1] = X
        self.traj.values.append(val)
        if not math.isfinite(val) or val > self.limit:
            self.traj.reason = "diverged"
            return False
        return True


def _start(p, x0):
    return p.M_obs if x0 is None else np.array(x0, dtype=float, copy=True)


def _finite(*arrays):
    return all(np.all(np.isfinite(a)) for a in arrays)


def fista_run(p: CompletionProblem, s, iters, x0=None, keep_iterates=False) -> Trajectory:
    """Fixed-step FISTA from ``Y_1 = X_0 = M_obs``, ``t_1 = 1``.

    ``values[j]`` is ``F(X_j)``.
    """
    if not s > 0:
        raise ValueError("step size must be positive")
    X_prev = _start(p, x0)
    rec = _Recorder(p, X_prev, s, "fista", keep_iterates)
    Y, t = X_prev, 1.0
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(iters):
            V = Y - s * smooth_grad(Y, p)
            if not _finite(V):
                rec.traj.reason = "diverged"
                break
            X, nuc = _svt(V, p.lambda_reg * s)
            if not rec.push(X, nuc):
                break
            t_new = t_next(t)
            Y = X + ((t - 1.0) / t_new) * (X - X_prev)
            X_prev, t = X, t_new
    return rec.traj


def apg_run(p: CompletionProblem, s, iters, x0=None, keep_iterates=False) -> Trajectory:
    """Fixed-step APG with momentum ``(k-3)/k`` from ``X_1 = X_0 = M_obs``.

    ``values[j]`` is ``F(X_{j+1})``.
    """
    if not s > 0:
        raise ValueError("step size must be positive")
    X = _start(p, x0)
    X_prev = X
    rec = _Recorder(p, X, s, "apg", keep_iterates)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, iters + 1):
            Y = X + ((k - 3) / k) * (X - X_prev)
            V = Y - s * smooth_grad(Y, p)
            if not _finite(V):
                rec.traj.reason = "diverged"
                break
            X_new, nuc = _svt(V, p.lambda_reg * s)
            if not rec.push(X_new, nuc):
                break
            X_prev, X = X, X_new
    return rec.traj


def sfista_run(p: CompletionProblem, s, iters, x0=None, keep_iterates=False) -> Trajectory:
    """Fixed-step SFISTA from ``X_2 = X_1 = X_0 = M_obs``.

    The prox threshold at index ``k`` is ``lam * k s / (2k + 4)``.
    ``values[j]`` is ``F(X_{j+2})``.
    """
    if not s > 0:
        raise ValueError("step size must be positive")
    X = _start(p, x0)
    X1 = X2 = X
    rec = _Recorder(p, X, s, "sfista", keep_iterates)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(2, iters + 2):
            Y, Z, c = sag_points(k, X, X1, X2)
            V = Y - c * s * smooth_grad(Z, p)
            if not _finite(V):
                rec.traj.reason = "diverged"
                break
            X_new, nuc = _svt(V, p.lambda_reg * c * s)
            if not rec.push(X_new, nuc):
                break
            X, X1, X2 = X_new, X, X1
    return rec.traj


def _majorized(p, Xt, Y, g, scale):
    """Sufficient decrease with quadratic weight ``1 / (2 scale)``.

    Returns ``(ok, lhs, rhs)``; a zero move is accepted.
    """
    d = Xt - Y
    lhs = smooth_value(Xt, p)
    dd = float(np.vdot(d, d))
    rhs = smooth_value(Y, p) + float(np.vdot(d, g)) + dd / (2.0 * scale)
    return (lhs < rhs or dd == 0.0), lhs, rhs


def backtracking_run(method, p: CompletionProblem, cfg: BacktrackConfig, iters,
                     x0=None, keep_iterates=False):
    """Backtracking variant of ``fista``, ``apg`` or ``sfista``.

    Each iteration shrinks the running step by ``beta`` until the
    smooth part is majorised at the trial point; steps never grow.
    Returns ``(trajectory, total_reductions)``.  ``trajectory.steps`` holds
    the accepted step per iteration and ``trajectory.checks`` the
    ``(lhs, rhs)`` pair of each accepted test.
    """
    if method not in ("fista", "apg", "sfista"):
        raise ValueError(f"unknown method {method!r}")
    X = _start(p, x0)
    rec = _Recorder(p, X, cfg.s_init, method + "-bt", keep_iterates)
    traj = rec.traj
    traj.checks = []
    s = cfg.s_init
    reductions = 0
    X_prev = X1 = X2 = X
    Y, t = X, 1.0
    k0 = 2 if method == "sfista" else 1
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(k0, iters + k0):
            if method == "fista":
                point, gpt, w = Y, Y, 1.0
            elif method == "apg":
                point = X + ((k - 3) / k) * (X - X_prev)
                gpt, w = point, 1.0
            else:
                point, gpt, w = sag_points(k, X, X1, X2)
            g = smooth_grad(gpt, p)
            i = 0
            while True:
                scale = w * s
                V = point - scale * g
                if not _finite(V):
                    traj.reason = "diverged"
                    return traj, reductions
                Xt, nuc = _svt(V, p.lambda_reg * scale)
                ok, lhs, rhs = _majorized(p, Xt, point, g, scale)
                if ok:
                    break
                i += 1
                if i > cfg.max_halvings:
                    raise StallError(k)
                s *= cfg.beta
            reductions += i
            traj.steps.append(s)
            traj.checks.append((lhs, rhs))
            if not rec.push(Xt, nuc):
                break
            if method == "fista":
                t_new = t_next(t)
                Y = Xt + ((t - 1.0) / t_new) * (Xt - X)
                t = t_new
                X = Xt
            elif method == "apg":
                X_prev, X = X, Xt
            else:
                X, X1, X2 = Xt, X, X1
    return traj, reductions


# --------------------------------------------------------------------------
# Matrix and mask files
# --------------------------------------------------------------------------

_HEADER = struct.Struct("<II")


def save_dense(path, X):
    """Row-major little-endian float64 after an 8-byte ``rows, cols`` header."""
    X = np.ascontiguousarray(X, dtype="<f8")
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*X.shape))
        fh.write(X.tobytes(order="C"))


def load_dense(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    rows, cols = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size:]
    if len(body) != 8 * rows * cols:
        raise ValueError(f"{path}: expected {rows}x{cols} doubles, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(float)


def save_matrix_csv(path, X):
    np.savetxt(path, np.asarray(X, dtype=float), delimiter=",", fmt="%.17g")


def load_matrix_csv(path):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))


def save_mask_csv(path, p: CompletionProblem):
    """Observed entries as ``i,j,value`` lines in row-major order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for (i, j), v in zip(p.indices, p.m_obs):
            w.writerow([int(i), int(j), format(float(v), ".17g")])


def load_mask_csv(path, rows, cols, lambda_reg=1.0) -> CompletionProblem:
    mask = np.zeros((rows, cols), dtype=bool)
    vals = np.zeros((rows, cols))
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), 1):
            if not rec:
                continue
            if len(rec) != 3:
                raise ValueError(f"{path}:{lineno}: expected i,j,value")
            i, j, v = int(rec[0]), int(rec[1]), float(rec[2])
            if not (0 <= i < rows and 0 <= j < cols):
                raise ValueError(f"{path}:{lineno}: index out of range")
            if mask[i, j]:
                raise ValueError(f"{path}:{lineno}: duplicate entry ({i}, {j})")
            mask[i, j] = True
            vals[i, j] = v
    return CompletionProblem(rows, cols, mask, vals[mask], lambda_reg)
