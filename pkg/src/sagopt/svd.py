"""Thin SVD: one-sided Jacobi, with a LAPACK path for the heavy loops."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import SvdConvergenceError

__all__ = ["SvdFactors", "svd", "jacobi_svd"]


@dataclass(frozen=True)
class SvdFactors:
    """``X = U diag(sigma) V^T`` keeping only numerically nonzero ``sigma``."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def rank(self):
        return self.sigma.size

    def reconstruct(self):
        return (self.U * self.sigma) @ self.V.T


def _round_robin(n):
    """Pairings for one cyclic sweep; each round pairs disjoint columns."""
    players = list(range(n + (n % 2)))
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p), max(p)) for p in pairs if max(p) < n]
        if pairs:
            rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_svd(X, tol=1e-12, max_sweeps=60):
    """Hestenes one-sided Jacobi on the columns of ``X`` (``m >= n``).

    Returns ``(W, V)`` with ``X V = W`` and mutually orthogonal columns of
    ``W``; singular values are the column norms of ``W``.
    """
    A = np.array(X, dtype=float, copy=True)
    n = A.shape[1]
    V = np.eye(n)
    if n < 2:
        return A, V
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        off = 0.0
        for p, q in rounds:
            ap, aq = A[:, p], A[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            denom = np.sqrt(alpha * beta)
            with np.errstate(divide="ignore", invalid="ignore"):
                rel = np.where(denom > 0, np.abs(gamma) / denom, 0.0)
            if rel.size:
                off = max(off, float(rel.max()))
            rot = rel > tol
            if not rot.any():
                continue
            p, q = p[rot], q[rot]
            alpha, beta, gamma = alpha[rot], beta[rot], gamma[rot]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t[zeta == 0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for M in (A, V):
                mp, mq = M[:, p].copy(), M[:, q]
                M[:, p] = c * mp - s * mq
                M[:, q] = s * mp + c * mq
        if off <= tol:
            return A, V
    raise SvdConvergenceError(f"Jacobi SVD not converged after {max_sweeps} sweeps")


def _truncate(U, sigma, V, shape):
    order = np.argsort(-sigma, kind="stable")
    U, sigma, V = U[:, order], sigma[order], V[:, order]
    if sigma.size == 0 or sigma[0] == 0:
        keep = 0
    else:
        keep = int(np.sum(sigma > max(shape) * np.finfo(float).eps * sigma[0]))
    return SvdFactors(U[:, :keep], sigma[:keep], V[:, :keep])


def svd(X, method="jacobi") -> SvdFactors:
    """Thin SVD of a finite real matrix.

    ``method="jacobi"`` is the self-contained one-sided Jacobi solver;
    ``method="lapack"`` defers to ``numpy.linalg.svd`` and is what the
    proximal loops use by default.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if not np.all(np.isfinite(X)):
        raise ValueError("X has non-finite entries")
    if method == "lapack":
        U, sigma, Vt = np.linalg.svd(X, full_matrices=False)
        return _truncate(U, sigma, Vt.T, X.shape)
    if method != "jacobi":
        raise ValueError(f"unknown SVD method {method!r}")
    transposed = X.shape[0] < X.shape[1]
    A = X.T if transposed else X
    W, V = jacobi_svd(A)
    sigma = np.linalg.norm(W, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        U = np.where(sigma > 0, W / np.where(sigma > 0, sigma, 1.0), 0.0)
    f = _truncate(U, sigma, V, X.shape)
    if transposed:
        return SvdFactors(f.V, f.sigma, f.U)
    return f
