"""Characteristic polynomials and absolute-stability regions.

Linearising a scheme around a point where the Hessian is frozen gives a
constant-coefficient recurrence in the error once ``n`` is large.  With
``z = s * (Hessian eigenvalue)`` the characteristic polynomials are

    NAG:  l^2 - (2 - 2z) l + (1 - z)
    SAG:  l^3 - (5/2 - z) l^2 + (2 - z/2) l - 1/2
        = (l - 1/2) (l^2 - (2 - z) l + 1)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .core import (NagState, SagState, nag_step, normalized_recurrence, quadratic,
                   sag_step, scheme_coefficients)
from .exceptions import DivergenceError

__all__ = [
    "CharPoly", "StabilityRegion", "nag_char", "sag_char", "scheme_char",
    "poly_roots", "is_absolutely_stable", "stable_region", "analytic_region",
    "empirical_probe", "region_invariance_check", "max_root_modulus",
]

ANALYTIC_ENDPOINTS = {
    "nag": (Fraction(0), Fraction(4, 3)),
    "sag": (Fraction(0), Fraction(4)),
}


@dataclass(frozen=True)
class CharPoly:
    """Monic characteristic polynomial, coefficients highest degree first.

    ``factor`` optionally carries a known split ``(r, (b, c))`` meaning
    ``(l - r)(l^2 + b l + c)``.
    """

    coeffs: tuple
    z: float
    scheme: str = "custom"
    factor: Optional[tuple] = None

    def __post_init__(self):
        if self.coeffs[0] != 1:
            raise ValueError("polynomial must be monic")
        if self.degree not in (2, 3):
            raise ValueError("only degrees 2 and 3 are supported")

    @property
    def degree(self):
        return len(self.coeffs) - 1

    def __call__(self, lam):
        acc = 0j
        for c in self.coeffs:
            acc = acc * lam + c
        return acc


def nag_char(z) -> CharPoly:
    return CharPoly((1.0, -(2.0 - 2.0 * z), 1.0 - z), z, "nag")


def sag_char(z) -> CharPoly:
    return CharPoly((1.0, -(2.5 - z), 2.0 - 0.5 * z, -0.5), z, "sag",
                    factor=(0.5, (-(2.0 - z), 1.0)))


def scheme_char(coeffs, z, n=math.inf) -> CharPoly:
    """Characteristic cubic of a general four-term scheme at index ``n``.

    Built from :func:`normalized_recurrence`; the gradient argument
    ``x_n + (n-3)/n (x_n - x_{n-1})`` contributes ``(2n-3)/n`` and
    ``-(n-3)/n`` (limits 2 and -1).
    """
    w1, w2, w3, g = (float(v) for v in normalized_recurrence(coeffs, n))
    if n == math.inf:
        p1, p2 = 2.0, -1.0
    else:
        p1, p2 = (2 * n - 3) / n, -(n - 3) / n
    return CharPoly((1.0, -(w1 + g * p1 * z), -(w2 + g * p2 * z), -w3), z, "scheme")


# --------------------------------------------------------------------------
# Roots
# --------------------------------------------------------------------------

def _quadratic_roots(b, c):
    """Roots of ``l^2 + b l + c`` without cancellation."""
    disc = b * b - 4.0 * c
    if disc >= 0:
        sq = math.sqrt(disc)
        q = -0.5 * (b + math.copysign(sq, b))
        if q == 0:
            return [0j, 0j]
        return [complex(q), complex(c / q)]
    sq = math.sqrt(-disc)
    return [complex(-0.5 * b, 0.5 * sq), complex(-0.5 * b, -0.5 * sq)]


def _cubic_real_root(a, b, c):
    """One real root of ``l^3 + a l^2 + b l + c``."""
    p = b - a * a / 3.0
    q = 2.0 * a ** 3 / 27.0 - a * b / 3.0 + c
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if disc >= 0:
        sq = math.sqrt(disc)
        u = -q / 2.0 + sq
        v = -q / 2.0 - sq
        t = math.copysign(abs(u) ** (1 / 3), u) + math.copysign(abs(v) ** (1 / 3), v)
    else:
        r = math.sqrt(-p / 3.0)
        phi = math.acos(max(-1.0, min(1.0, -q / (2.0 * r ** 3))))
        t = 2.0 * r * math.cos(phi / 3.0)
    root = t - a / 3.0

    def poly(x):
        return ((x + a) * x + b) * x + c

    def dpoly(x):
        return (3 * x + 2 * a) * x + b

    for _ in range(3):
        d = dpoly(root)
        if d == 0:
            break
        nxt = root - poly(root) / d
        if abs(poly(nxt)) <= abs(poly(root)):
            root = nxt
    scale = 1.0 + abs(root) ** 3
    if abs(poly(root)) > 1e-12 * scale or not math.isfinite(root):
        root = _bracket_root(poly, a, b, c)
    return root


def _bracket_root(poly, a, b, c):
    # Cauchy bound brackets every real root
    bound = 1.0 + max(abs(a), abs(b), abs(c))
    lo, hi = -bound, bound
    flo = poly(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = poly(mid)
        if fm == 0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def poly_roots(p: CharPoly):
    """All roots in closed form, sorted by modulus (largest first)."""
    if p.degree == 2:
        roots = _quadratic_roots(p.coeffs[1], p.coeffs[2])
    elif p.factor is not None:
        r, (b, c) = p.factor
        roots = [complex(r)] + _quadratic_roots(b, c)
    else:
        _, a, b, c = p.coeffs
        r = _cubic_real_root(a, b, c)
        # deflate: l^3 + a l^2 + b l + c = (l - r)(l^2 + (a + r) l + (b + r (a + r)))
        b2 = a + r
        c2 = b + r * b2
        roots = [complex(r)] + _quadratic_roots(b2, c2)
    return sorted(roots, key=lambda z: (-abs(z), -z.real, -z.imag))


def max_root_modulus(p: CharPoly) -> float:
    return abs(poly_roots(p)[0])


def is_absolutely_stable(p: CharPoly, tol=1e-9) -> bool:
    """Roots in the closed unit disk, simple where they touch the circle.

    ``z = 0`` is accepted regardless of the double root at 1.
    """
    if not 0 < tol <= 1e-6:
        raise ValueError("tol must lie in (0, 1e-6]")
    if p.z == 0:
        return True
    roots = poly_roots(p)
    if any(abs(r) > 1 + tol for r in roots):
        return False
    on_circle = [r for r in roots if abs(abs(r) - 1) <= tol]
    sep = math.sqrt(tol)
    for i in range(len(on_circle)):
        for j in range(i + 1, len(on_circle)):
            if abs(on_circle[i] - on_circle[j]) <= sep:
                return False
    return True


# --------------------------------------------------------------------------
# Regions
# --------------------------------------------------------------------------

@dataclass
class StabilityRegion:
    scheme: str
    z_lo: float
    z_hi: float
    grid_step: float
    boundary_kind: str
    analytic: Optional["StabilityRegion"] = None
    rows: list = field(default_factory=list, repr=False)

    @property
    def length(self):
        return self.z_hi - self.z_lo

    def matches(self, other, tol=None):
        tol = self.grid_step if tol is None else tol
        return (abs(float(self.z_lo) - float(other.z_lo)) <= tol * (1 + 1e-9)
                and abs(float(self.z_hi) - float(other.z_hi)) <= tol * (1 + 1e-9))


def analytic_region(scheme) -> StabilityRegion:
    lo, hi = ANALYTIC_ENDPOINTS[scheme]
    return StabilityRegion(scheme, lo, hi, 0.0, "analytic")


def _scan(char_of_z, scheme, z_max, grid, tol):
    if not grid > 0 or grid > 1e-3 * z_max * (1 + 1e-12):
        raise ValueError("grid must be positive and at most 1e-3 * z_max")
    count = int(math.floor(z_max / grid + 1e-9))
    rows = []
    z_hi = None
    for i in range(count + 1):
        z = i * grid
        p = char_of_z(z)
        stable = is_absolutely_stable(p, tol)
        rows.append((scheme, z, max_root_modulus(p), int(stable)))
        if z_hi is None and not stable:
            z_hi = (i - 1) * grid
    if z_hi is None:
        z_hi = count * grid
    return StabilityRegion(scheme, 0.0, z_hi, grid, "scanned", rows=rows)


def stable_region(scheme, z_max, grid, tol=1e-9) -> StabilityRegion:
    """Scan ``z`` over ``[0, z_max]``; the analytic region rides along.

    The scanned upper endpoint is the last grid point before the first
    unstable one, so an isolated stable point beyond it is never reported.
    """
    char = {"nag": nag_char, "sag": sag_char}[scheme]
    region = _scan(char, scheme, z_max, grid, tol)
    region.analytic = analytic_region(scheme)
    return region


def region_invariance_check(param_grid: Sequence[tuple], z_max=6.0, grid=1e-3,
                            n=math.inf, tol=1e-9) -> bool:
    """Rebuild the characteristic cubic for each ``(k, m1, m2)`` and scan it.

    True iff every scanned region matches ``[0, 4]`` to one grid step.
    """
    target = analytic_region("sag")
    for k, m1, m2 in param_grid:
        coeffs = scheme_coefficients(k, m1, m2)
        region = _scan(lambda z: scheme_char(coeffs, z, n), "scheme", z_max, grid, tol)
        if not region.matches(target, grid):
            return False
    return True


# --------------------------------------------------------------------------
# Dynamics
# --------------------------------------------------------------------------

def empirical_probe(scheme, mu, s, n_iters, burn_in, growth=1e6) -> str:
    """Run the real stepper on ``F = mu x^2 / 2`` from ``x0 = 1``.

    Returns ``"diverged"`` when some ``|x_n|`` after ``burn_in`` exceeds
    ``growth * |x_burn_in|`` (or anything turns non-finite), otherwise
    ``"bounded"``.
    """
    if burn_in < 100:
        raise ValueError("burn_in must be >= 100")
    if n_iters < 10 * burn_in:
        raise ValueError("n_iters must be >= 10 * burn_in")
    f = quadratic(float(mu))
    x0 = np.ones(1)
    if scheme == "nag":
        state = NagState(x0, x0, 1, s)
        step = nag_step
    elif scheme == "sag":
        state = SagState(x0, x0, x0, 2, s)
        step = sag_step
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    ref = None
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n_iters + 1):
            try:
                state = step(state, f)
            except DivergenceError:
                return "diverged"
            xi = abs(float(state.x_curr[0]))
            if i == burn_in:
                ref = xi
            elif ref is not None and xi > growth * ref:
                return "diverged"
    return "bounded"
