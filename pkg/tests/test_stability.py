import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sagopt import stability as S
from sagopt.core import NagState, nag_step, quadratic, run_optimizer, scheme_coefficients


def moduli(p):
    return sorted(abs(r) for r in S.poly_roots(p))


def residual_ok(p, roots):
    return all(abs(p(r)) <= 1e-10 * (1 + abs(r) ** p.degree) for r in roots)


# -- characteristic polynomials ---------------------------------------------

def test_nag_char_examples():
    assert S.nag_char(0).coeffs == (1.0, -2.0, 1.0)
    assert S.poly_roots(S.nag_char(0)) == [1, 1]
    assert S.nag_char(1).coeffs == (1.0, 0.0, 0.0)
    assert moduli(S.nag_char(1)) == [0, 0]
    assert max(moduli(S.nag_char(4 / 3))) == pytest.approx(1.0, abs=1e-12)


def test_nag_root_formula_at_two():
    roots = S.poly_roots(S.nag_char(2))
    assert S.nag_char(2).coeffs == (1.0, 2.0, -1.0)
    want = sorted([-1 - math.sqrt(2), -1 + math.sqrt(2)], key=abs, reverse=True)
    np.testing.assert_allclose([r.real for r in roots], want, rtol=1e-14)
    assert abs(roots[0]) == pytest.approx(1 + math.sqrt(2))


@given(st.floats(-10, 10))
def test_sag_factorization_expands(z):
    p = S.sag_char(z)
    r, (b, c) = p.factor
    expanded = (1.0, b - r, c - r * b, -r * c)
    np.testing.assert_allclose(p.coeffs, expanded, rtol=0, atol=1e-12 * (1 + abs(z)))


def test_sag_char_examples():
    roots = S.poly_roots(S.sag_char(0))
    np.testing.assert_allclose(sorted(r.real for r in roots), [0.5, 1, 1], atol=1e-15)
    roots = S.poly_roots(S.sag_char(2))
    assert moduli(S.sag_char(2)) == pytest.approx([0.5, 1, 1], abs=1e-15)
    imag = sorted(r.imag for r in roots)
    assert imag == pytest.approx([-1, 0, 1], abs=1e-15)


@settings(max_examples=200)
@given(st.floats(-20, 20))
def test_sag_quadratic_factor_root_product(z):
    _, (b, c) = S.sag_char(z).factor
    r1, r2 = S._quadratic_roots(b, c)
    assert abs(r1 * r2 - 1) <= 1e-12 * max(1.0, abs(r1) * abs(r2))
    on_circle = abs(abs(r1) - 1) < 1e-9 and abs(abs(r2) - 1) < 1e-9
    # the discriminant z(z-4) rounds to zero right next to the endpoints
    if 1e-6 < z < 4 - 1e-6:
        assert on_circle and r1.imag != 0


@settings(max_examples=200)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
def test_general_cubic_residual(a, b, c):
    p = S.CharPoly((1.0, a, b, c), 0.5)
    roots = S.poly_roots(p)
    assert len(roots) == 3
    scale = 1 + max(abs(a), abs(b), abs(c))
    for r in roots:
        assert abs(p(r)) <= 1e-10 * (1 + abs(r) ** 3) * scale ** 2
    # sorted by modulus, largest first
    assert all(abs(x) >= abs(y) - 1e-15 for x, y in zip(roots, roots[1:]))


@settings(max_examples=100)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_quadratic_residual(b, c):
    p = S.CharPoly((1.0, b, c), 0.5)
    assert residual_ok(p, S.poly_roots(p))


@pytest.mark.parametrize("z", [0.0, 0.5, 1.0, 2.0, 3.9, 4.0, 5.0])
def test_general_cubic_agrees_with_factor(z):
    p = S.sag_char(z)
    plain = S.CharPoly(p.coeffs, z)
    np.testing.assert_allclose(moduli(plain), moduli(p), atol=1e-7)


def test_charpoly_validation():
    with pytest.raises(ValueError):
        S.CharPoly((2.0, 1.0, 1.0), 0)
    with pytest.raises(ValueError):
        S.CharPoly((1.0, 1.0), 0)


# -- stability predicate ---------------------------------------------------

def test_stability_examples():
    assert S.is_absolutely_stable(S.sag_char(2), 1e-9)
    assert not S.is_absolutely_stable(S.nag_char(1.5), 1e-9)
    assert S.is_absolutely_stable(S.nag_char(1), 1e-9)
    assert S.is_absolutely_stable(S.nag_char(0), 1e-9)
    assert S.is_absolutely_stable(S.sag_char(0), 1e-9)
    # double root -1 on the circle is rejected
    assert not S.is_absolutely_stable(S.sag_char(4), 1e-9)
    with pytest.raises(ValueError):
        S.is_absolutely_stable(S.sag_char(1), 1e-3)


# -- regions ---------------------------------------------------------------

def test_sag_region():
    reg = S.stable_region("sag", 6, 1e-3)
    assert reg.matches(reg.analytic, 1e-3)
    assert reg.z_lo == 0 and abs(reg.z_hi - 4) <= 1e-3
    assert reg.analytic.z_hi == Fraction(4) and reg.boundary_kind == "scanned"


def test_nag_region():
    reg = S.stable_region("nag", 3, 1e-3)
    assert abs(reg.z_hi - 4 / 3) <= 1e-3
    assert reg.analytic.z_hi == Fraction(4, 3)


def test_region_length_ratio():
    sag = S.stable_region("sag", 6, 1e-3)
    nag = S.stable_region("nag", 3, 1e-3)
    assert sag.length / nag.length == pytest.approx(3, abs=0.01)


def test_region_grid_precondition():
    with pytest.raises(ValueError):
        S.stable_region("sag", 6, 0.01)


def test_scan_rows_match_schema():
    reg = S.stable_region("nag", 2, 1e-3)
    assert len(reg.rows) == 2001
    scheme, z, m, flag = reg.rows[1000]
    assert scheme == "nag" and z == 1.0 and flag == 1


@pytest.mark.parametrize("params", [(Fraction(1, 2), 0, 3), (0, 0, 0), (1, 2, -1)])
def test_region_invariance(params):
    assert S.region_invariance_check([params], z_max=6, grid=1e-3)


def test_region_invariance_more_triples():
    grid = [(2, -1, 5), (-3, 4, Fraction(1, 2)), (Fraction(7, 3), 1, 1)]
    assert S.region_invariance_check(grid, z_max=6, grid=2e-3)


def test_scheme_char_limit_matches_sag():
    coeffs = scheme_coefficients(Fraction(1, 2), 0, 3)
    for z in (0.3, 1.7, 3.2):
        np.testing.assert_allclose(S.scheme_char(coeffs, z).coeffs, S.sag_char(z).coeffs,
                                   atol=1e-15)


def test_finite_n_regions_shrink_to_limit():
    coeffs = scheme_coefficients(Fraction(1, 2), 0, 3)
    ends = []
    for n in (20, 100, 1000):
        reg = S._scan(lambda z: S.scheme_char(coeffs, z, n), "scheme", 6, 1e-3, 1e-9)
        ends.append(reg.z_hi)
    assert ends[0] > ends[1] > ends[2] > 4 - 1e-3
    assert abs(ends[2] - 4) < 0.02


# -- probes ----------------------------------------------------------------

def test_probe_examples():
    assert S.empirical_probe("nag", 1.0, 1.5, 10_000, 100) == "diverged"
    assert S.empirical_probe("sag", 1.0, 3.5, 10_000, 100) == "bounded"


@pytest.mark.parametrize("scheme", ["nag", "sag"])
def test_probe_inside_both_regions_decreases(scheme):
    assert S.empirical_probe(scheme, 1.0, 0.5, 1000, 100) == "bounded"
    tr = run_optimizer(scheme, quadratic(1.0), np.ones(1), 0.5, 400)
    xs = [abs(x[0]) for x in tr.iterates]
    peaks = [max(xs[i:i + 50]) for i in range(0, 400, 50)]
    assert all(a > b for a, b in zip(peaks, peaks[1:]))


def test_probe_preconditions():
    with pytest.raises(ValueError):
        S.empirical_probe("sag", 1.0, 1.0, 1000, 50)
    with pytest.raises(ValueError):
        S.empirical_probe("sag", 1.0, 1.0, 900, 100)


def _collapses(z, iters=50):
    # NAG from x0 = x1 = 1 can land exactly on 0 and stay there
    f = quadratic(1.0)
    st_ = NagState(np.ones(1), np.ones(1), 1, z)
    for _ in range(iters):
        st_ = nag_step(st_, f)
        if st_.x_curr[0] == 0 and st_.x_prev[0] == 0:
            return True
    return False


@pytest.mark.parametrize("scheme", ["nag", "sag"])
def test_probe_agrees_with_analysis(scheme):
    char = S.nag_char if scheme == "nag" else S.sag_char
    boundary = 4 / 3 if scheme == "nag" else 4.0
    for i in range(1, 60):
        z = i / 10
        if abs(z - boundary) <= 0.1 + 1e-12:
            continue
        predicted = "bounded" if S.is_absolutely_stable(char(z)) else "diverged"
        got = S.empirical_probe(scheme, 1.0, z, 1000, 100)
        if scheme == "nag" and got != predicted:
            assert _collapses(z), f"z={z}: {got} vs {predicted}"
            continue
        assert got == predicted, f"z={z}"


def test_nag_collapse_point_is_exact():
    assert _collapses(2.0)
    assert not _collapses(1.9)
