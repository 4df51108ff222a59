import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sagopt import core
from sagopt.core import (NagState, SagState, gd_step, nag_step, normalized_recurrence,
                         quadratic, run_optimizer, sag_step, scheme_coefficients)
from sagopt.exceptions import DegenerateSchemeError, DivergenceError

HALF_SQ = quadratic(1.0)


def one(v):
    return np.array([float(v)])


# -- objectives ------------------------------------------------------------

def test_quadratic_gradient_and_lipschitz():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    f = quadratic(A)
    x = np.array([0.3, -1.2])
    np.testing.assert_array_equal(f.grad(x), A @ x)
    assert f.lipschitz == pytest.approx(np.linalg.eigvalsh(A)[-1], rel=1e-14)
    assert f(x) == pytest.approx(0.5 * x @ A @ x, rel=1e-14)
    np.testing.assert_array_equal(f.curvature_at(x), A)


def test_quadratic_rejects_asymmetric():
    with pytest.raises(ValueError):
        quadratic(np.array([[1.0, 2.0], [0.0, 1.0]]))


@pytest.mark.parametrize("name", ["quadratic", "logistic"])
def test_finite_difference_gradient(name):
    rng = np.random.default_rng(3)
    if name == "quadratic":
        B = rng.standard_normal((4, 4))
        f = quadratic(B @ B.T, center=rng.standard_normal(4))
    else:
        A = rng.standard_normal((30, 4))
        f = core.logistic(A, np.sign(rng.standard_normal(30)), ridge=0.1)
    x = rng.standard_normal(4)
    g = f.grad(x)
    for eps in (1e-3, 5e-4):
        for i in range(4):
            e = np.zeros(4)
            e[i] = 1.0
            fd = (f(x + eps * e) - f(x - eps * e)) / (2 * eps)
            assert abs(fd - g[i]) <= 10 * eps ** 2 + 1e-12


def test_logistic_lipschitz_bounds_hessian():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((25, 3))
    f = core.logistic(A, np.sign(rng.standard_normal(25)))
    for _ in range(5):
        H = f.curvature_at(rng.standard_normal(3))
        assert np.linalg.eigvalsh(H)[-1] <= f.lipschitz + 1e-12


# -- steppers --------------------------------------------------------------

def test_nag_first_step():
    st1 = nag_step(NagState(one(1), one(1), 1, 0.1), HALF_SQ)
    assert st1.x_curr[0] == pytest.approx(0.9, abs=1e-15)
    assert st1.x_prev[0] == 1.0 and st1.n == 2


def test_nag_second_step_uses_negative_momentum():
    st2 = nag_step(NagState(one(0.9), one(1), 2, 0.1), HALF_SQ)
    assert st2.x_curr[0] == pytest.approx(0.855, abs=1e-15)
    assert core.nag_momentum(1) == -2 and core.nag_momentum(2) == -0.5


@pytest.mark.parametrize("n", [1, 2, 3, 17])
def test_nag_fixed_point(n):
    f = quadratic(np.array([1.0, 3.0]), center=np.array([2.0, -1.0]))
    xs = np.array([2.0, -1.0])
    out = nag_step(NagState(xs, xs, n, 0.3), f)
    np.testing.assert_array_equal(out.x_curr, xs)


def test_sag_first_step():
    st3 = sag_step(SagState(one(1), one(1), one(1), 2, 0.1), HALF_SQ)
    assert st3.x_curr[0] == pytest.approx(0.975, abs=1e-15)
    assert st3.k == 3 and st3.x_prev[0] == 1.0 and st3.x_prev2[0] == 1.0


def test_sag_weights_at_two():
    (a1, a2, a3), (b1, b2), c = core.sag_weights_exact(2)
    assert (a1, a2, a3) == (Fraction(64, 32), Fraction(-19, 16), Fraction(3, 16))
    assert (b1, b2) == (Fraction(1, 2), Fraction(1, 2))
    assert c == Fraction(1, 4)


def test_sag_fixed_point():
    c = np.array([1.5, -0.5])
    f = quadratic(np.array([2.0, 1.0]), center=c)
    out = sag_step(SagState(c, c, c, 2, 0.7), f)
    np.testing.assert_allclose(out.x_curr, c, rtol=0, atol=1e-15)


def test_sag_weights_affine_exact():
    for k in range(2, 101):
        (a1, a2, a3), (b1, b2), _ = core.sag_weights_exact(k)
        assert a1 + a2 + a3 == 1
        assert b1 + b2 == 1
        fl = core.sag_weights(k)
        for e, v in zip((a1, a2, a3, b1, b2), fl[0] + fl[1]):
            assert abs(float(e) - v) <= 1e-12 * max(1.0, abs(float(e)))


def test_gd_step_examples():
    assert gd_step(one(1), HALF_SQ, 0.1)[0] == pytest.approx(0.9, abs=1e-15)
    assert gd_step(one(1), HALF_SQ, 2.0)[0] == -1.0
    assert gd_step(one(0), HALF_SQ, 0.5)[0] == 0.0
    with pytest.raises(ValueError):
        gd_step(one(1), HALF_SQ, 0.0)


def test_one_gradient_call_per_step():
    f = core.CountingObjective(quadratic(np.array([1.0, 2.0])))
    x = np.array([1.0, 1.0])
    nag_step(NagState(x, x, 1, 0.1), f)
    assert f.grad_calls == 1
    sag_step(SagState(x, x, x, 2, 0.1), f)
    assert f.grad_calls == 2
    gd_step(x, f, 0.1)
    assert f.grad_calls == 3


def test_nonfinite_gradient_raises_with_index():
    bad = core.Objective(1, lambda x: 0.0, lambda x: np.array([np.nan]))
    with pytest.raises(DivergenceError) as info:
        nag_step(NagState(one(1), one(1), 5, 0.1), bad)
    assert info.value.index == 5
    with pytest.raises(DivergenceError):
        sag_step(SagState(one(1), one(1), one(1), 4, 0.1), bad)


def test_state_validation():
    with pytest.raises(ValueError):
        NagState(one(0), one(0), 0, 0.1)
    with pytest.raises(ValueError):
        SagState(one(0), one(0), one(0), 1, 0.1)
    with pytest.raises(ValueError):
        NagState(one(0), one(0), 1, -1.0)


# -- scheme coefficients ---------------------------------------------------

def test_sag_parameter_coefficients():
    c = scheme_coefficients(Fraction(1, 2), 0, 3)
    assert c.alpha == (2, -5, 4, -1)
    assert c.beta == (4, Fraction(-9, 2), 0, Fraction(1, 2))
    assert c.gamma == (0, -3, 3, 0)


def test_zero_parameter_coefficients():
    c = scheme_coefficients(0, 0, 0)
    assert c.beta == (Fraction(9, 2), -6, Fraction(3, 2), 0)
    assert c.gamma == (0, Fraction(-3, 2), 0, Fraction(3, 2))


@given(st.fractions(min_value=-50, max_value=50, max_denominator=1000),
       st.fractions(min_value=-50, max_value=50, max_denominator=1000),
       st.fractions(min_value=-50, max_value=50, max_denominator=1000))
def test_coefficient_sums_vanish(k, m1, m2):
    c = scheme_coefficients(k, m1, m2)
    assert sum(c.alpha) == 0 and sum(c.beta) == 0 and sum(c.gamma) == 0
    assert c.alpha == (2, -5, 4, -1)


def test_float_parameters_become_rationals():
    c = scheme_coefficients(0.5, 0.0, 3.0)
    assert c.k_param == Fraction(1, 2) and c.m2 == 3


def _published(n):
    n = Fraction(n)
    return ((10 * n * n + 9 * n + 6) / (4 * n * n + 8 * n),
            -(4 * n * n + 3) / (2 * n * n + 4 * n),
            (2 * n - 1) / (4 * n + 8),
            -n / (2 * n + 4))


def test_normalized_recurrence_matches_published_form():
    c = scheme_coefficients(*core.SAG_PARAMS)
    for n in range(2, 101):
        assert normalized_recurrence(c, n) == _published(n)


def test_normalized_recurrence_examples():
    c = scheme_coefficients(*core.SAG_PARAMS)
    assert normalized_recurrence(c, 2) == (2, Fraction(-19, 16), Fraction(3, 16), Fraction(-1, 4))
    w = normalized_recurrence(c, 10)
    assert w[:3] == (Fraction(1096, 480), Fraction(-403, 240), Fraction(19, 48))
    assert sum(w[:3]) == 1


def test_normalized_recurrence_limit():
    c = scheme_coefficients(*core.SAG_PARAMS)
    assert normalized_recurrence(c, math.inf) == (Fraction(5, 2), -2, Fraction(1, 2), Fraction(-1, 2))


def test_degenerate_scheme():
    # leading coefficient 2 + (9/2 - k)/n + m1/n^2 vanishes at n=2 for k=17/2, m1=0
    c = scheme_coefficients(Fraction(17, 2), 0, 0)
    with pytest.raises(DegenerateSchemeError):
        normalized_recurrence(c, 2)


def test_sag_stepper_matches_recurrence_weights():
    c = scheme_coefficients(*core.SAG_PARAMS)
    for k in range(2, 30):
        (a1, a2, a3), _, g = core.sag_weights_exact(k)
        w1, w2, w3, gw = normalized_recurrence(c, k)
        assert (a1, a2, a3) == (w1, w2, w3)
        assert g == -gw


# -- driver ----------------------------------------------------------------

def test_nag_beats_gd_on_small_step():
    s = 1e-4
    nag = run_optimizer("nag", HALF_SQ, one(1), s, 10_000)
    gd = run_optimizer("gd", HALF_SQ, one(1), s, 10_000)
    assert abs(nag.final[0]) < abs(gd.final[0])
    assert nag.values[1000] < gd.values[1000]


def test_stationary_start_stops_on_tol():
    tr = run_optimizer("sag", HALF_SQ, one(0), 0.5, 10)
    assert tr.reason == "tol" and len(tr) == 1


def test_sag_bounded_at_large_step():
    tr = run_optimizer("sag", HALF_SQ, one(1), 3.5, 10_000)
    assert tr.reason == "max-iter"
    assert max(abs(x[0]) for x in tr.iterates) < 1e3


def test_nag_diverges_at_large_step():
    tr = run_optimizer("nag", HALF_SQ, one(1), 1.5, 10_000)
    assert tr.reason == "diverged"


def test_trajectory_values_consistent():
    f = quadratic(np.array([1.0, 4.0]))
    tr = run_optimizer("nag", f, np.array([1.0, -1.0]), 0.1, 50)
    assert len(tr.iterates) == len(tr.values)
    for x, v in zip(tr.iterates, tr.values):
        assert v == pytest.approx(f(x), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["gd", "nag", "sag"]),
       st.lists(st.floats(-5, 5), min_size=2, max_size=2),
       st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_translation_equivariance(method, x0, shift):
    A = np.array([1.0, 0.3])
    c = np.asarray(shift)
    x0 = np.asarray(x0)
    base = run_optimizer(method, quadratic(A), x0, 0.5, 60)
    moved = run_optimizer(method, quadratic(A, center=c), x0 + c, 0.5, 60)
    # an exact landing on the minimiser may stop one run early on tol=0
    for a, b in zip(base.iterates, moved.iterates):
        np.testing.assert_allclose(b - c, a, rtol=0, atol=1e-10)


def test_run_optimizer_validation():
    with pytest.raises(ValueError):
        run_optimizer("nag", HALF_SQ, one(1), 0.1, 0)
    with pytest.raises(ValueError):
        run_optimizer("adam", HALF_SQ, one(1), 0.1, 5)
    with pytest.raises(ValueError):
        run_optimizer("nag", HALF_SQ, one(1), 0.1, 5, tol=-1)


def test_t_sequence_momentum():
    m = core.nesterov_t_momentum()
    assert m(1) == 0.0
    t2 = (1 + math.sqrt(5)) / 2
    assert m(2) == pytest.approx(0.0)
    t3 = (1 + math.sqrt(1 + 4 * t2 * t2)) / 2
    assert m(3) == pytest.approx((t2 - 1) / t3, rel=1e-15)
