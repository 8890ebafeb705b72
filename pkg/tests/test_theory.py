import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from drq.geometry import NormBall
from drq.theory import (CLOSED_FORM_TOL, GRID_TOL, REPORT_COLUMNS, PreconditionError, ball_extremum,
                        binary_drq, gaussian_mixture_field, is_wide_local_minimum, linear_field,
                        quadratic_field, random_mixture_field, reports_to_csv, round_label, sharpness,
                        sigmoid_field, verify_monotonicity, verify_strong_convexity_bound)


def test_linear_extrema():
    fld = linear_field([1.0])
    ball = NormBall("l2", [0.5], 0.1)
    lo, hi = ball_extremum(fld, ball, "min"), ball_extremum(fld, ball, "max")
    assert lo.value == pytest.approx(0.4, abs=1e-12) and lo.point == pytest.approx([0.4])
    assert hi.value == pytest.approx(0.6, abs=1e-12) and hi.point == pytest.approx([0.6])


@pytest.mark.parametrize("force_grid", [False, True])
def test_constant_field(force_grid):
    fld = linear_field([0.0, 0.0], 0.7)
    ball = NormBall("linf", [0.1, 0.2], 0.3)
    assert ball_extremum(fld, ball, "min", force_grid=force_grid).value == pytest.approx(0.7)
    assert ball_extremum(fld, ball, "max", force_grid=force_grid).value == pytest.approx(0.7)


@pytest.mark.parametrize("force_grid, tol", [(False, CLOSED_FORM_TOL), (True, GRID_TOL)])
def test_quadratic_extrema(force_grid, tol):
    fld = quadratic_field(1.0, 0.3, [0.0])
    ball = NormBall("l2", [0.0], 0.4)
    hi = ball_extremum(fld, ball, "max", force_grid=force_grid)
    lo = ball_extremum(fld, ball, "min", force_grid=force_grid)
    assert hi.value == pytest.approx(0.46, abs=tol) and abs(hi.point[0]) == pytest.approx(0.4, abs=tol)
    assert lo.value == pytest.approx(0.3, abs=tol) and lo.point == pytest.approx([0.0], abs=1e-6)


@pytest.mark.parametrize("p", ["l2", "linf"])
def test_closed_form_agrees_with_grid_in_2d(p):
    for fld in (quadratic_field(0.5, 0.2, [0.1, -0.2]), linear_field([0.3, -0.4], 0.5),
                sigmoid_field([2.0, 1.0], -0.3)):
        ball = NormBall(p, [0.3, 0.1], 0.25)
        for kind in ("min", "max"):
            exact = ball_extremum(fld, ball, kind).value
            grid = ball_extremum(fld, ball, kind, force_grid=True).value
            assert grid == pytest.approx(exact, abs=GRID_TOL)


def test_binary_drq_linear_examples():
    fld = linear_field([1.0])
    a0 = binary_drq(fld, [0.5], 0.1, 0.0)
    assert a0.u_drq == pytest.approx(0.4, abs=1e-12) and a0.label == 0
    a1 = binary_drq(fld, [0.5], 0.1, 1.0)
    assert a1.u_drq == pytest.approx(0.5, abs=1e-12) and a1.label == 1


def test_round_convention():
    assert round_label(0.5) == 1 and round_label(0.4999999) == 0


def test_bowl_minimum_equality_case():
    res = binary_drq(quadratic_field(1.0, 0.3, [0.0, 0.0]), [0.0, 0.0], 0.4, 0.5)
    assert abs(res.u_drq - 0.34) <= CLOSED_FORM_TOL


@given(st.integers(0, 10_000))
def test_alpha_zero_keeps_the_explored_extremes(seed):
    rng = np.random.default_rng(seed)
    fld = random_mixture_field(rng, dim=1)
    res = binary_drq(fld, rng.uniform(-1, 1, size=1), 0.2, 0.0)
    assert res.quant_0.value == res.explore_min.value
    assert res.quant_1.value == res.explore_max.value


def test_sharpness_examples():
    fld = quadratic_field(1.0, 0.3, [0.0, 0.0])
    assert sharpness(fld, [0.0, 0.0], 0.4, 0.0) == 0.0
    assert sharpness(fld, [0.0, 0.0], 0.4, 0.5) == pytest.approx(0.04, abs=CLOSED_FORM_TOL)
    with pytest.raises(PreconditionError):
        sharpness(linear_field([1.0], 0.2), [0.3], 0.1, 0.5)


@given(st.integers(0, 10_000))
def test_sharpness_is_monotone_in_alpha(seed):
    rng = np.random.default_rng(seed)
    width = rng.uniform(0.1, 0.5)
    fld = gaussian_mixture_field(0.6, [-rng.uniform(0.1, 0.5)], [[0.0, 0.0]], [width])
    eps = rng.uniform(0.05, 0.5)
    g = [sharpness(fld, [0.0, 0.0], eps, a) for a in (0.25, 0.5, 1.0)]
    assert g[0] <= g[1] + GRID_TOL and g[1] <= g[2] + GRID_TOL


@given(st.integers(0, 10_000), st.floats(0.05, 0.5), st.floats(0, 1), st.floats(0, 1))
def test_monotonicity_on_random_fields(seed, eps, a, b):
    rng = np.random.default_rng(seed)
    fld = random_mixture_field(rng)
    rep = verify_monotonicity(fld, rng.uniform(-1, 1, size=fld.dim), eps, min(a, b), max(a, b))
    assert rep.passed, rep.rows()


def test_equal_alphas_give_equalities():
    fld = random_mixture_field(np.random.default_rng(5), dim=2)
    rep = verify_monotonicity(fld, [0.1, 0.2], 0.3, 0.4, 0.4)
    assert rep.checks[0].bound == rep.checks[0].measured
    assert rep.checks[1].bound == rep.checks[1].measured


@pytest.mark.parametrize("mu", [0.25, 0.5, 1.0, 2.0])
@pytest.mark.parametrize("eps", [0.1, 0.2, 0.4])
@pytest.mark.parametrize("alpha", [0.0, 0.25, 0.5, 0.75, 1.0])
def test_strong_convexity_grid(mu, eps, alpha):
    assert verify_strong_convexity_bound(quadratic_field(mu, 0.3, [0.0, 0.0]), [0.0, 0.0], eps, alpha).passed


def test_strong_convexity_preconditions():
    with pytest.raises(PreconditionError):
        verify_strong_convexity_bound(linear_field([1.0, 0.0]), [0.0, 0.0], 0.1, 0.5)
    with pytest.raises(PreconditionError):
        verify_strong_convexity_bound(quadratic_field(1.0, 0.3, [0.0, 0.0]), [0.1, 0.0], 0.1, 0.5)
    with pytest.raises(PreconditionError):
        verify_strong_convexity_bound(quadratic_field(10.0, 0.3, [0.0, 0.0]), [0.0, 0.0], 0.4, 0.5)


def test_wide_minimum_examples():
    assert is_wide_local_minimum(quadratic_field(1.0, 0.3, [0.0]), [0.0], 0.3)
    assert not is_wide_local_minimum(linear_field([1.0], 0.2), [0.3], 0.1)


def test_wide_minimum_matches_analytic_basin():
    # a shallow dip at 0 next to a deeper one at 1: the basin ends where u climbs back to u(0)
    base, a0, a1, s = 0.6, -0.2, -0.35, 0.2
    fld = gaussian_mixture_field(base, [a0, a1], [[0.0], [1.0]], [s, s])
    u = lambda t: base + a0 * np.exp(-t * t / (2 * s * s)) + a1 * np.exp(-(t - 1) ** 2 / (2 * s * s))
    peak = brentq(lambda t: (-a0 * t * np.exp(-t * t / (2 * s * s))
                             - a1 * (t - 1) * np.exp(-(t - 1) ** 2 / (2 * s * s))), 0.1, 0.9)
    basin = brentq(lambda t: u(t) - u(0.0), peak, 1.0)
    assert is_wide_local_minimum(fld, [0.0], 0.98 * basin)
    assert not is_wide_local_minimum(fld, [0.0], 1.02 * basin)


def test_grid_convergence_under_refinement():
    fld = random_mixture_field(np.random.default_rng(11), dim=2)
    ball = NormBall("l2", [0.2, -0.1], 0.3)
    coarse, fine = 0.3 / 50, 0.3 / 100
    for kind in ("min", "max"):
        a = ball_extremum(fld, ball, kind, pitch=coarse).value
        b = ball_extremum(fld, ball, kind, pitch=fine).value
        assert abs(a - b) < 2 * coarse * fld.lipschitz_bound()


def test_report_schema_and_negation():
    rep = verify_monotonicity(linear_field([1.0]), [0.5], 0.1, 0.0, 1.0)
    text = reports_to_csv([rep])
    lines = text.splitlines()
    assert lines[0].split(",") == list(REPORT_COLUMNS) and len(REPORT_COLUMNS) == 9
    assert rep.passed
    assert not rep.checks[0].negated().passed
