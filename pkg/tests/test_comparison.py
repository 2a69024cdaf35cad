import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from bakry_lab.comparison import laplacian_comparison_check, riccati_theta, theta_closed_form
from bakry_lab.geometry import make_setup
from bakry_lab.grid import build_manifold


@pytest.mark.parametrize("K", [-1, 0, 1, sp.Rational(5, 2)])
def test_closed_form_solves_riccati_symbolically(K):
    r, n = sp.symbols("r n", positive=True)
    if K > 0:
        th = (n - 1) * sp.sqrt(K) * sp.cot(sp.sqrt(K) * r)
    elif K < 0:
        th = (n - 1) * sp.sqrt(-K) * sp.coth(sp.sqrt(-K) * r)
    else:
        th = (n - 1) / r
    residual = sp.diff(th, r) + (n - 1) * K + th ** 2 / (n - 1)
    assert sp.simplify(residual.rewrite(sp.exp)) == 0
    assert sp.limit(r * th, r, 0) == n - 1
    f = sp.lambdify((n, r), th)
    for nv, rv in ((2, 0.3), (3, 1.1)):
        assert theta_closed_form(nv, float(K), rv) == pytest.approx(float(f(nv, rv)), rel=1e-12)


@pytest.mark.parametrize("K", [-1, 0, 1])
@pytest.mark.parametrize("n", [2, 3])
def test_profile_matches_closed_form(K, n):
    prof = riccati_theta(n, K, r_max=3.2, dr=1e-4)
    top = min(3.0, 0.9 * prof.delta)
    sel = (prof.r >= 0.1) & (prof.r <= top)
    err = np.max(np.abs(prof.theta[sel] - theta_closed_form(n, K, prof.r[sel])))
    assert err <= 1e-8


def test_explosion_time_positive_curvature():
    prof = riccati_theta(3, 1, r_max=3.5, dr=1e-4)
    assert abs(prof.delta - math.pi) <= 1e-4
    assert math.isinf(riccati_theta(3, 0, r_max=3.0, dr=1e-4).delta)


def test_rk4_order_near_explosion():
    errs = []
    for dr in (1e-3, 5e-4, 2.5e-4):
        prof = riccati_theta(3, 1, r_max=3.0, dr=dr)
        sel = (prof.r >= 1.0) & (prof.r <= 3.0)
        errs.append(np.max(np.abs(prof.theta[sel] - theta_closed_form(3, 1, prof.r[sel]))))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(3.6 <= o <= 4.4 for o in orders)


def test_variable_curvature_profile_callable():
    const = riccati_theta(3, 1.0, r_max=1.0, dr=1e-4)
    var = riccati_theta(3, lambda r: 1.0, r_max=1.0, dr=1e-4)
    np.testing.assert_allclose(var.theta, const.theta, atol=1e-12)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 1.0))
def test_profile_decreasing_in_K(K1, K2, r):
    lo, hi = sorted((K1, K2))
    if hi > 0:
        r = min(r, 0.9 * math.pi / math.sqrt(hi))
    assert theta_closed_form(3, hi, r) <= theta_closed_form(3, lo, r) + 1e-12


@pytest.mark.parametrize("name, p0, r_range", [
    ("flat_torus", (0.5, 0.5), (0.1, 0.2)),
    ("sphere_band", (1.2, 3.14), (0.1, 0.3)),
    ("hyperbolic_disk", (0.0, 0.0), (0.1, 0.3)),
])
def test_model_space_equality(name, p0, r_range):
    chart = build_manifold(name, 64)
    rep = laplacian_comparison_check(chart, make_setup(chart), p0, r_range)
    assert rep.passed, rep
    coarse = rep.extra["coarse"]
    if coarse["margin"] < 0:
        # refined: the equality defect shrinks at order >= 1
        assert rep.extra["violation_order"] >= 1.0


def test_wrong_curvature_is_genuine_violation():
    chart = build_manifold("flat_torus", 32)
    rep = laplacian_comparison_check(chart, make_setup(chart), (0.5, 0.5), (0.1, 0.2), K=4.0)
    assert rep.verdict == "genuine-violation"


def test_comparison_rejects_cut_locus():
    chart = build_manifold("flat_torus", 32)
    with pytest.raises(ValueError):
        laplacian_comparison_check(chart, make_setup(chart), (0.5, 0.5), (0.1, 0.3))
