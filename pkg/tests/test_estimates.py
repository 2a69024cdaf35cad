import dataclasses
import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from bakry_lab import estimates as E
from bakry_lab.geometry import make_setup
from bakry_lab.grid import build_manifold
from bakry_lab.heat import solve_semilinear, solve_v_harmonic

TR = (0.01, 1.0)


def _scaled(run, c):
    """The same heat run for initial data c*u0 (the equation is linear)."""
    return dataclasses.replace(run, frames={k: c * v for k, v in run.frames.items()},
                               min_u=c * run.min_u, max_u=c * run.max_u, mass=c * run.mass)


# right-hand sides ------------------------------------------------------------


def test_cutoff_constants_brute_force():
    x = sp.Symbol("x")
    P = 10 * x ** 3 - 15 * x ** 4 + 6 * x ** 5
    phi = 1 - P
    d1, d2 = sp.diff(phi, x), sp.diff(phi, x, 2)
    xs = np.linspace(0, 0.999, 2_000_001)
    f1 = sp.lambdify(x, d1 ** 2 / phi, "numpy")
    g2 = sp.lambdify(x, -d2, "numpy")
    # stationary points of the symbolic objectives, seeded by a brute-force scan
    c1_seed = xs[np.argmax(f1(xs))]
    c1 = math.sqrt(float(f1(sp.nsolve(sp.diff(d1 ** 2 / phi, x), x, c1_seed))))
    c2_roots = sp.solve(sp.diff(-d2, x), x)
    c2 = max(float(-d2.subs(x, r)) for r in c2_roots if 0 <= r <= 1)
    got = E.cutoff_constants()
    assert got.C1 == pytest.approx(c1, rel=1e-6)
    assert got.C2 == pytest.approx(c2, rel=1e-6)
    assert c2 == pytest.approx(10 / math.sqrt(3), rel=1e-12)
    assert float(np.max(g2(xs))) == pytest.approx(c2, rel=1e-6)


def test_hamilton_sharp_limit():
    t = sp.Symbol("t", positive=True)
    K = sp.Symbol("K", positive=True)
    sharp = 2 * K / (sp.exp(2 * K * t) - 1) + 2 * K
    assert sp.limit(sharp, K, 0) == 1 / t
    for Kv, tv in ((0.0, 0.3), (1e-12, 0.3), (0.7, 0.05), (3.0, 2.0)):
        ref = 1 / tv if Kv == 0 else float(sharp.evalf(40, subs={K: sp.Float(Kv, 40), t: sp.Float(tv, 40)}))
        assert E.hamilton_rhs_factor(Kv, tv) == pytest.approx(ref, rel=1e-10)


@given(st.floats(0, 20), st.floats(1e-3, 10))
def test_sharp_factor_below_weak(K, t):
    assert E.hamilton_rhs_factor(K, t, "sharp") <= E.hamilton_rhs_factor(K, t, "weak") * (1 + 1e-12)


@given(st.floats(2, 50), st.floats(2, 50), st.floats(0, 10), st.floats(1e-3, 10),
       st.sampled_from([2, 3, 5]))
def test_li_yau_rhs_monotone_in_alpha(a1, a2, K, t, n):
    lo, hi = sorted((a1, a2))
    assert E.li_yau_corollary_rhs(n, lo, K, t) <= E.li_yau_corollary_rhs(n, hi, K, t)


def test_li_yau_rhs_values():
    assert E.li_yau_corollary_rhs(2, 2, 0.0, 0.5) == pytest.approx(2 * 4 / 1.0)
    assert E.li_yau_corollary_rhs(3, 4, 1.0, 1.0) == pytest.approx(3 * 16 / 3 + 3 * 16 / 2)
    with pytest.raises(ValueError):
        E.li_yau_corollary_rhs(2, 1.0, 0.0, 1.0)


_curv = st.floats(0, 5)


@given(_curv, _curv, _curv, _curv, st.sampled_from([(2, 2.0), (2, 3.0), (3, 4.5)]))
def test_hessian_constant_monotone(K, K1, K2, V2, mn):
    m, n = mn
    b = E.hessian_B(m, n, K, K1, K2, V2)
    assert b >= 0
    assert E.hessian_B(m, n, K + 1, K1, K2, V2) >= b
    assert E.hessian_B(m, n, K, K1 + 1, K2, V2) >= b
    assert E.hessian_B(m, n, K, K1, K2 + 1, V2) >= b
    assert E.hessian_B(2, 2.0, 0, 0, 0, 0) == 0


def test_local_rhs_readings_coincide_for_nonnegative_a():
    kw = dict(n=2, alpha=2.0, eps=0.5, a=0.0, K=0.1, R=0.2, theta=0.0, gamma=0.0, t=0.1)
    assert E.li_yau_local_rhs(**kw) == E.li_yau_local_rhs(**kw, reading="corrected")
    kw["a"] = -1.0
    assert E.li_yau_local_rhs(**kw) > E.li_yau_local_rhs(**kw, reading="corrected")


# checks on heat runs --------------------------------------------------------


@pytest.mark.parametrize("variant", ["sharp", "weak", "prop511"])
def test_hamilton_holds(torus_run, variant):
    rep = E.check_hamilton(torus_run, variant=variant, A=1.5, t_range=TR)
    assert rep.passed and rep.margin >= -rep.slack


def test_hamilton_sharp_not_looser_than_weak(torus_run_drift):
    s = E.check_hamilton(torus_run_drift, variant="sharp", A=1.5, t_range=TR)
    w = E.check_hamilton(torus_run_drift, variant="weak", A=1.5, t_range=TR)
    assert s.params["K"] > 0
    assert s.margin <= w.margin + 1e-12


def test_hamilton_rejects_small_A(torus_run):
    with pytest.raises(ValueError):
        E.check_hamilton(torus_run, A=1.0, t_range=TR)


@given(st.floats(0.1, 10))
def test_scaling_invariance(torus_run, c):
    a = E.check_hamilton(torus_run, A=1.5, t_range=TR, refine_violations=False)
    b = E.check_hamilton(_scaled(torus_run, c), A=1.5 * c, t_range=TR, refine_violations=False)
    assert b.margin == pytest.approx(a.margin, rel=1e-9, abs=1e-9)
    ly = E.check_li_yau(torus_run, alpha=2.0, t_range=TR, refine_violations=False)
    ly2 = E.check_li_yau(_scaled(torus_run, c), alpha=2.0, t_range=TR, refine_violations=False)
    assert ly2.margin == pytest.approx(ly.margin, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("alpha", [2.0, 4.0])
def test_li_yau_corollary(torus_run_drift, alpha):
    rep = E.check_li_yau(torus_run_drift, alpha=alpha, t_range=TR)
    assert rep.passed


def test_li_yau_compact_and_local(torus_run):
    assert E.check_li_yau(torus_run, variant="compact", t_range=TR).passed
    rep = E.check_li_yau(torus_run, variant="local", ball=((0.5, 0.5), 0.2), t_range=TR)
    assert rep.passed


def test_hessian_global(torus_run):
    rep = E.check_hessian(torus_run, variant="a", A=1.5, t_range=TR)
    assert rep.passed


def test_hessian_local_constant_stable(torus_run):
    rep = E.check_hessian(torus_run, variant="b", A=1.5,
                          cube=dict(x0=(0.5, 0.5), R=0.2, t0=0.5, T=0.4))
    assert rep.passed


# elliptic checks ------------------------------------------------------------


@pytest.fixture(scope="module")
def poisson_disk():
    chart = build_manifold("hyperbolic_disk", 32)
    setup = make_setup(chart)
    sol = solve_v_harmonic(chart, setup, boundary_data="(1-x^2-y^2)/((x-1)^2+y^2)", tol=1e-10)
    return chart, setup, sol


@pytest.mark.parametrize("mode", ["local", "harnack"])
def test_cheng_yau_poisson_kernel(poisson_disk, mode):
    chart, setup, sol = poisson_disk
    rep = E.check_cheng_yau(chart, setup, sol, mode, x0=(0, 0), r=0.5)
    assert rep.verdict == "holds" and rep.margin > 0


def _semilinear(n_pts):
    chart = build_manifold("flat_torus", n_pts, boundary="dirichlet")
    setup = make_setup(chart, n=3)
    return chart, setup, solve_semilinear(chart, setup, "u", "1+x+y^2", tol=1e-10)


@pytest.fixture(scope="module")
def semilinear_pair():
    return _semilinear(32), _semilinear(64)


def test_gradient_lemma_corrected_reading_holds(semilinear_pair):
    coarse, fine = semilinear_pair
    rep = E.check_lemma_H(*coarse, "u", "1/u", (0.5, 0.5), 0.4, reading="corrected",
                          refine_with=fine)
    assert rep.passed


def test_gradient_lemma_printed_reading_fails(semilinear_pair):
    coarse, fine = semilinear_pair
    rep = E.check_lemma_H(*coarse, "u", "1/u", (0.5, 0.5), 0.4, reading="printed",
                          refine_with=fine)
    assert rep.verdict == "genuine-violation"
    # the violation does not shrink under refinement
    assert rep.extra["violation_order"] < 1.0
    assert rep.extra["displays"]["first_corrected"]["margin"] > 0


def test_gradient_lemma_vacuous_for_constant():
    chart = build_manifold("flat_torus", 16, boundary="dirichlet")
    setup = make_setup(chart, n=3)
    rep = E.check_lemma_H(chart, setup, np.ones(chart.shape), "0", "1", (0.5, 0.5), 0.4)
    assert rep.passed
