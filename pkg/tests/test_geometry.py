import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from bakry_lab.geometry import (
    bakry_emery, christoffel, curvature_bounds, generalized_eigvalsh, jacobi_eigvalsh,
    lie_derivative_metric, make_setup, riemann_ricci_scalar, slack, tensor_norm,
)
from bakry_lab.grid import build_manifold, diff1, diff2, interior_mask

X, Y = sp.symbols("x y", real=True)


def _sym_geometry(g, coords):
    """Christoffel symbols and Ricci tensor by direct symbolic differentiation."""
    m = len(coords)
    gi = g.inv()
    G = [[[sp.simplify(sum(gi[k, l] * (sp.diff(g[j, l], coords[i]) + sp.diff(g[i, l], coords[j])
                                       - sp.diff(g[i, j], coords[l])) for l in range(m)) / 2)
           for j in range(m)] for i in range(m)] for k in range(m)]

    def rup(l, i, j, k):
        return (sp.diff(G[l][j][k], coords[i]) - sp.diff(G[l][i][k], coords[j])
                + sum(G[l][i][p] * G[p][j][k] - G[l][j][p] * G[p][i][k] for p in range(m)))

    ric = sp.Matrix(m, m, lambda j, k: sp.simplify(sum(rup(i, i, j, k) for i in range(m))))
    return G, ric


def _hess(G, f, coords):
    m = len(coords)
    return sp.Matrix(m, m, lambda i, j: sp.diff(f, coords[i], coords[j])
                     - sum(G[k][i][j] * sp.diff(f, coords[k]) for k in range(m)))


@pytest.fixture(scope="module")
def cigar_symbolic():
    g = sp.eye(2) / (1 + X ** 2 + Y ** 2)
    G, ric = _sym_geometry(g, [X, Y])
    R = sp.simplify(sum(g.inv()[j, k] * ric[j, k] for j in range(2) for k in range(2)))
    return g, G, ric, R


def test_cigar_scalar_curvature_symbolic(cigar_symbolic):
    _, _, _, R = cigar_symbolic
    assert sp.simplify(R - 4 / (1 + X ** 2 + Y ** 2)) == 0


def test_soliton_potential_sign_symbolic(cigar_symbolic):
    # Ric - Hess f vanishes for f = +log(1+x^2+y^2) in these coordinates
    _, G, ric, _ = cigar_symbolic
    plus = sp.simplify(ric - _hess(G, sp.log(1 + X ** 2 + Y ** 2), [X, Y]))
    minus = sp.simplify(ric - _hess(G, -sp.log(1 + X ** 2 + Y ** 2), [X, Y]))
    assert plus == sp.zeros(2, 2)
    assert minus != sp.zeros(2, 2)


def test_christoffel_matches_symbolic(cigar_symbolic):
    _, G, _, _ = cigar_symbolic
    chart = build_manifold("cigar", resolution=16)
    gam = christoffel(chart).values
    x, y = chart.mesh
    for k in range(2):
        for i in range(2):
            for j in range(2):
                f = sp.lambdify((X, Y), G[k][i][j], "numpy")
                exact = np.broadcast_to(f(x, y), chart.shape)
                np.testing.assert_allclose(gam[k, i, j], exact, atol=1e-13)


def test_cigar_curvature_halving_ratio():
    errs = []
    for n in (64, 128):
        chart = build_manifold("cigar", resolution=n)
        x, y = chart.mesh
        R = riemann_ricci_scalar(chart)[2].values
        errs.append(np.max(np.abs(R - 4 / (1 + x * x + y * y))))
        assert errs[-1] <= 10 * chart.h ** 2 * 4
    assert 3 <= errs[0] / errs[1] <= 5


def test_soliton_kernel_order():
    sups, hs = [], []
    for n in (32, 64, 128):
        chart = build_manifold("cigar", resolution=n)
        setup = make_setup(chart, potential="log(1+x^2+y^2)")
        ricv = bakry_emery(chart, setup)[0].values
        sups.append(np.sqrt(tensor_norm(chart, ricv, "ll", squared=True)).max())
        hs.append(chart.h)
    order = math.log(sups[1] / sups[2]) / math.log(hs[1] / hs[2])
    assert 1.8 <= order <= 2.2


@pytest.mark.parametrize("name, sign, layer", [("sphere_band", 1.0, 0.3),
                                               ("hyperbolic_disk", -1.0, 0.1)])
def test_model_space_ricci(name, sign, layer):
    # fixed physical interior: the band metric degenerates towards theta_min
    errs = []
    for n in (32, 64):
        chart = build_manifold(name, resolution=n)
        ric = riemann_ricci_scalar(chart)[1].values
        m = interior_mask(chart, layer)
        errs.append(np.max(np.abs(ric - sign * chart.metric)[:, :, m]))
    assert 3 <= errs[0] / errs[1] <= 5


def test_flat_torus_curvature_vanishes():
    chart = build_manifold("flat_torus", 16)
    b = curvature_bounds(chart, make_setup(chart))
    assert b.K_plain == 0 and b.K_ricv == 0 and b.K1 == 0 and b.supV2 == 0


def test_rotation_is_killing_on_sphere_band():
    sups = []
    for n in (32, 64):
        chart = build_manifold("sphere_band", n)
        L = lie_derivative_metric(chart, make_setup(chart, V="rotation").V.values).values
        sups.append(np.max(np.abs(L)))
        assert sups[-1] <= slack(chart)
    assert 3 <= sups[0] / sups[1] <= 5


def test_difference_orders():
    errs1, errs2 = [], []
    for n in (32, 64):
        chart = build_manifold("flat_torus", n)
        x, _ = chart.mesh
        u = np.sin(2 * np.pi * x)
        errs1.append(np.max(np.abs(diff1(chart, u, 0) - 2 * np.pi * np.cos(2 * np.pi * x))))
        errs2.append(np.max(np.abs(diff2(chart, u, 0) + 4 * np.pi ** 2 * u)))
    assert 3.8 < errs1[0] / errs1[1] < 4.2
    assert 3.8 < errs2[0] / errs2[1] < 4.2


def test_slack_formula():
    assert slack(0.1) == pytest.approx(10 * 0.01)
    assert slack(0.1, c_slack=2.0, scale=5.0) == pytest.approx(2 * 0.01 * 5)
    assert slack(0.1, scale=0.2) == slack(0.1)


def _sym(n):
    return arrays(np.float64, (n, n), elements=st.floats(-10, 10)).map(lambda a: (a + a.T) / 2)


@given(st.integers(1, 4).flatmap(_sym))
def test_jacobi_matches_lapack(S):
    np.testing.assert_allclose(jacobi_eigvalsh(S[None])[0], np.linalg.eigvalsh(S),
                               atol=1e-9 * max(1.0, np.abs(S).max()))


@given(st.integers(1, 3).flatmap(_sym), st.integers(0, 2 ** 32 - 1))
def test_generalized_eigenvalues(T, seed):
    rng = np.random.default_rng(seed)
    n = T.shape[0]
    A = rng.normal(size=(n, n))
    g = A @ A.T + n * np.eye(n)
    lam = np.sort(generalized_eigvalsh(T, g).ravel())
    L = np.linalg.cholesky(g)
    Li = np.linalg.inv(L)
    ref = np.linalg.eigvalsh(Li @ T @ Li.T)
    np.testing.assert_allclose(lam, ref, atol=1e-9 * max(1.0, np.abs(T).max()))
