import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from bakry_lab.fields import (
    covariant_hessian, gradient, laplace_beltrami, sample, v_laplacian, v_laplacian_density,
)
from bakry_lab.geometry import make_setup
from bakry_lab.grid import build_manifold, interior_mask
from bakry_lab.heat import (
    CFLError, cfl_bound, read_raster, rerun, run_weighted_heat, solve_v_harmonic, write_raster,
)


def test_sphere_harmonic_eigenvalue():
    errs = []
    for n in (32, 64):
        chart = build_manifold("sphere_band", n)
        theta = chart.mesh[0]
        lap = laplace_beltrami(chart, np.cos(theta)).values
        m = interior_mask(chart, 0.3)
        errs.append(np.max(np.abs(lap + 2 * np.cos(theta))[m]))
    assert 3 <= errs[0] / errs[1] <= 5


def test_hyperbolic_coordinate_function_laplacian():
    # Delta x = (1-r^2)^2/4 * Delta_flat x + (1-r^2)/2 * x * 0 ... computed from the conformal factor
    chart = build_manifold("hyperbolic_disk", 64)
    x, y = chart.mesh
    r2 = x * x + y * y
    # conformal metric 4/(1-r^2)^2 delta in 2D: Delta u = ((1-r^2)^2/4) Delta_flat u
    u = x * y
    lap = laplace_beltrami(chart, u).values
    m = interior_mask(chart, 4 * chart.h)
    assert np.max(np.abs(lap)[m]) < 1e-10  # xy is flat-harmonic
    u = x * x
    lap = laplace_beltrami(chart, u).values
    assert np.max(np.abs(lap - (1 - r2) ** 2 / 2)[m]) < 1e-10


def test_v_laplacian_forms_agree():
    chart = build_manifold("flat_torus", 64)
    setup = make_setup(chart, potential="cos(2*pi*y)")
    u = sample(chart, "sin(2*pi*x)*cos(2*pi*y)")
    a = v_laplacian(chart, setup, u).values
    b = v_laplacian_density(chart, setup, u).values
    assert np.max(np.abs(a - b)) < 10 * chart.h ** 2 * np.max(np.abs(a))


def test_hessian_trace_is_laplacian():
    chart = build_manifold("sphere_band", 32)
    u = sample(chart, "cos(theta)+0.3*sin(theta)*cos(phi)")
    H = covariant_hessian(chart, u).values
    tr = np.einsum("ij...,ij...->...", chart.metric_inv, H)
    lap = laplace_beltrami(chart, u).values
    m = interior_mask(chart, 0.3)
    assert np.max(np.abs(tr - lap)[m]) < 10 * chart.h ** 2 * np.max(np.abs(lap))


def test_gradient_is_upper_index():
    chart = build_manifold("sphere_band", 32)
    g = gradient(chart, sample(chart, "cos(phi)")).values
    theta, phi = chart.mesh
    m = interior_mask(chart, 0.3)
    assert np.max(np.abs(g[1] + np.sin(phi) / np.sin(theta) ** 2)[m]) < 1e-2


def test_heat_fourier_mode_oracle():
    errs = []
    for n in (16, 32):
        chart = build_manifold("flat_torus", n)
        run = run_weighted_heat(chart, make_setup(chart), "1+0.5*sin(2*pi*x)", T=0.1)
        x = chart.mesh[0]
        exact = 1 + 0.5 * math.exp(-4 * math.pi ** 2 * 0.1) * np.sin(2 * np.pi * x)
        errs.append(np.max(np.abs(run.final - exact)))
    assert 3 <= errs[0] / errs[1] <= 5


def test_absorption_ode():
    chart = build_manifold("flat_torus", 8)
    exact = math.exp(math.exp(-1.0))  # u' = -u ln u, u(0) = e
    errs = []
    for dt in (2e-3, 1e-3):
        run = run_weighted_heat(chart, make_setup(chart), math.e, T=1.0, dt=dt, a=1.0)
        errs.append(abs(run.final[0, 0] - exact))
    assert errs[1] < 1e-5
    assert 3.5 <= errs[0] / errs[1] <= 4.5  # second order in time


def test_weighted_mass_conserved():
    chart = build_manifold("flat_torus", 32)
    setup = make_setup(chart, potential="cos(2*pi*y)")
    run = run_weighted_heat(chart, setup, "1+0.5*sin(2*pi*x)*cos(2*pi*y)", T=0.1)
    assert abs(run.mass[-1] - run.mass[0]) / run.mass[0] < 1e-10


def test_cfl_violation_raises():
    chart = build_manifold("flat_torus", 32)
    with pytest.raises(CFLError):
        run_weighted_heat(chart, make_setup(chart), "1", T=0.1, dt=10 * cfl_bound(chart))


def test_rerun_doubles_resolution(torus_run):
    fine = rerun(torus_run, torus_run.chart.rebuild(64))
    assert fine.chart.shape == (64, 64)
    np.testing.assert_allclose(fine.times, torus_run.times, atol=2 * fine.dt)


def test_poisson_kernel_is_harmonic():
    chart = build_manifold("hyperbolic_disk", 32)
    P = "(1-x^2-y^2)/((x-1)^2+y^2)"
    sol = solve_v_harmonic(chart, make_setup(chart), boundary_data=P, u0=1.0)
    x, y = chart.mesh
    exact = (1 - x * x - y * y) / ((x - 1) ** 2 + y * y)
    assert np.max(np.abs(sol.values - exact)) < 10 * chart.h ** 2 * np.max(exact)


@given(arrays(np.float64, array_shapes(min_dims=1, max_dims=3, max_side=5),
              elements=st.floats(allow_nan=False)))
def test_raster_round_trip(tmp_path_factory, arr):
    p = tmp_path_factory.mktemp("raster") / "a.f64"
    write_raster(p, arr)
    np.testing.assert_array_equal(read_raster(p), arr)
