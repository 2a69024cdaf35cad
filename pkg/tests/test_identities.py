import numpy as np
import pytest

from bakry_lab.geometry import make_setup
from bakry_lab.grid import build_manifold
from bakry_lab.heat import run_weighted_heat
from bakry_lab.identities import (
    bochner_residual, bochner_terms, hessian_evolution_residual, parabolic_identity_residual,
    refinement_charts,
)
from bakry_lab.records import residual_report


def test_constant_field_is_exact():
    chart = build_manifold("flat_torus", 16)
    rep = bochner_residual(chart, make_setup(chart, potential="cos(2*pi*y)"), "3", levels=2)
    assert rep.exact and rep.passed and rep.order is None


def test_linear_field_on_flat_torus_exact_hessian():
    chart = build_manifold("flat_torus", 16, boundary="dirichlet")
    terms = bochner_terms(chart, make_setup(chart), "2*x+y")
    assert np.max(np.abs(terms["hess2"])) < 1e-20


@pytest.mark.parametrize("kw", [{}, {"potential": "cos(2*pi*y)"}, {"V": ("sin(2*pi*y)", "0")}])
def test_bochner_second_order_on_torus(kw):
    chart = build_manifold("flat_torus", 16)
    rep = bochner_residual(chart, make_setup(chart, **kw),
                           "sin(2*pi*x)+0.5*cos(2*pi*y)*sin(2*pi*x)", levels=3)
    assert rep.passed
    assert 1.8 <= rep.order <= 2.2


def test_refinement_charts_halve_h():
    charts = refinement_charts(build_manifold("sphere_band", 16), 3)
    hs = [c.h for c in charts]
    assert hs[0] / hs[1] == pytest.approx(2, rel=0.1)
    assert hs[1] / hs[2] == pytest.approx(2, rel=0.1)


def test_residual_report_calibration():
    hs = [0.1, 0.05, 0.025]
    rep = residual_report("demo", hs, [4e-2, 1e-2, 2.5e-3], [0, 0, 0])
    assert rep.passed and rep.order == pytest.approx(2.0)
    stalled = residual_report("demo", hs, [4e-2, 1e-2, 9e-3], [0, 0, 0])
    assert not stalled.passed


@pytest.fixture(scope="module")
def small_run():
    chart = build_manifold("flat_torus", 16)
    setup = make_setup(chart, potential="cos(2*pi*y)")
    return run_weighted_heat(chart, setup, "1.5+0.5*sin(2*pi*x)*cos(2*pi*y)", T=0.05,
                             snapshot_times=[0.01, 0.02, 0.05])


def test_parabolic_identity(small_run):
    rep = parabolic_identity_residual(small_run, levels=3)
    assert rep.passed
    assert rep.order >= 1.5


def test_hessian_evolution_identity(small_run):
    rep = hessian_evolution_residual(small_run, levels=3)
    assert rep.passed
    assert rep.order >= 1.5
