import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bakry_lab.geometry import slack
from bakry_lab.grid import build_manifold
from bakry_lab.heat import CFLError, cfl_bound
from bakry_lab.killing import (
    CRITERIA, killing_cfl_bound, killing_criteria_residual, killing_energy, lie_derivative_sup,
    run_killing_flow,
)


def test_cfl_is_half_the_heat_bound():
    chart = build_manifold("flat_torus", 32)
    assert killing_cfl_bound(chart) == pytest.approx(0.5 * cfl_bound(chart))
    with pytest.raises(CFLError):
        run_killing_flow(chart, ("sin(2*pi*y)", "0"), 0.01, dt=2 * killing_cfl_bound(chart))


def test_spectral_matches_grid_stepping():
    chart = build_manifold("flat_torus", 16)
    X0 = ("sin(2*pi*y)+0.3*cos(4*pi*x)", "0.2*sin(2*pi*(x+y))")
    a = run_killing_flow(chart, X0, 0.05, method="grid")
    b = run_killing_flow(chart, X0, 0.05, method="spectral")
    assert a.nsteps == b.nsteps
    assert np.max(np.abs(a.energy - b.energy)) <= 1e-12 * a.energy[0]
    assert np.max(np.abs(a.final - b.final)) <= 1e-12


def test_shear_mode_decay_oracle():
    # X = (sin 2 pi y, 0) is divergence free, so dX/dt = Delta X on the flat torus
    T = 0.2
    errs = []
    for n in (32, 64):
        chart = build_manifold("flat_torus", n)
        tr = run_killing_flow(chart, ("sin(2*pi*y)", "0"), T)
        exact = math.exp(-4 * math.pi ** 2 * T) * np.sin(2 * np.pi * chart.mesh[1])
        errs.append(np.max(np.abs(tr.final[0] - exact)) + np.max(np.abs(tr.final[1])))
        assert tr.monotone
    assert 3 <= errs[0] / errs[1] <= 5


coef = st.floats(-1, 1)


@given(coef, coef, coef, coef)
def test_energy_dissipation(a, b, c, d):
    chart = build_manifold("flat_torus", 12)
    X0 = (f"{a!r}*sin(2*pi*y)+{b!r}*cos(2*pi*x)", f"{c!r}*sin(2*pi*(x+y))+{d!r}")
    tr = run_killing_flow(chart, X0, 0.02, method="grid", strict=False)
    assert tr.monotone
    assert np.all(np.diff(tr.energy) <= tr.tolerance * max(tr.energy[0], 1e-300))


def test_energy_export(tmp_path):
    chart = build_manifold("flat_torus", 12)
    tr = run_killing_flow(chart, ("sin(2*pi*y)", "0"), 0.01)
    p = tr.export_energy(tmp_path / "e.txt")
    data = np.loadtxt(p)
    np.testing.assert_allclose(data[:, 1], tr.energy)
    np.testing.assert_allclose(data[:, 0], tr.times)


def test_constant_field_is_killing_on_torus():
    chart = build_manifold("flat_torus", 16)
    X = ("1", "0.5")
    assert killing_energy(chart, X) == 0
    assert lie_derivative_sup(chart, X) == 0
    for which in CRITERIA:
        assert killing_criteria_residual(chart, X, which, f="sin(2*pi*x)")[1] == 0


def test_shear_field_fails_criteria():
    chart = build_manifold("flat_torus", 16)
    for which in ("critical_point", "self_drift"):
        assert killing_criteria_residual(chart, ("sin(2*pi*y)", "0"), which)[1] > 1


@pytest.mark.parametrize("which", CRITERIA)
def test_rotation_satisfies_criteria_on_sphere_band(which):
    for n in (16, 32):
        chart = build_manifold("sphere_band", n)
        sup = killing_criteria_residual(chart, ("0", "1"), which, f="cos(theta)")[1]
        assert sup <= slack(chart)


def test_unknown_criterion():
    with pytest.raises(ValueError):
        killing_criteria_residual(build_manifold("flat_torus", 8), ("1", "0"), "eq_zero")
