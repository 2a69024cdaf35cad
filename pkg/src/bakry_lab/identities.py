"""Pointwise differential identities checked as discretization residuals.

Each check evaluates both sides of an identity with the discrete operators
at two or more resolutions.  Equalities must have residuals decaying at
order >= 1.5 in h; one-sided inequalities must hold up to slack(h).
Residuals are measured on an interior region whose distance to closed
chart boundaries is a fixed physical layer, so nested one-sided stencils
never enter the norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .fields import _v_lap, covariant_hessian, sample
from .geometry import (
    BakryEmerySetup,
    bakry_emery,
    covariant_derivative,
    generalized_eigvalsh,
    raise_,
    riemann_ricci_scalar,
    slack,
    tensor_norm,
)
from .grid import ManifoldChart, interior_mask, partials
from .heat import HeatRun, rerun
from .records import ResidualReport, residual_report

__all__ = [
    "bochner_residual",
    "bochner_terms",
    "parabolic_identity_residual",
    "li_yau_quantity_margin",
    "hessian_evolution_residual",
    "tensor_v_laplacian",
    "refinement_charts",
]

MASK_GRADIENT = 1e-8


# Shared helpers ---------------------------------------------------------------


def refinement_charts(chart: ManifoldChart, levels: int) -> list[ManifoldChart]:
    """``chart`` followed by ``levels - 1`` successive doublings of its resolution."""
    if levels < 2:
        raise ValueError("at least two resolutions are needed")
    out = [chart]
    shape = chart.params.get("resolution", chart.shape[0])
    for k in range(1, levels):
        if isinstance(shape, (tuple, list)):
            res = tuple(int(s) * 2**k for s in shape)
        else:
            res = int(shape) * 2**k
        out.append(chart.rebuild(res))
    return out


def _default_layer(chart: ManifoldChart) -> float:
    """Physical layer of four coarse cells."""
    return 4.0 * chart.h


def _mask(chart: ManifoldChart, layer: float) -> np.ndarray:
    if chart.periodic:
        return np.ones(chart.shape, dtype=bool)
    return interior_mask(chart, layer)


def _norms(chart: ManifoldChart, r: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    if not mask.any():
        return 0.0, 0.0
    w = chart.quadrature_weights * mask
    sup = float(np.max(np.abs(r[mask])))
    l2 = math.sqrt(float(np.sum(w * r * r)) / float(np.sum(w)))
    return sup, l2


def _contract(T, X, Y):
    return np.einsum("ij...,i...,j...->...", T, X, Y)


def tensor_v_laplacian(chart: ManifoldChart, setup: BakryEmerySetup, T, variance: str) -> np.ndarray:
    """Delta_V T = g^{ab} nabla_a nabla_b T + V^a nabla_a T for a tensor field."""
    D1 = covariant_derivative(chart, T, variance)
    D2 = covariant_derivative(chart, D1, "l" + variance)
    out = np.einsum("ab...,ab...->...", chart.metric_inv, D2)
    if not setup.zero_drift:
        out = out + np.einsum("a...,a...->...", setup.V.values, D1)
    return out


# Bochner family ---------------------------------------------------------------


def bochner_terms(chart: ManifoldChart, setup: BakryEmerySetup, u) -> dict:
    """All terms of the V-Bochner formula and its refinements on one grid."""
    u = sample(chart, u)
    du = partials(chart, u)
    gu = raise_(chart, du)
    grad2 = np.einsum("i...,i...->...", du, gu)
    H = covariant_hessian(chart, u).values
    ricv, ricnm, _ = bakry_emery(chart, setup)
    lapv = _v_lap(chart, setup, u, "trace")
    t = {
        "lhs": 0.5 * _v_lap(chart, setup, grad2, "trace"),
        "hess2": tensor_norm(chart, H, "ll", squared=True),
        "ricv": _contract(ricv.values, gu, gu),
        "ricnm": _contract(ricnm.values, gu, gu),
        "cross": np.einsum("i...,i...->...", partials(chart, lapv), gu),
        "lapv": lapv,
        "grad2": grad2,
    }
    t["vdu2"] = (np.einsum("i...,i...->...", setup.V.values, du) ** 2 / setup.nm_gap
                 if not setup.zero_drift else np.zeros(chart.shape))
    # gradient-norm identities (V-harmonic u)
    s = np.sqrt(grad2)
    ds = partials(chart, s)
    t["gradnorm"] = s
    t["gradnorm_lap"] = s * _v_lap(chart, setup, s, "trace")
    t["gradgrad2"] = np.einsum("i...,i...->...", ds, raise_(chart, ds))
    return t


def _source_on(src, chart):
    if isinstance(src, np.ndarray):
        raise TypeError("test fields must be expressions or callables so they can be refined")
    return sample(chart, src)


@dataclass
class _Level:
    chart: ManifoldChart
    setup: BakryEmerySetup
    mask: np.ndarray
    terms: dict


def bochner_residual(
    chart: ManifoldChart,
    setup: BakryEmerySetup,
    u,
    levels: int = 3,
    layer: float | None = None,
    harmonic: bool | None = None,
    c_slack: float = 10.0,
    tol_ell: float = 1e-8,
) -> ResidualReport:
    """Residual of the V-Bochner formula and its companion statements.

    The returned report tracks the equality
    (1/2) Delta_V |grad u|^2 = |Hess u|^2 + Ric_V(grad u, grad u) + <grad Delta_V u, grad u>.
    Its ``extra`` holds the dimensional equality with Ric_V^{n,m}, the
    one-sided inequalities, the algebraic consistency between the two
    equalities and, for V-harmonic u, the gradient-norm identity and
    inequality with their masked fraction.  ``passed`` is the conjunction
    of every sub-check.

    Parameters
    ----------
    u : expression or callable(chart)
        Test field, re-sampled at every resolution.
    levels : int
        Number of resolutions (successive doublings of ``chart``).
    layer : float, optional
        Physical width excluded next to closed boundaries; default four
        coarse cells.
    harmonic : bool, optional
        Whether u solves Delta_V u = 0.  ``None`` detects it from the
        discrete residual; ``True`` raises if the residual is too large.
    """
    layer = _default_layer(chart) if layer is None else layer
    lv = []
    for c in refinement_charts(chart, levels):
        s = setup if c is chart else setup.on(c)
        lv.append(_Level(c, s, _mask(c, layer), bochner_terms(c, s, _source_on(u, c))))
    hs = [L.chart.h for L in lv]
    fin = lv[-1]
    scale = max(float(np.max(np.abs(fin.terms[k][fin.mask]))) if fin.mask.any() else 0.0
                for k in ("lhs", "hess2", "ricv", "cross"))

    def eq_report(name, fn, mask_fn=None):
        sups, l2s = [], []
        for L in lv:
            m = L.mask if mask_fn is None else mask_fn(L)
            r = fn(L.terms)
            s_, l_ = _norms(L.chart, r, m)
            sups.append(s_)
            l2s.append(l_)
        return residual_report(name, hs, sups, l2s, scale=scale, c_slack=c_slack)

    def ineq(name, fn, c_used, mask_fn=None):
        # slack constant shared with the calibrated companion equality
        rows = []
        for L in lv:
            m = L.mask if mask_fn is None else mask_fn(L)
            marg = fn(L.terms)[m]
            worst = float(np.min(marg)) if marg.size else math.inf
            sl = slack(L.chart, c_used, scale)
            rows.append({"h": L.chart.h, "margin": worst, "slack": sl})
        ok = rows[-1]["margin"] >= -rows[-1]["slack"]
        return {"identity": name, "levels": rows, "passed": bool(ok)}

    main = eq_report("bochner_v", lambda t: t["lhs"] - (t["hess2"] + t["ricv"] + t["cross"]))
    nm_eq = eq_report(
        "bochner_dimensional_equality",
        lambda t: t["lhs"] - (t["hess2"] + t["ricnm"] + t["cross"] + t["vdu2"]),
    )
    # the two equalities differ by an algebraic expression that vanishes identically
    cons = max(
        float(np.max(np.abs(
            (L.terms["ricv"] - L.terms["ricnm"] - L.terms["vdu2"])[L.mask]
        ))) if L.mask.any() else 0.0
        for L in lv
    )
    cons_ok = cons <= 1e-10 * max(scale, 1.0)
    n = setup.n
    dim_ineq = ineq("bochner_dimensional_inequality",
                    lambda t: t["lhs"] - (t["lapv"] ** 2 / n + t["ricnm"] + t["cross"]),
                    main.c_slack)
    hess_ineq = ineq("bochner_hessian_inequality",
                     lambda t: t["lhs"] - (t["hess2"] + t["ricnm"] + t["cross"]),
                     main.c_slack)
    extra = {
        "dimensional_equality": nm_eq.to_dict(),
        "consistency_defect": cons,
        "consistency_passed": bool(cons_ok),
        "dimensional_inequality": dim_ineq,
        "hessian_inequality": hess_ineq,
        "layer": layer,
        "n": n,
        "manifold": chart.name,
    }
    passed = main.passed and nm_eq.passed and cons_ok and dim_ineq["passed"] and hess_ineq["passed"]

    # V-harmonic companions
    lap_sup = max(float(np.max(np.abs(L.terms["lapv"][L.mask]))) if L.mask.any() else 0.0
                  for L in lv[-1:])
    lap_tol = max(tol_ell, slack(fin.chart, c_slack, scale))
    is_harmonic = lap_sup <= lap_tol
    if harmonic is True and not is_harmonic:
        raise ValueError(f"u is not V-harmonic: max |Delta_V u| = {lap_sup:.3e} > {lap_tol:.3e}")
    if harmonic is None:
        harmonic = is_harmonic
    if harmonic:
        def gmask(L):
            return L.mask & (L.terms["gradnorm"] >= MASK_GRADIENT)

        frac = 1.0 - float(np.sum(gmask(fin))) / max(float(np.sum(fin.mask)), 1.0)
        g_eq = eq_report(
            "harmonic_gradient_identity",
            lambda t: t["gradnorm_lap"] - (t["hess2"] - t["gradgrad2"] + t["ricv"]),
            gmask,
        )
        denom = max(n - 1.0, 1e-300)
        g_in = ineq(
            "harmonic_gradient_inequality",
            lambda t: t["gradnorm_lap"] - (t["gradgrad2"] / denom + t["ricnm"]),
            g_eq.c_slack, gmask,
        )
        extra.update({
            "harmonic_gradient_identity": g_eq.to_dict(),
            "harmonic_gradient_inequality": g_in,
            "masked_fraction": frac,
        })
        # a constant u makes the gradient-norm identity vacuous
        vacuous = float(np.max(fin.terms["gradnorm"][fin.mask], initial=0.0)) <= 1e-12
        extra["gradient_identity_vacuous"] = vacuous
        passed = passed and (vacuous or (g_eq.passed and g_in["passed"] and frac < 0.05))
    extra["harmonic"] = bool(harmonic)
    main.extra.update(extra)
    main.passed = bool(passed)
    return main


# Parabolic identities ---------------------------------------------------------


def _runs(run, levels: int) -> list[HeatRun]:
    if isinstance(run, HeatRun):
        if levels < 2:
            raise ValueError("at least two resolutions are needed")
        charts = refinement_charts(run.chart, levels)
        return [run] + [rerun(run, c) for c in charts[1:]]
    runs = list(run)
    if len(runs) < 2:
        raise ValueError("at least two runs are needed")
    return runs


def _eval_steps(run: HeatRun, need: int, t_min: float | None) -> list[int]:
    t_min = 10.0 * run.dt if t_min is None else t_min
    out = [int(k) for k in run.centers
           if k - need >= 0 and all((k + j) in run.frames for j in range(-need, need + 1))
           and k * run.dt >= t_min]
    if not out:
        raise ValueError("insufficient snapshots: need retained neighbours at interior times")
    return out


def _hamilton_quantity(chart, u):
    du = partials(chart, u)
    return np.einsum("i...,i...->...", du, raise_(chart, du)) / u


def _parabolic_levels(runs, t_min, layer, quantity: Callable):
    out = []
    for r in runs:
        c = r.chart
        mask = _mask(c, layer)
        worst_sup, worst_l2, scale = 0.0, 0.0, 0.0
        for k in _eval_steps(r, 1, t_min):
            res, sc = quantity(r, k)
            s_, l_ = _norms(c, res, mask)
            worst_sup = max(worst_sup, s_)
            worst_l2 = max(worst_l2, l_)
            scale = max(scale, sc)
        out.append((c.h, worst_sup, worst_l2, scale, r.dt))
    return out


def parabolic_identity_residual(
    run,
    setup: BakryEmerySetup | None = None,
    levels: int = 2,
    layer: float | None = None,
    t_min: float | None = None,
    alpha: float = 2.0,
    c_slack: float = 10.0,
) -> ResidualReport:
    """Evolution identity of |grad u|^2 / u along du/dt = Delta_V u.

    Checks
    (d/dt - Delta_V)(|grad u|^2/u) = -(2/u)[|Hess u - du (x) du / u|^2 + Ric_V(grad u, grad u)]
    with centered time differences on retained snapshots.  ``extra`` also
    carries the worst margin of the differential inequality satisfied by
    the Li-Yau quantity t(|grad f|^2 - alpha f_t - alpha q - alpha a f),
    f = ln u (see :func:`li_yau_quantity_margin`).

    Parameters
    ----------
    run : HeatRun or sequence of HeatRun
        A single run is repeated on refined charts; a sequence is taken as
        increasing resolutions of the same problem.
    """
    runs = _runs(run, levels)
    base = runs[0]
    if base.a != 0 or base.q_label not in (0, 0.0):
        raise ValueError("the evolution identity needs q = 0 and a = 0")
    layer = _default_layer(base.chart) if layer is None else layer

    def quantity(r: HeatRun, k: int):
        c, s = r.chart, r.setup
        u = r.u(k)
        if np.min(u) <= 0:
            raise ValueError("the evolution identity needs u > 0")
        Q = {j: _hamilton_quantity(c, r.u(k + j)) for j in (-1, 0, 1)}
        lhs = (Q[1] - Q[-1]) / (2 * r.dt) - _v_lap(c, s, Q[0], "trace")
        du = partials(c, u)
        gu = raise_(c, du)
        H = covariant_hessian(c, u).values
        M = H - np.einsum("i...,j...->ij...", du, du) / u
        ricv, _, _ = bakry_emery(c, s)
        rhs = -(2.0 / u) * (tensor_norm(c, M, "ll", squared=True) + _contract(ricv.values, gu, gu))
        return lhs - rhs, float(max(np.max(np.abs(lhs)), np.max(np.abs(rhs))))

    rows = _parabolic_levels(runs, t_min, layer, quantity)
    hs = [r[0] for r in rows]
    scale = max(r[3] for r in rows)
    rep = residual_report("hamilton_quantity_evolution", hs, [r[1] for r in rows],
                          [r[2] for r in rows], scale=scale, c_slack=c_slack)
    eps = [h * h + r[4] for h, r in zip(hs, rows)]
    rep.extra["eps"] = eps
    rep.extra["eps_orders"] = [
        math.log(a / b) / math.log(e0 / e1) if a > 0 and b > 0 else math.inf
        for a, b, e0, e1 in zip(rep.sup, rep.sup[1:], eps, eps[1:])
    ]
    ly = [li_yau_quantity_margin(r, alpha=alpha, layer=layer, t_min=t_min, c_slack=c_slack)
          for r in runs]
    rep.extra["li_yau_quantity"] = ly
    rep.extra["layer"] = layer
    rep.passed = bool(rep.passed and ly[-1]["passed"])
    return rep


def li_yau_quantity_margin(
    run: HeatRun,
    alpha: float = 2.0,
    layer: float | None = None,
    t_min: float | None = None,
    c_slack: float = 10.0,
    K: np.ndarray | float | None = None,
) -> dict:
    """Worst margin of the differential inequality for the Li-Yau quantity.

    With f = ln u and F = t(|grad f|^2 - alpha f_t - alpha q - alpha a f),
    the checked inequality is

        (Delta_V - d/dt) F >= -2 <grad f, grad F> - F/t - 2 K t |grad f|^2
            + (2t/n) (|grad f|^2 - q - f_t - a f)^2 - alpha t Delta_V q
            - 2 (alpha - 1) t <grad f, grad q> - 2 (alpha - 1) t a |grad f|^2
            + alpha a t (|grad f|^2 - q - f_t - a f),

    where K is the pointwise lower bound Ric_V^{n,m} >= -K (default).
    Needs two retained neighbours on each side of every checked time.
    """
    c, s = run.chart, run.setup
    layer = _default_layer(c) if layer is None else layer
    mask = _mask(c, layer)
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    a, n, dt = run.a, s.n, run.dt
    if K is None:
        _, ricnm, _ = bakry_emery(c, s)
        K = np.maximum(0.0, -generalized_eigvalsh(ricnm.values, c.metric)[0])

    def pieces(k):
        t = k * dt
        f = np.log(run.u(k))
        ft = (np.log(run.u(k + 1)) - np.log(run.u(k - 1))) / (2 * dt)
        q = run.q_at(t)
        df = partials(c, f)
        gf2 = np.einsum("i...,i...->...", df, raise_(c, df))
        F = t * (gf2 - alpha * ft - alpha * q - alpha * a * f)
        return dict(t=t, f=f, ft=ft, q=q, df=df, gf2=gf2, F=F)

    worst, worst_t, scale = math.inf, None, 0.0
    for k in _eval_steps(run, 2, t_min):
        P = {j: pieces(k + j) for j in (-1, 0, 1)}
        p = P[0]
        t = p["t"]
        Ft = (P[1]["F"] - P[-1]["F"]) / (2 * dt)
        lhs = _v_lap(c, s, p["F"], "trace") - Ft
        dF = partials(c, p["F"])
        gf = raise_(c, p["df"])
        dq = partials(c, p["q"])
        core = p["gf2"] - p["q"] - p["ft"] - a * p["f"]
        rhs = (-2.0 * np.einsum("i...,i...->...", gf, dF) - p["F"] / t - 2.0 * K * t * p["gf2"]
               + (2.0 * t / n) * core ** 2 - alpha * t * _v_lap(c, s, p["q"], "trace")
               - 2.0 * (alpha - 1) * t * np.einsum("i...,i...->...", gf, dq)
               - 2.0 * (alpha - 1) * t * a * p["gf2"] + alpha * a * t * core)
        marg = (lhs - rhs)[mask]
        if marg.size and float(np.min(marg)) < worst:
            worst, worst_t = float(np.min(marg)), t
        scale = max(scale, float(np.max(np.abs(lhs[mask]))), float(np.max(np.abs(rhs[mask]))))
    sl = slack(c, c_slack, scale)
    return {"identity": "li_yau_quantity_inequality", "h": c.h, "margin": worst, "t": worst_t,
            "slack": sl, "alpha": alpha, "passed": bool(worst >= -sl)}


# Hessian evolution ------------------------------------------------------------


def _hessian_source(c: ManifoldChart, s: BakryEmerySetup, u: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Right side of the evolution equation of Hess u under du/dt = Delta_V u."""
    Rm, _, _ = riemann_ricci_scalar(c)
    ricv, _, _ = bakry_emery(c, s)
    ginv = c.metric_inv
    du = partials(c, u)
    gu = raise_(c, du)
    Hup = np.einsum("ka...,lb...,ab...->kl...", ginv, ginv, H)
    out = 2.0 * np.einsum("kijl...,kl...->ij...", Rm.values, Hup)
    # H_i^k Ric_V{}_jk with the index raised through g
    Hmix = np.einsum("ia...,ak...->ik...", H, ginv)
    out -= np.einsum("ik...,jk...->ij...", Hmix, ricv.values)
    out -= np.einsum("jk...,ik...->ij...", Hmix, ricv.values)
    D = covariant_derivative(c, ricv.values, "ll")  # D[a, i, j] = nabla_a Ric_V_ij
    out -= (np.einsum("ijl...,l...->ij...", D, gu) + np.einsum("jil...,l...->ij...", D, gu)
            - np.einsum("lij...,l...->ij...", D, gu))
    if not s.zero_drift:
        Vl = np.einsum("ij...,j...->i...", c.metric, s.V.values)
        dV = covariant_derivative(c, Vl, "l")  # dV[a, b] = nabla_a V_b
        A = 0.5 * (dV - np.swapaxes(dV, 0, 1))  # A[k, j] = (nabla_k V_j - nabla_j V_k)/2
        out -= np.einsum("ik...,kj...->ij...", Hmix, A)
        out -= np.einsum("jk...,ki...->ij...", Hmix, A)
    return out


def hessian_evolution_residual(
    run,
    setup: BakryEmerySetup | None = None,
    A: float | None = None,
    levels: int = 2,
    layer: float | None = None,
    t_min: float | None = None,
    c_slack: float = 10.0,
) -> ResidualReport:
    """Evolution equations of Hess u, v_ij and w_ij along du/dt = Delta_V u.

    With f = ln(u/A), v_ij = nabla_i nabla_j u / (u(1-f)) and
    w_ij = nabla_i u nabla_j u / (u^2 (1-f)^2), the report tracks the
    residual of (d/dt - Delta_V) nabla_i nabla_j u against its curvature
    and drift source.  The evolution equations of v and w are reported in
    ``extra`` as further residual reports; ``passed`` requires all three.
    """
    runs = _runs(run, levels)
    base = runs[0]
    if base.a != 0 or base.q_label not in (0, 0.0):
        raise ValueError("the Hessian evolution equations need q = 0 and a = 0")
    if A is None:
        A = max(float(np.max(r.max_u)) for r in runs)
    for r in runs:
        if float(np.max(r.max_u)) > A * (1 + 1e-12):
            raise ValueError(f"u exceeds A = {A}")
        if float(np.min(r.min_u)) <= 0:
            raise ValueError("the Hessian evolution equations need u > 0")
    layer = _default_layer(base.chart) if layer is None else layer

    def fields(c, s, u):
        H = covariant_hessian(c, u).values
        f = np.log(u / A)
        du = partials(c, u)
        v = H / (u * (1 - f))
        w = np.einsum("i...,j...->ij...", du, du) / (u * u * (1 - f) ** 2)
        return H, f, du, v, w

    rows = {"hess": [], "v": [], "w": []}
    for r in runs:
        c, s = r.chart, r.setup
        mask = _mask(c, layer)
        ginv = c.metric_inv
        acc = {key: [0.0, 0.0, 0.0] for key in rows}
        ricv, _, _ = bakry_emery(c, s)
        if not s.zero_drift:
            Vl = np.einsum("ij...,j...->i...", c.metric, s.V.values)
            dV = covariant_derivative(c, Vl, "l")
            Aw = 0.5 * (dV - np.swapaxes(dV, 0, 1))
        for k in _eval_steps(r, 1, t_min):
            Fm = fields(c, s, r.u(k - 1))
            F0 = fields(c, s, r.u(k))
            Fp = fields(c, s, r.u(k + 1))
            u = r.u(k)
            H, f, du, v, w = F0
            src = _hessian_source(c, s, u, H)
            # Hess u
            lhs = (Fp[0] - Fm[0]) / (2 * r.dt) - tensor_v_laplacian(c, s, H, "ll")
            # v_ij
            gf = raise_(c, du / u)
            gf2 = np.einsum("i...,i...->...", du / u, gf)
            Dv = covariant_derivative(c, v, "ll")
            lhs_v = (Fp[3] - Fm[3]) / (2 * r.dt) - tensor_v_laplacian(c, s, v, "ll")
            rhs_v = (-(2 * f / (1 - f)) * np.einsum("k...,kij...->ij...", gf, Dv)
                     - gf2 / (1 - f) * v + src / (u * (1 - f)))
            # w_ij
            Dw = covariant_derivative(c, w, "ll")
            lhs_w = (Fp[4] - Fm[4]) / (2 * r.dt) - tensor_v_laplacian(c, s, w, "ll")
            P = v + f * w
            Pmix = np.einsum("jb...,bk...->jk...", P, ginv)
            wmix = np.einsum("ia...,ak...->ik...", w, ginv)
            rhs_w = (-(2 * f / (1 - f)) * np.einsum("k...,kij...->ij...", gf, Dw)
                     - 2 * gf2 / (1 - f) * w
                     - 2 * np.einsum("ik...,jk...->ij...", P, Pmix)
                     - np.einsum("ik...,jk...->ij...", wmix, ricv.values)
                     - np.einsum("jk...,ik...->ij...", wmix, ricv.values))
            if not s.zero_drift:
                rhs_w = (rhs_w - np.einsum("ik...,kj...->ij...", wmix, Aw)
                         - np.einsum("jk...,ki...->ij...", wmix, Aw))
            for key, (L, R) in {"hess": (lhs, src), "v": (lhs_v, rhs_v), "w": (lhs_w, rhs_w)}.items():
                res = tensor_norm(c, L - R, "ll")
                s_, l_ = _norms(c, res, mask)
                sc = float(max(np.max(tensor_norm(c, L, "ll")[mask]),
                               np.max(tensor_norm(c, R, "ll")[mask])))
                acc[key] = [max(acc[key][0], s_), max(acc[key][1], l_), max(acc[key][2], sc)]
        for key in rows:
            rows[key].append((c.h,) + tuple(acc[key]))
    reps = {}
    names = {"hess": "hessian_evolution", "v": "normalized_hessian_evolution",
             "w": "normalized_gradient_square_evolution"}
    for key, rr in rows.items():
        reps[key] = residual_report(names[key], [x[0] for x in rr], [x[1] for x in rr],
                                    [x[2] for x in rr], scale=max(x[3] for x in rr),
                                    c_slack=c_slack)
    main = reps["hess"]
    main.extra.update({
        "normalized_hessian_evolution": reps["v"].to_dict(),
        "normalized_gradient_square_evolution": reps["w"].to_dict(),
        "A": A,
        "layer": layer,
    })
    main.passed = bool(main.passed and reps["v"].passed and reps["w"].passed)
    return main
