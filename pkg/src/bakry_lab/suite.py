"""Config-driven check suites and convergence studies.

A :class:`RunConfig` names a catalog chart, a drift, heat-solver settings
and an ordered list of checks.  :func:`run_suite` executes the checks in
declared order, writes a structured report, columnar tables and a summary,
and returns the exit status: 0 when every check passes, 1 when some
verdict is a violation, 2 when some check raised.
"""

from __future__ import annotations

import json
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from . import comparison, estimates, identities, killing
from .expr import parse_expr
from .fields import sample
from .geometry import (
    DEFAULT_C_SLACK, bakry_emery, make_setup, riemann_ricci_scalar, slack, tensor_norm,
)
from .grid import CATALOG, ManifoldChart, build_manifold, interior_mask
from .heat import run_weighted_heat, solve_v_harmonic
from .records import classify, jsonable, observed_orders, residual_report
from .reports import (
    CheckRecord, ErrorRecord, ReportWriter, emit_report, write_summary, write_table,
)

__all__ = [
    "CHECK_TYPES",
    "CheckSpec",
    "RunConfig",
    "ConfigError",
    "ResourceCapExceeded",
    "SuiteResult",
    "ConvergenceRow",
    "load_config",
    "run_check",
    "run_suite",
    "convergence_study",
    "exit_status",
]

MAX_RESOLUTION = 1024


class ConfigError(ValueError):
    """Invalid run configuration."""


class ResourceCapExceeded(RuntimeError):
    """A convergence level would exceed the configured point budget."""


# Configuration ----------------------------------------------------------------


@dataclass
class CheckSpec:
    """One configured check; ``manifold``/``setup``/``solver`` override the run defaults."""

    id: str
    type: str
    params: dict = field(default_factory=dict)
    manifold: dict = field(default_factory=dict)
    setup: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "CheckSpec":
        if not isinstance(d, dict):
            raise ConfigError(f"check entries must be mappings, got {d!r}")
        d = dict(d)
        try:
            cid, ctype = str(d.pop("id")), str(d.pop("type"))
        except KeyError as exc:
            raise ConfigError(f"check entry {d!r} lacks {exc.args[0]!r}") from None
        over = {k: dict(d.pop(k) or {}) for k in ("manifold", "setup", "solver") if k in d}
        params = dict(d.pop("params", None) or {})
        params.update(d)
        return cls(id=cid, type=ctype, params=params, **over)


@dataclass
class RunConfig:
    """A suite run.

    Attributes
    ----------
    manifold : dict
        ``name`` (catalog chart), ``resolution`` and the chart's range
        parameters.
    setup : dict
        ``V`` (list of component expressions or a named field),
        ``potential`` (alias ``f``; V = grad f) and ``n``.
    solver : dict
        Heat-run settings: ``u0``, ``T``, ``dt``, ``q``, ``a`` and
        ``snapshots`` (a list of times or ``{start, stop, num}``).
    checks : list of CheckSpec
    output : str
        Output directory.
    seed : int
        Seed for randomly generated corpus fields (``u: random``).
    slack_scale : float
        Multiplies every slack constant; 0 forces exact inequalities.
    max_points : int
        Point budget per chart in convergence studies.
    """

    manifold: dict = field(default_factory=lambda: {"name": "flat_torus", "resolution": 32})
    setup: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    output: str = "out"
    seed: int = 0
    slack_scale: float = 1.0
    max_points: int = 2_000_000

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a mapping")
        d = dict(d)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        d["checks"] = [CheckSpec.from_dict(c) for c in d.get("checks") or []]
        for k in ("setup", "solver"):
            d[k] = dict(d.get(k) or {})
        if d.get("manifold") is None:
            d.pop("manifold", None)
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not (isinstance(self.slack_scale, (int, float)) and self.slack_scale >= 0):
            raise ConfigError("slack_scale must be >= 0")
        if int(self.max_points) < 16:
            raise ConfigError("max_points must be at least 16")
        seen = set()
        for spec in self.checks:
            if spec.id in seen:
                raise ConfigError(f"duplicate check id {spec.id!r}")
            seen.add(spec.id)
            if spec.type not in CHECK_TYPES:
                raise ConfigError(f"check {spec.id!r}: unknown type {spec.type!r}; "
                                  f"choose from {sorted(CHECK_TYPES)}")
            CHECK_TYPES[spec.type].validate(spec)
            _validate_manifold({**self.manifold, **spec.manifold}, spec.id)
            _validate_setup({**self.setup, **spec.setup}, spec.id)
            _validate_solver({**self.solver, **spec.solver}, spec.id)
        _validate_manifold(self.manifold, "<run>")
        _validate_setup(self.setup, "<run>")
        _validate_solver(self.solver, "<run>")

    def replace(self, **changes) -> "RunConfig":
        d = self.to_dict()
        d.update(changes)
        d["checks"] = [CheckSpec(**c) if isinstance(c, dict) else c for c in d["checks"]]
        return RunConfig(**d)


def load_config(path) -> RunConfig:
    """Read a YAML or JSON configuration file."""
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if p.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    return RunConfig.from_dict(data or {})


def _check_expr(value, where: str) -> None:
    if isinstance(value, (int, float)):
        return
    if value == "random":
        return
    try:
        parse_expr(str(value))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _check_range(value, lo, hi, where: str, integer: bool = False) -> None:
    if integer and not isinstance(value, int):
        raise ConfigError(f"{where} must be an integer")
    if not isinstance(value, (int, float)) or not lo <= value <= hi:
        raise ConfigError(f"{where} must lie in [{lo}, {hi}], got {value!r}")


def _validate_manifold(m: dict, cid: str) -> None:
    name = m.get("name")
    if name not in CATALOG:
        raise ConfigError(f"{cid}: manifold name must be one of {sorted(CATALOG)}")
    res = m.get("resolution")
    if res is not None:
        for r in ([res] if isinstance(res, int) else list(res)):
            _check_range(r, 4, MAX_RESOLUTION, f"{cid}: resolution", integer=True)


def _validate_setup(s: dict, cid: str) -> None:
    unknown = set(s) - {"V", "potential", "f", "n"}
    if unknown:
        raise ConfigError(f"{cid}: unknown setup keys {sorted(unknown)}")
    if s.get("potential") is not None and s.get("f") is not None:
        raise ConfigError(f"{cid}: give potential or f, not both")
    pot = s.get("potential", s.get("f"))
    if pot is not None:
        _check_expr(pot, f"{cid}: setup potential")
    V = s.get("V")
    if isinstance(V, list):
        for comp in V:
            _check_expr(comp, f"{cid}: setup V")
    if s.get("n") is not None:
        _check_range(s["n"], 1, 1e6, f"{cid}: setup n")


def _validate_solver(s: dict, cid: str) -> None:
    unknown = set(s) - {"u0", "T", "dt", "q", "a", "snapshots", "stencil", "form"}
    if unknown:
        raise ConfigError(f"{cid}: unknown solver keys {sorted(unknown)}")
    for key in ("u0", "q"):
        if key in s:
            _check_expr(s[key], f"{cid}: solver {key}")
    if "T" in s:
        _check_range(s["T"], 1e-12, 1e6, f"{cid}: solver T")
    if s.get("dt") is not None:
        _check_range(s["dt"], 1e-14, 1e3, f"{cid}: solver dt")


# Check types ------------------------------------------------------------------


@dataclass(frozen=True)
class CheckType:
    """A registered check: its runner and accepted parameters."""

    runner: Callable
    required: tuple = ()
    optional: tuple = ()
    expressions: tuple = ()
    description: str = ""
    uses_grid: bool = True

    def validate(self, spec: CheckSpec) -> None:
        missing = [k for k in self.required if k not in spec.params]
        if missing:
            raise ConfigError(f"check {spec.id!r}: missing parameters {missing}")
        unknown = set(spec.params) - set(self.required) - set(self.optional)
        if unknown:
            raise ConfigError(f"check {spec.id!r}: unknown parameters {sorted(unknown)}")
        for k in self.expressions:
            if k in spec.params and spec.params[k] is not None:
                vals = spec.params[k]
                for v in vals if isinstance(vals, list) else [vals]:
                    _check_expr(v, f"check {spec.id!r} parameter {k}")


class _Context:
    """Resolved settings for one check at one refinement level."""

    def __init__(self, config: RunConfig, spec: CheckSpec, level: int = 0):
        self.config = config
        self.spec = spec
        self.level = level
        self.manifold = {**config.manifold, **spec.manifold}
        self.setup_spec = {**config.setup, **spec.setup}
        self.solver = {**config.solver, **spec.solver}
        self.c_slack = DEFAULT_C_SLACK * float(config.slack_scale)
        self._chart = None
        self._setup = None
        self._run = None

    def resolution(self, level: int | None = None):
        level = self.level if level is None else level
        res = self.manifold.get("resolution")
        if res is None:
            return None
        if isinstance(res, int):
            return res * 2 ** level
        return [r * 2 ** level for r in res]

    def chart_at(self, level: int) -> ManifoldChart:
        params = {k: v for k, v in self.manifold.items() if k not in ("name", "resolution")}
        chart = build_manifold(self.manifold["name"], resolution=self.resolution(level), **params)
        if int(np.prod(chart.shape)) > self.config.max_points:
            raise ResourceCapExceeded(
                f"{int(np.prod(chart.shape))} grid points exceed max_points={self.config.max_points}")
        return chart

    @property
    def chart(self) -> ManifoldChart:
        if self._chart is None:
            self._chart = self.chart_at(self.level)
        return self._chart

    def setup_on(self, chart: ManifoldChart):
        s = self.setup_spec
        return make_setup(chart, V=s.get("V"), potential=s.get("potential", s.get("f")),
                          n=s.get("n"))

    @property
    def setup(self):
        if self._setup is None:
            self._setup = self.setup_on(self.chart)
        return self._setup

    def field(self, value, chart: ManifoldChart | None = None) -> np.ndarray:
        chart = chart or self.chart
        if value == "random":
            value = self.random_expr(chart)
        return sample(chart, value)

    def random_expr(self, chart: ManifoldChart) -> str:
        """Smooth periodic corpus field 2 + sum of low Fourier modes."""
        if not chart.periodic:
            raise ValueError("random corpus fields need a periodic chart")
        rng = np.random.default_rng([self.config.seed, zlib.crc32(self.spec.id.encode())])
        terms = ["2"]
        for name, lo, hi in zip(chart.axis_names, chart.lower, chart.upper):
            k = 2 * math.pi / (hi - lo)
            for mode in (1, 2):
                a, b = (float(c) for c in rng.uniform(-0.25, 0.25, size=2) / mode)
                terms.append(f"({a!r})*sin({mode * k!r}*{name})")
                terms.append(f"({b!r})*cos({mode * k!r}*{name})")
        return "+".join(terms)

    def snapshot_times(self) -> list | None:
        snaps = self.solver.get("snapshots")
        if snaps is None:
            return None
        if isinstance(snaps, dict):
            return list(np.linspace(float(snaps["start"]), float(snaps["stop"]), int(snaps["num"])))
        return [float(t) for t in snaps]

    def run_on(self, chart: ManifoldChart, setup=None):
        s = self.solver
        if "u0" not in s:
            raise ValueError("heat-based checks need solver.u0")
        setup = setup or self.setup_on(chart)
        return run_weighted_heat(
            chart, setup, self.field(s["u0"], chart), float(s.get("T", 1.0)), dt=s.get("dt"),
            q=s.get("q", 0.0), a=float(s.get("a", 0.0)), snapshot_times=self.snapshot_times(),
            stencil=int(s.get("stencil", 2)), form=s.get("form", "auto"),
        )

    @property
    def run(self):
        if self._run is None:
            self._run = self.run_on(self.chart, self.setup)
        return self._run


def _t_range(p):
    tr = p.get("t_range")
    return None if tr is None else (float(tr[0]), float(tr[1]))


def _levels(ctx: _Context, p: dict, default: int) -> int:
    levels = int(p.get("levels", default))
    if levels < 2:
        raise ValueError("levels must be >= 2")
    return levels


def _charts(ctx: _Context, levels: int) -> list[ManifoldChart]:
    return [ctx.chart_at(ctx.level + k) for k in range(levels)]


def _mask(chart: ManifoldChart, layer) -> np.ndarray:
    return interior_mask(chart, float(layer) if layer is not None else 0.0)


def _scalar_curvature(ctx: _Context, p: dict):
    hs, sups, l2s, scale = [], [], [], 1.0
    for chart in _charts(ctx, _levels(ctx, p, 2)):
        R = riemann_ricci_scalar(chart)[2].values
        expected = ctx.field(p["expected"], chart)
        m = _mask(chart, p.get("layer"))
        err = np.abs(R - expected)[m]
        scale = float(np.max(np.abs(expected[m])))
        hs.append(chart.h)
        sups.append(float(err.max()))
        l2s.append(float(np.sqrt(np.mean(err ** 2))))
    rep = residual_report("scalar_curvature", hs, sups, l2s, scale=scale, c_slack=ctx.c_slack,
                          min_order=float(p.get("min_order", 1.5)),
                          extra={"expected": str(p["expected"]),
                                 "ratios": [a / b for a, b in zip(sups, sups[1:]) if b > 0]})
    return rep, {}


def _soliton_kernel(ctx: _Context, p: dict):
    hs, sups, l2s, scale = [], [], [], 1.0
    for chart in _charts(ctx, _levels(ctx, p, 2)):
        setup = ctx.setup_on(chart)
        ricv = bakry_emery(chart, setup)[0].values
        ric = riemann_ricci_scalar(chart)[1].values
        m = _mask(chart, p.get("layer"))
        norm = np.sqrt(tensor_norm(chart, ricv, "ll", squared=True))[m]
        scale = float(np.max(np.sqrt(tensor_norm(chart, ric, "ll", squared=True))[m]))
        hs.append(chart.h)
        sups.append(float(norm.max()))
        l2s.append(float(np.sqrt(np.mean(norm ** 2))))
    rep = residual_report("soliton_kernel", hs, sups, l2s, scale=scale, c_slack=ctx.c_slack,
                          min_order=float(p.get("min_order", 1.5)))
    return rep, {}


def _bochner(ctx: _Context, p: dict):
    u = p["u"]
    if u == "random":
        u = ctx.random_expr(ctx.chart)
    rep = identities.bochner_residual(ctx.chart, ctx.setup, u, levels=_levels(ctx, p, 3),
                                      layer=p.get("layer"), c_slack=ctx.c_slack)
    rep.extra["u"] = str(u)
    return rep, {}


def _parabolic(ctx: _Context, p: dict):
    rep = identities.parabolic_identity_residual(
        ctx.run, levels=_levels(ctx, p, 2), layer=p.get("layer"), t_min=p.get("t_min"),
        alpha=float(p.get("alpha", 2.0)), c_slack=ctx.c_slack)
    return rep, {}


def _hessian_evolution(ctx: _Context, p: dict):
    rep = identities.hessian_evolution_residual(
        ctx.run, A=p.get("A"), levels=_levels(ctx, p, 2), layer=p.get("layer"),
        t_min=p.get("t_min"), c_slack=ctx.c_slack)
    return rep, {}


def _laplacian_comparison(ctx: _Context, p: dict):
    rep = comparison.laplacian_comparison_check(
        ctx.chart, ctx.setup, p["p0"], tuple(p["r_range"]), K=p.get("K"), c_slack=ctx.c_slack)
    return rep, {}


def _riccati(ctx: _Context, p: dict):
    n, K = float(p["n"]), float(p["K"])
    dr = float(p.get("dr", 1e-4)) / 2 ** ctx.level
    r_min = float(p.get("r_min", 0.1))
    r_max = p.get("r_max")
    prof = comparison.riccati_theta(n, K, r_max=float(r_max or 3.2), dr=dr)
    top = float(r_max) if r_max is not None else min(3.0, 0.9 * prof.delta)
    sel = (prof.r >= r_min) & (prof.r <= top)
    err = np.abs(prof.theta[sel] - comparison.theta_closed_form(n, K, prof.r[sel]))
    tol = float(p.get("tol", 1e-8))
    j = int(np.argmax(err))
    rep = classify("riccati_closed_form", lhs=err[j], rhs=tol, margin=tol - err[j], slack_used=0.0,
                   h=dr, location={"r": float(prof.r[sel][j])},
                   params={"n": n, "K": K, "r_min": r_min, "r_max": top, "dr": dr},
                   extra={"delta": float(prof.delta)})
    return rep, {"theta": (("r", "theta", "closed_form"),
                           np.column_stack([prof.r[sel], prof.theta[sel],
                                            comparison.theta_closed_form(n, K, prof.r[sel])]))}


def _cheng_yau(ctx: _Context, p: dict):
    u = ctx.field(p["u"])
    if p.get("solve", False):
        u = solve_v_harmonic(ctx.chart, ctx.setup, boundary_data=u, u0=u)
    rep = estimates.check_cheng_yau(ctx.chart, ctx.setup, u, mode=p.get("mode", "local"),
                                    x0=p.get("x0"), r=p.get("r"), c_slack=ctx.c_slack)
    return rep, {}


def _gradient_lemma(ctx: _Context, p: dict):
    refine_with = None
    if p.get("refine", True):
        fine = ctx.chart_at(ctx.level + 1)
        refine_with = (fine, ctx.setup_on(fine), ctx.field(p["u"], fine))
    rep = estimates.check_lemma_H(
        ctx.chart, ctx.setup, ctx.field(p["u"]), p["F"], p["G"], p["p0"], float(p["r"]),
        c_slack=ctx.c_slack, K=p.get("K"), inner_fraction=float(p.get("inner_fraction", 0.9)),
        reading=p.get("reading", "printed"), refine_with=refine_with)
    return rep, {}


def _li_yau(ctx: _Context, p: dict):
    ball = p.get("ball")
    if ball is not None:
        ball = (tuple(ball["center"]), float(ball["radius"]))
    rep = estimates.check_li_yau(
        ctx.run, variant=p.get("variant", "corollary"), alpha=float(p.get("alpha", 2.0)),
        eps=float(p.get("eps", 0.5)), ball=ball, t_min=p.get("t_min"), t_range=_t_range(p),
        c_slack=ctx.c_slack, refine_violations=bool(p.get("refine", True)))
    return rep, {}


def _hamilton(ctx: _Context, p: dict):
    rep = estimates.check_hamilton(
        ctx.run, variant=p.get("variant", "sharp"), A=p.get("A"),
        a_param=float(p.get("a_param", 3.0)), t_min=p.get("t_min"), t_range=_t_range(p),
        c_slack=ctx.c_slack, refine_violations=bool(p.get("refine", True)))
    return rep, {}


def _hessian(ctx: _Context, p: dict):
    rep = estimates.check_hessian(
        ctx.run, variant=p.get("variant", "a"), A=p.get("A"), cube=p.get("cube"),
        t_min=p.get("t_min"), t_range=_t_range(p), c_slack=ctx.c_slack,
        stability=float(p.get("stability", 0.2)), refine_violations=bool(p.get("refine", True)))
    return rep, {}


def _vector(ctx: _Context, comps, chart: ManifoldChart) -> np.ndarray:
    if isinstance(comps, str):
        raise ValueError("vector fields are given as a list of component expressions")
    return np.stack([ctx.field(c, chart) for c in comps])


def _killing_flow(ctx: _Context, p: dict):
    chart = ctx.chart
    X0 = _vector(ctx, p["X0"], chart)
    trace = killing.run_killing_flow(chart, X0, float(p.get("T", 1.0)), dt=p.get("dt"),
                                     n_snapshots=int(p.get("n_snapshots", 10)),
                                     method=p.get("method", "auto"), strict=False)
    lie_tol = float(p.get("lie_tol", 1e-4))
    final_lie = float(trace.lie_sup[trace.nsteps])
    extra = {"monotone": bool(trace.monotone), "worst_increase": float(trace.worst_increase),
             "nsteps": int(trace.nsteps), "dt": float(trace.dt), "method": trace.method,
             "energy_initial": float(trace.energy[0]), "energy_final": float(trace.energy[-1])}
    sl = 0.0
    if p.get("mean_oracle", False):
        # the flow preserves the mean on a flat torus; the limit is the constant mean field
        mean = X0.reshape(chart.dim, -1).mean(axis=1)
        dev = float(np.max(np.abs(trace.final - mean.reshape((-1,) + (1,) * chart.dim))))
        sl = slack(chart, ctx.c_slack, float(np.max(np.abs(X0))))
        extra.update(mean_deviation=dev, mean_slack=sl)
    rep = classify("killing_flow", lhs=final_lie, rhs=lie_tol, margin=lie_tol - final_lie,
                   slack_used=0.0, h=chart.h, params={"T": trace.T, "lie_tol": lie_tol},
                   extra=extra)
    if not trace.monotone or extra.get("mean_deviation", 0.0) > sl:
        rep.verdict = "violated"
    return rep, {"energy": (("t", "energy"), np.column_stack([trace.times, trace.energy]))}


def _killing_criteria(ctx: _Context, p: dict):
    hs, sups, l2s, scale = [], [], [], 1.0
    for chart in _charts(ctx, _levels(ctx, p, 2)):
        X = _vector(ctx, p["X"], chart)
        f = ctx.field(p["f"], chart) if p.get("f") is not None else None
        res, sup = killing.killing_criteria_residual(chart, X, p["which"], f=f, layer=p.get("layer"))
        hs.append(chart.h)
        sups.append(float(sup))
        l2s.append(float(sup))
        scale = max(scale, float(np.max(np.abs(X))))
    rep = residual_report(f"killing_{p['which']}", hs, sups, l2s, scale=scale,
                          c_slack=ctx.c_slack, min_order=float(p.get("min_order", 1.5)))
    return rep, {}


_GRID_OPT = ("levels", "layer", "min_order")
_TIME = ("t_min", "t_range", "refine")

CHECK_TYPES: dict[str, CheckType] = {
    "scalar_curvature": CheckType(_scalar_curvature, ("expected",), _GRID_OPT, ("expected",),
                                  "computed scalar curvature against an expression"),
    "soliton_kernel": CheckType(_soliton_kernel, (), _GRID_OPT, (),
                                "sup |Ric_V| under refinement (steady soliton drift)"),
    "bochner": CheckType(_bochner, ("u",), ("levels", "layer"), ("u",),
                         "weighted Bochner identity residual"),
    "parabolic_identity": CheckType(_parabolic, (), ("levels", "layer", "t_min", "alpha"), (),
                                    "evolution identity of the gradient quantity"),
    "hessian_evolution": CheckType(_hessian_evolution, (), ("levels", "layer", "t_min", "A"), (),
                                   "evolution identity of the Hessian quantity"),
    "laplacian_comparison": CheckType(_laplacian_comparison, ("p0", "r_range"), ("K",), (),
                                      "Delta_V d against the Riccati profile"),
    "riccati": CheckType(_riccati, ("n", "K"), ("r_min", "r_max", "dr", "tol"), (),
                         "Riccati profile against its closed form", uses_grid=False),
    "cheng_yau": CheckType(_cheng_yau, ("u",), ("mode", "x0", "r", "solve"), ("u",),
                           "gradient bound for positive V-harmonic functions"),
    "gradient_lemma": CheckType(_gradient_lemma, ("u", "F", "G", "p0", "r"),
                                ("K", "inner_fraction", "reading", "refine"), ("u", "F", "G"),
                                "differential inequalities for the cut-off gradient quantity"),
    "li_yau": CheckType(_li_yau, (), ("variant", "alpha", "eps", "ball") + _TIME, (),
                        "Li-Yau type gradient estimates"),
    "hamilton": CheckType(_hamilton, (), ("variant", "A", "a_param") + _TIME, (),
                          "Hamilton type gradient estimates"),
    "hessian": CheckType(_hessian, (), ("variant", "A", "cube", "stability") + _TIME, (),
                         "Hessian upper bounds"),
    "killing_flow": CheckType(_killing_flow, ("X0",),
                              ("T", "dt", "method", "lie_tol", "mean_oracle", "n_snapshots"),
                              ("X0",), "energy-decreasing flow towards Killing fields"),
    "killing_criteria": CheckType(_killing_criteria, ("X", "which"), _GRID_OPT + ("f",),
                                  ("X", "f"), "residual of a Killing criterion"),
}


# Execution -------------------------------------------------------------------


def run_check(config: RunConfig, spec: CheckSpec, level: int = 0) -> CheckRecord:
    """Run one check; exceptions become an errored record."""
    ctx = _Context(config, spec, level)
    try:
        rec, series = CHECK_TYPES[spec.type].runner(ctx, spec.params)
    except Exception as exc:  # any module error aborts only this check
        return CheckRecord(spec.id, spec.type, ErrorRecord.from_exception(exc))
    return CheckRecord(spec.id, spec.type, rec, series)


def _run_index(config_dict: dict, index: int) -> CheckRecord:
    config = RunConfig.from_dict(config_dict)
    return run_check(config, config.checks[index])


def exit_status(records) -> int:
    """0 when all pass, 2 when any check errored, 1 for violations."""
    verdicts = [r.verdict for r in records]
    if "errored" in verdicts:
        return 2
    if any(v in ("violated", "genuine-violation") for v in verdicts):
        return 1
    return 0


@dataclass
class SuiteResult:
    records: list
    status: int
    report: Path
    summary: Path
    tables: list


def _serializable(config: RunConfig) -> dict:
    d = config.to_dict()
    d["checks"] = [{"id": c["id"], "type": c["type"], **c["params"],
                    **{k: c[k] for k in ("manifold", "setup", "solver") if c[k]}}
                   for c in d["checks"]]
    return d


def run_suite(config: RunConfig, out_dir=None, parallel: bool = False,
              workers: int | None = None, timestamp: str | None = None) -> SuiteResult:
    """Run every check in declared order and write the reports.

    With ``parallel`` the checks run in worker processes; their records are
    staged in memory and appended in declared order, so the report is
    identical to a serial run.
    """
    out = Path(out_dir if out_dir is not None else config.output)
    records: list[CheckRecord] = []
    meta = {"config": _serializable(config)}
    with ReportWriter(out / "report.jsonl", meta=meta, timestamp=timestamp) as writer:
        if parallel and len(config.checks) > 1:
            cfg = _serializable(config)
            n = workers or min(len(config.checks), os.cpu_count() or 1)
            with ProcessPoolExecutor(max_workers=n) as pool:
                futures = [pool.submit(_run_index, cfg, i) for i in range(len(config.checks))]
                for fut in futures:
                    rec = fut.result()
                    writer.append(rec)
                    records.append(rec)
        else:
            for spec in config.checks:
                rec = run_check(config, spec)
                writer.append(rec)
                records.append(rec)
    tables = emit_report(records, out, format="columnar-text")
    summary = write_summary(out / "summary.txt", records)
    return SuiteResult(records, exit_status(records), writer.path, summary, tables)


# Convergence -------------------------------------------------------------------


@dataclass
class ConvergenceRow:
    check: str
    level: int
    h: float
    value: float
    order: float | str | None
    c_calibrated: float | None = None


def _violation(rec) -> float:
    return max(0.0, -rec.margin)


def convergence_study(config: RunConfig, levels: int, out_dir=None,
                      checks: list[str] | None = None) -> list[ConvergenceRow]:
    """Rerun configured checks at h, h/2, ... and report observed orders.

    Residual checks report their sup residual per level, estimates their
    worst violation (0 when the inequality holds) and the Riccati check its
    closed-form error under dr halving.  ``order`` is ``'exact'`` when
    every value is at rounding level.  ``c_calibrated`` is the slack
    constant implied by the coarsest level, sup_0 / (h_0^2 scale).
    """
    if levels < 2:
        raise ValueError("levels must be >= 2")
    specs = [s for s in config.checks if checks is None or s.id in checks]
    rows: list[ConvergenceRow] = []
    for spec in specs:
        ctx0 = _Context(config, spec)
        ctype = CHECK_TYPES[spec.type]
        if ctype.uses_grid:
            ctx0.chart_at(levels - 1)  # enforce the point cap before any work
        recs = []
        if spec.type in ("scalar_curvature", "soliton_kernel", "bochner", "killing_criteria",
                         "parabolic_identity", "hessian_evolution"):
            rec, _ = ctype.runner(ctx0, {**spec.params, "levels": levels})
            hs, vals = rec.h, rec.sup
            exact = rec.exact
            c_cal = vals[0] / (hs[0] ** 2 * rec.scale) if not exact else 0.0
        else:
            for k in range(levels):
                r = run_check(config, spec, level=k)
                if isinstance(r.record, ErrorRecord):
                    raise RuntimeError(f"check {spec.id!r} failed at level {k}: "
                                       f"{r.record.message}")
                recs.append(r.record)
            hs = [r.h for r in recs]
            vals = ([r.lhs for r in recs] if spec.type == "riccati"
                    else [_violation(r) for r in recs])
            exact = all(v <= 1e-11 for v in vals)
            c_cal = None
        orders = observed_orders(hs, vals)
        for k, (h, v) in enumerate(zip(hs, vals)):
            order = None if k == 0 else ("exact" if exact else orders[k - 1])
            rows.append(ConvergenceRow(spec.id, k, float(h), float(v), order,
                                       c_cal if k == 0 else None))
    if out_dir is not None:
        out = Path(out_dir)
        data = [[i, r.level, r.h, r.value,
                 math.nan if not isinstance(r.order, float) else r.order]
                for i, r in enumerate(rows)]
        write_table(out / "convergence.txt", ("row", "level", "h", "value", "order"), data)
        (out / "convergence.json").write_text(
            json.dumps(jsonable([asdict(r) for r in rows]), indent=1) + "\n", encoding="utf-8")
    return rows

