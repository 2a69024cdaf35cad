"""Weighted heat equations and elliptic relaxation solvers.

The parabolic solver advances

    du/dt = Delta_V u - q u - a u ln u

with explicit RK2 (midpoint).  Elliptic problems Delta_V u = F(u) are solved
by relaxing the corresponding heat flow to a steady state.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .expr import FieldExpr, differentiate, evaluate, parse_expr
from .fields import _v_lap, sample
from .geometry import BakryEmerySetup, christoffel
from .grid import GridTensor, ManifoldChart, _sl, as_array, diff1, diff2

__all__ = [
    "CFLError",
    "PositivityError",
    "SolverDivergence",
    "SolverNonConvergence",
    "HeatRun",
    "EllipticSolution",
    "cfl_bound",
    "heat_operator",
    "run_weighted_heat",
    "rerun",
    "solve_v_harmonic",
    "solve_semilinear",
    "write_raster",
    "read_raster",
]

RASTER_MAGIC = b"GRIDF64\x00"


class CFLError(ValueError):
    """Time step above the explicit stability bound."""


class PositivityError(RuntimeError):
    """A positive-solution run produced a nonpositive value."""

    def __init__(self, step: int, t: float, value: float):
        super().__init__(f"positivity lost at step {step} (t = {t:.6g}): min u = {value:.3e}")
        self.step = step
        self.t = t
        self.value = value


class SolverDivergence(RuntimeError):
    pass


class SolverNonConvergence(RuntimeError):
    pass


def cfl_bound(chart: ManifoldChart) -> float:
    """Explicit step bound 0.4 h_min**2 / (m max_i g^{ii})."""
    ginv = chart.metric_inv
    gmax = max(float(np.max(ginv[i, i])) for i in range(chart.dim))
    return 0.4 * min(chart.spacing) ** 2 / (chart.dim * gmax)


def _local_cfl(chart: ManifoldChart) -> np.ndarray:
    ginv = chart.metric_inv
    gmax = np.max(np.stack([ginv[i, i] for i in range(chart.dim)]), axis=0)
    return 0.4 * min(chart.spacing) ** 2 / (chart.dim * gmax)


# Spatial operator -------------------------------------------------------------


class _Operator:
    """Delta_V with the stepping boundary rules.

    Dirichlet points are pinned (zero rate).  Neumann axes use ghost-point
    reflection: the normal first derivative vanishes and the normal second
    derivative becomes 2 (u_1 - u_0) / h**2.
    """

    def __init__(self, chart: ManifoldChart, setup: BakryEmerySetup, form: str = "auto"):
        self.chart = chart
        self.setup = setup
        neumann = [ax for ax, b in enumerate(chart.boundary) if b == "neumann"]
        if form == "auto":
            form = "density" if (setup.potential is not None and not neumann) else "trace"
        if form not in ("trace", "density"):
            raise ValueError(f"unknown form {form!r}")
        if form == "density" and neumann:
            raise ValueError("density form does not support Neumann axes")
        if neumann and not chart.diagonal:
            raise ValueError("Neumann stepping requires a diagonal metric")
        self.form = form
        self.neumann = neumann
        self.pinned = np.zeros(chart.shape, dtype=bool)
        for ax, b in enumerate(chart.boundary):
            if b == "dirichlet":
                self.pinned[_sl(chart.dim, ax, 0)] = True
                self.pinned[_sl(chart.dim, ax, -1)] = True
        if neumann:
            m = chart.dim
            ginv = chart.metric_inv
            self.gdiag = [ginv[i, i] for i in range(m)]
            drift = np.zeros((m,) + chart.shape)
            if not chart.flat:
                gam = christoffel(chart).values
                drift -= np.einsum("ij...,kij...->k...", ginv, gam)
            if not setup.zero_drift:
                drift += setup.V.values
            self.drift = drift

    def _neumann_apply(self, u: np.ndarray) -> np.ndarray:
        chart = self.chart
        nd = chart.dim
        out = np.zeros(chart.shape)
        for i in range(nd):
            d1 = diff1(chart, u, i)
            d2 = diff2(chart, u, i)
            if i in self.neumann:
                hh = chart.spacing[i]
                d1[_sl(nd, i, 0)] = 0.0
                d1[_sl(nd, i, -1)] = 0.0
                d2[_sl(nd, i, 0)] = 2.0 * (u[_sl(nd, i, 1)] - u[_sl(nd, i, 0)]) / (hh * hh)
                d2[_sl(nd, i, -1)] = 2.0 * (u[_sl(nd, i, -2)] - u[_sl(nd, i, -1)]) / (hh * hh)
            out += self.gdiag[i] * d2 + self.drift[i] * d1
        return out

    def __call__(self, u: np.ndarray) -> np.ndarray:
        if self.neumann:
            out = self._neumann_apply(u)
        else:
            out = _v_lap(self.chart, self.setup, u, self.form)
        if self.pinned.any():
            out[self.pinned] = 0.0
        return out


def heat_operator(chart: ManifoldChart, setup: BakryEmerySetup, form: str = "auto"):
    """The Delta_V used by the steppers, with boundary rules applied."""
    return _Operator(chart, setup, form)


def _source(chart: ManifoldChart, q):
    """Return (callable t -> array or None, label)."""
    if q is None or (isinstance(q, (int, float)) and q == 0):
        return (lambda t: None), 0.0
    if isinstance(q, (str, FieldExpr)):
        e = parse_expr(q)
        label = str(q) if isinstance(q, str) else q.text
        if "t" in e.symbols:
            return (lambda t: sample(chart, e, t=t)), label
        arr = sample(chart, e)
        return (lambda t: arr), label
    if callable(q):
        return (lambda t: sample(chart, lambda c: q(c, t))), getattr(q, "__name__", "callable")
    arr = sample(chart, q)
    label = float(arr.flat[0]) if np.all(arr == arr.flat[0]) else "array"
    return (lambda t: arr), label


# Parabolic runs -------------------------------------------------------------


@dataclass(eq=False)
class HeatRun:
    """A completed run of the weighted heat equation.

    Snapshots are retained at the requested times together with
    ``stencil`` neighbouring steps on either side, so centered time
    differences are available at every requested time.  The run advances
    ``stencil`` extra steps past ``T`` for that purpose.

    Attributes
    ----------
    frames : dict[int, ndarray]
        Retained solution values keyed by step index.
    centers : ndarray of int
        Step indices of the requested times.
    min_u, max_u, mass : ndarray
        Per-step diagnostics (index = step); ``mass`` is the integral of u
        against the invariant measure e^f dV.
    cfl : float
        dt divided by the stability bound.
    """

    chart: ManifoldChart
    setup: BakryEmerySetup
    dt: float
    T: float
    nsteps: int
    a: float
    q_label: object
    form: str
    frames: dict
    centers: np.ndarray
    min_u: np.ndarray
    max_u: np.ndarray
    mass: np.ndarray
    cfl: float
    stencil: int
    positive: bool
    _q: object = field(default=None, repr=False)
    recipe: dict = field(default_factory=dict, repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.centers * self.dt

    def t(self, k: int) -> float:
        return k * self.dt

    def u(self, k: int) -> np.ndarray:
        try:
            return self.frames[int(k)]
        except KeyError:
            raise KeyError(f"step {k} was not retained") from None

    def q_at(self, t: float) -> np.ndarray:
        val = self._q(t)
        return np.zeros(self.chart.shape) if val is None else val

    def step_near(self, t: float) -> int:
        """Retained center step closest to time ``t``."""
        j = int(np.argmin(np.abs(self.times - t)))
        return int(self.centers[j])

    def ut(self, k: int) -> np.ndarray:
        """Centered time derivative (u(k+1) - u(k-1)) / (2 dt)."""
        if self.stencil < 1:
            raise ValueError("run retained no neighbouring steps (stencil = 0)")
        return (self.u(k + 1) - self.u(k - 1)) / (2.0 * self.dt)

    @property
    def final(self) -> np.ndarray:
        return self.u(self.nsteps)

    def export_text(self, directory) -> list[Path]:
        """One whitespace-separated grid dump per requested time."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for k in self.centers:
            p = out / f"u_step{int(k):08d}.txt"
            arr = self.u(k)
            np.savetxt(p, arr.reshape(arr.shape[0], -1), fmt="%.17g",
                       header=f"t={self.t(k)!r} shape={','.join(map(str, arr.shape))}")
            paths.append(p)
        return paths

    def export_raster(self, directory) -> list[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for k in self.centers:
            p = out / f"u_step{int(k):08d}.f64"
            write_raster(p, self.u(k))
            paths.append(p)
        return paths

    def export_diagnostics(self, path) -> None:
        """Columns: t, min u, max u, weighted mass."""
        t = np.arange(len(self.min_u)) * self.dt
        np.savetxt(path, np.column_stack([t, self.min_u, self.max_u, self.mass]),
                   fmt="%.17g", header="t min_u max_u mass")


def run_weighted_heat(
    chart: ManifoldChart,
    setup: BakryEmerySetup,
    u0,
    T: float,
    dt: float | None = None,
    q=0.0,
    a: float = 0.0,
    snapshot_times: Sequence[float] | None = None,
    stencil: int = 2,
    form: str = "auto",
    positive: bool | None = None,
    n_snapshots: int = 20,
) -> HeatRun:
    """Solve du/dt = Delta_V u - q u - a u ln u by explicit RK2.

    Parameters
    ----------
    u0 : expression, array or GridTensor
        Initial data; Dirichlet boundary values are held fixed at u0.
    T : float
        Final time.  ``dt`` is reduced so that T is a whole number of steps.
    dt : float, optional
        Time step, at most :func:`cfl_bound`; defaults to the bound.
    q : number, expression (possibly in t), array or callable(chart, t)
    a : float
        Coefficient of the u ln u term; a != 0 requires u0 > 0.
    snapshot_times : sequence of float, optional
        Times to retain; defaults to ``n_snapshots`` equally spaced times.
    stencil : int
        Neighbouring steps kept on each side of every requested time.
    form : {'auto', 'trace', 'density'}
        ``'auto'`` uses the conservative density form when V = grad f.
    positive : bool, optional
        Abort on loss of positivity.  Defaults to ``min(u0) > 0``.

    Raises
    ------
    CFLError
        ``dt`` exceeds the stability bound.
    PositivityError
        A positive run produced u <= 0.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    bound = cfl_bound(chart)
    if dt is None:
        dt = bound
    if dt > bound * (1 + 1e-12):
        raise CFLError(f"dt = {dt:.3e} exceeds the stability bound {bound:.3e}")
    nsteps = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / nsteps
    u = sample(chart, u0).astype(float)
    if positive is None:
        positive = bool(np.min(u) > 0)
    if a != 0 and np.min(u) <= 0:
        raise ValueError("a != 0 requires u0 > 0 everywhere")
    op = _Operator(chart, setup, form)
    qf, qlabel = _source(chart, q)
    weights = chart.quadrature_weights * setup.weight()

    if snapshot_times is None:
        snapshot_times = np.linspace(T / n_snapshots, T, n_snapshots)
    centers = sorted({min(max(int(round(t / dt)), stencil), nsteps) for t in snapshot_times})
    keep = {0}
    for k in centers:
        keep.update(range(k - stencil, k + stencil + 1))
    total = nsteps + stencil

    def rate(v, t):
        r = op(v)
        qq = qf(t)
        if qq is not None:
            r = r - qq * v
        if a != 0:
            r = r - a * v * np.log(v)
        if op.pinned.any():
            r[op.pinned] = 0.0
        return r

    def check(v, k, t):
        if not np.all(np.isfinite(v)):
            raise FloatingPointError(f"non-finite values at step {k}")
        if positive:
            mn = float(np.min(v))
            if mn <= 0:
                raise PositivityError(k, t, mn)

    frames = {0: u.copy()}
    mins = np.empty(total + 1)
    maxs = np.empty(total + 1)
    mass = np.empty(total + 1)
    mins[0], maxs[0], mass[0] = u.min(), u.max(), float(np.sum(u * weights))
    for k in range(1, total + 1):
        t = (k - 1) * dt
        k1 = rate(u, t)
        mid = u + 0.5 * dt * k1
        check(mid, k, t + 0.5 * dt)
        u = u + dt * rate(mid, t + 0.5 * dt)
        check(u, k, t + dt)
        mins[k], maxs[k], mass[k] = u.min(), u.max(), float(np.sum(u * weights))
        if k in keep:
            frames[k] = u.copy()
    return HeatRun(
        chart=chart, setup=setup, dt=dt, T=T, nsteps=nsteps, a=float(a), q_label=qlabel,
        form=op.form, frames=frames, centers=np.array(centers, dtype=int), min_u=mins,
        max_u=maxs, mass=mass, cfl=dt / bound, stencil=stencil, positive=positive, _q=qf,
        recipe=dict(u0=u0, T=T, q=q, a=a, snapshot_times=list(snapshot_times), stencil=stencil,
                    form=form, positive=positive),
    )


def rerun(run: HeatRun, chart: ManifoldChart, setup: BakryEmerySetup | None = None) -> HeatRun:
    """Repeat ``run`` on another chart with the same dt-to-CFL ratio.

    The initial data and source must be expressions or callables.
    """
    rec = run.recipe
    for key in ("u0", "q"):
        if isinstance(rec[key], (np.ndarray, GridTensor)):
            raise ValueError(f"cannot transfer array-valued {key} to another chart")
    setup = setup if setup is not None else run.setup.on(chart)
    dt = min(run.cfl, 1.0) * cfl_bound(chart)
    return run_weighted_heat(chart, setup, rec["u0"], rec["T"], dt=dt, q=rec["q"], a=rec["a"],
                             snapshot_times=rec["snapshot_times"], stencil=rec["stencil"],
                             form=rec["form"], positive=rec["positive"])


# Elliptic relaxation ----------------------------------------------------------


@dataclass
class EllipticSolution:
    """Steady state of a relaxation solve with its diagnostics."""

    u: GridTensor
    residual: float
    tol: float
    steps: int
    fprime_range: tuple[float, float] | None = None
    history: list = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return self.u.values


def _relax(chart, setup, u, F, tol, max_steps, damping, check_every, closed):
    op = _Operator(chart, setup)
    free = ~op.pinned
    if closed:
        dt = np.full(chart.shape, cfl_bound(chart))
    else:
        dt = _local_cfl(chart)
    dt = damping * dt
    if F is not None:
        fp = F[1](u)
        stiff = float(np.max(np.abs(fp))) if np.size(fp) else 0.0
        if stiff > 0:
            dt = np.minimum(dt, damping / stiff)
    scale = max(1.0, float(np.max(np.abs(u))))
    tol = tol if tol is not None else 1e-8 * scale
    history = []  # (step, residual)

    def residual(v):
        r = op(v)
        if F is not None:
            r = r - F[0](v)
        r[~free] = 0.0
        return r

    for step in range(0, max_steps + 1):
        r = residual(u)
        if step % check_every == 0:
            res = float(np.max(np.abs(r)))
            if not math.isfinite(res):
                raise SolverDivergence(f"non-finite residual at step {step}")
            history.append((step, res))
            if res < tol:
                return u, res, tol, step, history
            # compare with the residual 10**4 steps earlier
            back = [hr for s, hr in history if s <= step - 10_000]
            if back and res > 10.0 * back[-1]:
                raise SolverDivergence(f"residual grew from {back[-1]:.3e} to {res:.3e}")
        u = u + dt * r
    raise SolverNonConvergence(f"no convergence in {max_steps} steps (residual {history[-1][1]:.3e})")


def _is_closed(chart: ManifoldChart) -> bool:
    return "dirichlet" not in chart.boundary


def solve_v_harmonic(
    chart: ManifoldChart,
    setup: BakryEmerySetup,
    boundary_data=None,
    normalization: float | None = None,
    u0=None,
    tol: float | None = None,
    max_steps: int = 10**6,
    damping: float = 1.0,
    check_every: int = 50,
) -> EllipticSolution:
    """Solve Delta_V u = 0 by relaxing du/dt = Delta_V u.

    Parameters
    ----------
    boundary_data : expression or array
        Dirichlet data on charts with Dirichlet axes; also the initial guess.
    normalization : float, optional
        Closed charts: rescale the steady state so that the integral of u
        against dV equals this value.
    u0 : optional
        Initial guess (required on closed charts without normalization).
    tol : float, optional
        Stop once max |Delta_V u| < tol; default 1e-8 * max(1, max|u|).
    """
    closed = _is_closed(chart)
    if closed:
        if u0 is None and normalization is None:
            raise ValueError("closed charts need an initial guess or a normalization")
        u = sample(chart, u0 if u0 is not None else 1.0)
    else:
        if boundary_data is None:
            raise ValueError("charts with Dirichlet axes need boundary data")
        u = sample(chart, boundary_data)
        if u0 is not None:
            op_mask = _Operator(chart, setup).pinned
            u = np.where(op_mask, u, sample(chart, u0))
    u, res, tol, steps, hist = _relax(chart, setup, u, None, tol, max_steps, damping,
                                      check_every, closed)
    if closed and normalization is not None:
        total = chart.integrate(u)
        if total == 0:
            raise ValueError("cannot normalize a solution with zero integral")
        u = u * (normalization / total)
    return EllipticSolution(GridTensor(u, "", chart), res, tol, steps, None, hist)


def _semilinear_callables(F_expr, chart):
    e = parse_expr(F_expr)
    de = differentiate(e, "u")
    base = chart.env()

    def F(v):
        return np.broadcast_to(evaluate(e, {**base, "u": v}), chart.shape)

    def dF(v):
        return np.broadcast_to(evaluate(de, {**base, "u": v}), chart.shape)

    return F, dF


def solve_semilinear(
    chart: ManifoldChart,
    setup: BakryEmerySetup,
    F_expr,
    u0,
    boundary_data=None,
    tol: float | None = None,
    max_steps: int = 10**6,
    damping: float = 1.0,
    check_every: int = 50,
) -> EllipticSolution:
    """Solve Delta_V u = F(u) by relaxing du/dt = Delta_V u - F(u).

    ``F_expr`` is an expression in ``u`` and the chart coordinates.  Dirichlet
    values come from ``boundary_data`` (default: u0).  The range of F'(u)
    over the solution is returned for checking hypotheses on F.

    Raises
    ------
    SolverDivergence
        The residual grew tenfold over 10**4 steps or became non-finite.
    ExprEvalError
        F could not be evaluated (e.g. log of a nonpositive value).
    """
    F, dF = _semilinear_callables(F_expr, chart)
    u = sample(chart, u0)
    if boundary_data is not None:
        pinned = _Operator(chart, setup).pinned
        u = np.where(pinned, sample(chart, boundary_data), u)
    closed = _is_closed(chart)
    u, res, tol, steps, hist = _relax(chart, setup, u, (F, dF), tol, max_steps, damping,
                                      check_every, closed)
    fp = dF(u)
    return EllipticSolution(GridTensor(u, "", chart), res, tol, steps,
                            (float(np.min(fp)), float(np.max(fp))), hist)


# Binary raster ----------------------------------------------------------------


def write_raster(path, arr) -> None:
    """Binary dump: 8-byte magic, uint64 ndim, uint64 dims, row-major float64.

    All integers and floats are little-endian.
    """
    arr = np.ascontiguousarray(as_array(arr), dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(struct.pack("<Q", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_raster(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != RASTER_MAGIC:
        raise ValueError("not a grid raster file")
    (nd,) = struct.unpack_from("<Q", data, 8)
    shape = struct.unpack_from(f"<{nd}Q", data, 16)
    off = 16 + 8 * nd
    return np.frombuffer(data, dtype="<f8", offset=off).reshape(shape).copy()
