"""Energy flow of vector fields towards Killing fields.

The energy of a vector field X is I(X) = integral of |L_X g|^2 dV.  Its
gradient flow is dX/dt = div(L_X g) = Delta X + grad div X + Ric(X), with
Delta the rough (connection) Laplacian.  Killing fields are its fixed
points.  The criteria below are the stationary expressions whose zero set
consists of Killing fields on closed manifolds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .expr import FieldExpr
from .fields import sample
from .geometry import christoffel, lie_derivative_metric, raise_, riemann_ricci_scalar, tensor_norm
from .grid import GridTensor, ManifoldChart, as_array, diff1, interior_mask, partials, second_partials
from .heat import CFLError, cfl_bound

__all__ = [
    "CRITERIA",
    "EnergyIncrease",
    "FlowTrace",
    "killing_cfl_bound",
    "killing_energy",
    "killing_criteria_residual",
    "lie_derivative_sup",
    "run_killing_flow",
    "vector_field",
]

CRITERIA = ("critical_point", "self_drift", "potential_weighted", "divergence_weighted")


class EnergyIncrease(RuntimeError):
    """The energy grew by more than the per-step tolerance."""


def vector_field(chart: ManifoldChart, X) -> np.ndarray:
    """Upper components of a vector field from expressions, arrays or a GridTensor."""
    if isinstance(X, GridTensor):
        if X.variance != "u":
            raise ValueError("expected an upper-index vector field")
        return np.array(X.values, dtype=float)
    if isinstance(X, np.ndarray) and X.shape == (chart.dim,) + chart.shape:
        return X.astype(float)
    comps = list(X)
    if len(comps) != chart.dim:
        raise ValueError(f"vector field needs {chart.dim} components")
    return np.stack([sample(chart, c) for c in comps]).astype(float)


# Operators ----------------------------------------------------------------------


class _FlowOperator:
    """X -> Delta X + grad div X + Ric(X) with precomputed coefficients.

    The principal part uses the compact second differences of the scalar
    Laplacian; first-order and zeroth-order connection terms are assembled
    from the Christoffel symbols and their centered derivatives.
    """

    def __init__(self, chart: ManifoldChart):
        self.chart = chart
        m = chart.dim
        ginv = chart.metric_inv
        self.ginv = ginv
        self.fast = chart.flat and chart.periodic and chart.diagonal
        if chart.flat:
            return
        gam = christoffel(chart).values  # Gamma[k, i, j]
        dgam = partials(chart, gam)  # dgam[j, k, i, p] = d_j Gamma^k_ip
        # contracted Gamma^q = g^{jk} Gamma^q_jk
        self.cg = np.einsum("jk...,qjk...->q...", ginv, gam)
        # first-order coefficient 2 g^{jk} Gamma^i_kp, indexed [i, j, p]
        self.b = 2.0 * np.einsum("jk...,ikp...->ijp...", ginv, gam)
        zero = (np.einsum("jk...,jikp...->ip...", ginv, dgam)
                - np.einsum("q...,iqp...->ip...", self.cg, gam)
                + np.einsum("jk...,ijq...,qkp...->ip...", ginv, gam, gam))
        _, ric, _ = riemann_ricci_scalar(chart)
        self.ric_up = raise_(chart, ric.values, 0)  # R^i_p
        self.c = zero + self.ric_up
        # divergence: div X = d_p X^p + Gamma^p_pq X^q
        self.trace_gam = np.einsum("ppq...->q...", gam)
        self.m = m

    def _fast(self, X: np.ndarray) -> np.ndarray:
        c = self.chart
        hx = c.spacing
        gi = [float(self.ginv[a, a].flat[0]) for a in range(c.dim)]
        out = np.empty_like(X)
        m = c.dim
        for i in range(m):
            lap = 0.0
            for a in range(m):
                lap = lap + gi[a] * (np.roll(X[i], -1, a) - 2 * X[i] + np.roll(X[i], 1, a)) / hx[a] ** 2
            # d_i d_p X^p: compact for p = i, centered product otherwise
            dd = (np.roll(X[i], -1, i) - 2 * X[i] + np.roll(X[i], 1, i)) / hx[i] ** 2
            for p in range(m):
                if p == i:
                    continue
                dp = (np.roll(X[p], -1, p) - np.roll(X[p], 1, p)) / (2 * hx[p])
                dd = dd + (np.roll(dp, -1, i) - np.roll(dp, 1, i)) / (2 * hx[i])
            out[i] = lap + gi[i] * dd
        return out

    def divergence(self, X: np.ndarray) -> np.ndarray:
        c = self.chart
        div = sum(diff1(c, X[p], p) for p in range(c.dim))
        if not c.flat:
            div = div + np.einsum("q...,q...->...", self.trace_gam, X)
        return div

    def __call__(self, X: np.ndarray) -> np.ndarray:
        if self.fast:
            return self._fast(X)
        c = self.chart
        m = c.dim
        ginv = self.ginv
        d2 = np.stack([second_partials(c, X[i]) for i in range(m)])  # [i, j, k]
        lap = np.einsum("jk...,ijk...->i...", ginv, d2)
        # grad div: d_j (d_p X^p) from the mixed second partials
        ddiv = np.einsum("pjp...->j...", d2)
        if not c.flat:
            dX = np.stack([partials(c, X[i]) for i in range(m)])  # [i, j] = d_j X^i
            lap = (lap - np.einsum("q...,iq...->i...", self.cg, dX)
                   + np.einsum("ijp...,pj...->i...", self.b, dX)
                   + np.einsum("ip...,p...->i...", self.c, X))
            ddiv = ddiv + partials(c, np.einsum("q...,q...->...", self.trace_gam, X))
        return lap + np.einsum("ij...,j...->i...", ginv, ddiv)


def _lie(chart: ManifoldChart, X: np.ndarray) -> np.ndarray:
    if chart.flat:
        dX = np.stack([partials(chart, X[i]) for i in range(chart.dim)])  # [i, j] = d_j X^i
        # lower index with the (constant) metric: (L_X g)_jk = g_ki d_j X^i + g_ji d_k X^i
        low = np.einsum("ki...,ij...->jk...", chart.metric, dX)
        return low + np.swapaxes(low, 0, 1)
    return lie_derivative_metric(chart, X).values


def killing_energy(chart: ManifoldChart, X) -> float:
    """Quadrature of |L_X g|^2 with the sqrt(det g) weights."""
    X = vector_field(chart, X)
    L = _lie(chart, X)
    return chart.integrate(tensor_norm(chart, L, "ll", squared=True))


def lie_derivative_sup(chart: ManifoldChart, X, mask=None) -> float:
    """sup of |L_X g|_g over the grid (or ``mask``)."""
    X = vector_field(chart, X)
    n = tensor_norm(chart, _lie(chart, X), "ll")
    return float(np.max(n if mask is None else n[mask]))


def killing_cfl_bound(chart: ManifoldChart) -> float:
    """Half the scalar heat bound: the symbol of Delta + grad div is up to twice |k|^2."""
    return 0.5 * cfl_bound(chart)


# Flow ---------------------------------------------------------------------------


@dataclass(eq=False)
class FlowTrace:
    """Samples of the vector-field flow.

    Attributes
    ----------
    energy : ndarray
        I(X) at every step, index = step.
    snapshots : dict[int, ndarray]
        Field values at the retained steps.
    residuals : dict[int, float]
        sup |div L_X g| at the retained steps.
    """

    chart: ManifoldChart
    dt: float
    T: float
    nsteps: int
    energy: np.ndarray
    snapshots: dict
    residuals: dict
    monotone: bool
    worst_increase: float
    tolerance: float = 1e-10
    lie_sup: dict = field(default_factory=dict)
    method: str = "grid"

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.energy)) * self.dt

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[self.nsteps]

    def export_energy(self, path) -> Path:
        """Two-column plain text: t, I(X_t)."""
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(p, np.column_stack([self.times, self.energy]), fmt="%.17g", header="t energy")
        return p


def _pinned(chart: ManifoldChart) -> np.ndarray:
    return chart.boundary_mask()


def _spectral_ok(chart: ManifoldChart) -> bool:
    if not (chart.flat and chart.periodic and chart.diagonal):
        return False
    g = chart.metric
    return all(np.ptp(g[a, a]) == 0 for a in range(chart.dim))


class _SpectralStepper:
    """The grid RK2 scheme applied mode by mode on a flat periodic chart.

    Every stencil of the grid operator is a Fourier multiplier there: the
    compact second difference has symbol -4 sin^2(k h/2)/h^2 and the
    centered first difference i sin(k h)/h.  One RK2 step is the matrix
    G = I + dt A + (dt A)^2/2 per mode, so chunks of steps are advanced with
    precomputed powers of G and the energy follows from Parseval's identity
    with the same centered-difference symbols as :func:`killing_energy`.
    """

    def __init__(self, chart: ManifoldChart, dt: float, chunk: int = 64):
        m = chart.dim
        self.chart, self.m, self.shape = chart, m, chart.shape
        self.axes = tuple(range(1, m + 1))
        gi = np.array([float(chart.metric_inv[a, a].flat[0]) for a in range(m)])
        gl = np.array([float(chart.metric[a, a].flat[0]) for a in range(m)])
        freqs = [np.fft.fftfreq(n) for n in chart.shape[:-1]] + [np.fft.rfftfreq(chart.shape[-1])]
        ang = np.meshgrid(*[2 * np.pi * f for f in freqs], indexing="ij")
        h = chart.spacing
        sig = [4 * np.sin(ang[a] / 2) ** 2 / h[a] ** 2 for a in range(m)]
        sin = [np.sin(ang[a]) / h[a] for a in range(m)]
        self.kshape = ang[0].shape
        M = ang[0].size
        A = np.zeros((m, m, M))
        lap = sum(gi[a] * sig[a] for a in range(m)).ravel()
        for i in range(m):
            for p in range(m):
                if p == i:
                    A[i, i] = -lap - gi[i] * sig[i].ravel()
                else:
                    A[i, p] = -gi[i] * (sin[i] * sin[p]).ravel()
        eye = np.eye(m)[:, :, None]
        dA = dt * A
        G = eye + dA + 0.5 * np.einsum("ijM,jkM->ikM", dA, dA)
        P = np.empty((chunk, m, m, M))
        P[0] = G
        for j in range(1, chunk):
            P[j] = np.einsum("ijM,jkM->ikM", G, P[j - 1])
        self.P = P
        self.chunk = chunk
        # Parseval weights of the half spectrum
        w = np.full(self.kshape, 2.0)
        w[..., 0] = 1.0
        if chart.shape[-1] % 2 == 0:
            w[..., -1] = 1.0
        cell = float(chart.quadrature_weights.flat[0])
        self.w = (w * cell / np.prod(chart.shape)).ravel()
        # energy as a real quadratic form per mode: sum_ab Q_ab Re(conj(X_a) X_b)
        Q = np.zeros((m, m, M))
        for j in range(m):
            for k in range(m):
                cvec = np.zeros((m, M))
                cvec[k] += gl[k] * sin[j].ravel()
                cvec[j] += gl[j] * sin[k].ravel()
                Q += gi[j] * gi[k] * np.einsum("aM,bM->abM", cvec, cvec)
        self.Q = Q * self.w

    def forward(self, X: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(X, axes=self.axes).reshape(self.m, -1)

    def backward(self, Xh: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(Xh.reshape((self.m,) + self.kshape), s=self.shape, axes=self.axes)

    def energy(self, Xh: np.ndarray) -> np.ndarray:
        """Energies of a stack (b, m, M) of spectral fields."""
        R, I = Xh.real, Xh.imag
        total = 0.0
        for a in range(self.m):
            total = total + (R[:, a] ** 2 + I[:, a] ** 2) @ self.Q[a, a]
            for b in range(a + 1, self.m):
                total = total + 2.0 * ((R[:, a] * R[:, b] + I[:, a] * I[:, b]) @ self.Q[a, b])
        return total

    def advance(self, Xh: np.ndarray, nsteps: int):
        """Yield (first step, stacked spectral states) chunk by chunk."""
        k = 0
        while k < nsteps:
            b = min(self.chunk, nsteps - k)
            P = self.P[:b]
            Y = np.empty((b, self.m, Xh.shape[-1]), dtype=complex)
            for i in range(self.m):
                Y[:, i] = P[:, i, 0] * Xh[0]
                for j in range(1, self.m):
                    Y[:, i] += P[:, i, j] * Xh[j]
            yield k + 1, Y
            Xh = Y[-1]
            k += b


def run_killing_flow(
    chart: ManifoldChart,
    X0,
    T: float,
    dt: float | None = None,
    snapshot_times: Sequence[float] | None = None,
    n_snapshots: int = 10,
    tolerance: float = 1e-10,
    strict: bool = True,
    method: str = "auto",
) -> FlowTrace:
    """Evolve dX/dt = Delta X + grad div X + Ric(X) by explicit RK2 (midpoint).

    Values on closed chart boundaries are held fixed.  The energy is
    evaluated after every step; an increase beyond ``tolerance * (1 + I)``
    raises :class:`EnergyIncrease` when ``strict`` (otherwise it is
    recorded in ``monotone`` / ``worst_increase``).

    Parameters
    ----------
    method : {'auto', 'grid', 'spectral'}
        'grid' applies the stencils step by step.  'spectral' applies the
        identical scheme mode by mode and needs a flat periodic chart with
        a constant diagonal metric; 'auto' picks it whenever possible.

    Raises
    ------
    CFLError
        ``dt`` exceeds :func:`killing_cfl_bound`.
    FloatingPointError
        The field became non-finite.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if method not in ("auto", "grid", "spectral"):
        raise ValueError(f"unknown method {method!r}")
    spectral = _spectral_ok(chart)
    if method == "spectral" and not spectral:
        raise ValueError("spectral stepping needs a flat periodic chart with constant metric")
    use_spectral = spectral and method != "grid"
    bound = killing_cfl_bound(chart)
    if dt is None:
        dt = bound
    if dt > bound * (1 + 1e-12):
        raise CFLError(f"dt = {dt:.3e} exceeds the stability bound {bound:.3e}")
    nsteps = max(1, int(math.ceil(T / dt - 1e-9)))
    dt = T / nsteps
    X = vector_field(chart, X0)
    op = _FlowOperator(chart)
    pinned = _pinned(chart)
    free = ~pinned

    def rate(Y):
        r = op(Y)
        if pinned.any():
            r = r * free
        return r

    if snapshot_times is None:
        snapshot_times = np.linspace(0.0, T, n_snapshots + 1)
    keep = {min(nsteps, max(0, int(round(t / dt)))) for t in snapshot_times} | {0, nsteps}
    energy = np.empty(nsteps + 1)
    energy[0] = killing_energy(chart, X)
    snaps, res, lsup = {}, {}, {}
    state = {"worst": -math.inf, "monotone": True}

    def record(k, Y):
        if not np.all(np.isfinite(Y)):
            raise FloatingPointError(f"non-finite field at step {k}")
        snaps[k] = Y.copy()
        res[k] = float(np.max(tensor_norm(chart, rate(Y), "u")))
        lsup[k] = lie_derivative_sup(chart, Y)

    def check(k):
        inc = energy[k] - energy[k - 1]
        state["worst"] = max(state["worst"], inc / (1.0 + energy[k - 1]))
        if not math.isfinite(energy[k]):
            raise FloatingPointError(f"non-finite energy at step {k}")
        if inc > tolerance * (1.0 + energy[k - 1]):
            state["monotone"] = False
            if strict:
                raise EnergyIncrease(f"energy rose by {inc:.3e} at step {k}")

    record(0, X)
    if use_spectral:
        sp = _SpectralStepper(chart, dt)
        for first, Y in sp.advance(sp.forward(X), nsteps):
            ks = np.arange(first, first + Y.shape[0])
            energy[ks] = sp.energy(Y)
            for j, k in enumerate(ks):
                check(int(k))
                if int(k) in keep:
                    record(int(k), sp.backward(Y[j]))
    else:
        for k in range(1, nsteps + 1):
            mid = X + 0.5 * dt * rate(X)
            X = X + dt * rate(mid)
            if not np.all(np.isfinite(X)):
                raise FloatingPointError(f"non-finite field at step {k}")
            energy[k] = killing_energy(chart, X)
            check(k)
            if k in keep:
                record(k, X)
    return FlowTrace(chart=chart, dt=dt, T=T, nsteps=nsteps, energy=energy, snapshots=snaps,
                     residuals=res, monotone=state["monotone"], worst_increase=state["worst"],
                     tolerance=tolerance, lie_sup=lsup, method="spectral" if use_spectral else "grid")


# Stationary criteria ---------------------------------------------------------------


def killing_criteria_residual(chart: ManifoldChart, X, which: str, f=None, layer: float | None = None):
    """Residual field of a Killing criterion and its sup-norm.

    ``which`` selects

    critical_point
        Delta X + grad div X + Ric(X)  (stationary points of the energy).
    self_drift
        Delta X + grad div X + Ric_{-2X}(X) + (1/2) div(X) X, where
        Ric_{-2X} = Ric + L_X g, so the extra terms are (L_X g)(X, .)^sharp
        + (1/2) div(X) X.
    potential_weighted
        Delta X^i + grad^i div X + R^i_j X^j + nabla_j f (L_X g)^{ij}.
    divergence_weighted
        the previous one with f = div X.

    Returns
    -------
    (GridTensor, float)
        The residual (upper index) and the sup of its g-norm over points at
        coordinate distance > ``layer`` (default 4h) from closed boundaries.
    """
    if which not in CRITERIA:
        raise ValueError(f"unknown criterion {which!r}; choose from {CRITERIA}")
    X = vector_field(chart, X)
    op = _FlowOperator(chart)
    base = op(X)
    L = _lie(chart, X)
    L_up = raise_(chart, raise_(chart, L, 0), 1)  # (L_X g)^{ij}
    if which == "critical_point":
        out = base
    elif which == "self_drift":
        L_mixed = raise_(chart, L, 0)  # (L_X g)^i_j
        out = base + np.einsum("ij...,j...->i...", L_mixed, X) + 0.5 * op.divergence(X) * X
    else:
        if which == "potential_weighted":
            if f is None:
                raise ValueError("potential_weighted needs a function f")
            fv = sample(chart, f) if isinstance(f, (str, FieldExpr, int, float, np.ndarray)) else as_array(f)
        else:
            fv = op.divergence(X)
        df = partials(chart, fv)
        out = base + np.einsum("j...,ij...->i...", df, L_up)
    norm = tensor_norm(chart, out, "u")
    if not chart.periodic:
        norm = norm[interior_mask(chart, 4.0 * chart.h if layer is None else layer)]
    return GridTensor(out, "u", chart), float(np.max(norm))
