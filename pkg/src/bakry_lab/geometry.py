"""Curvature and Bakry-Emery tensors on catalog charts.

Curvature conventions: ``R(X, Y)Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z
- nabla_[X,Y] Z`` with components ``R(d_i, d_j) d_k = R^l_{ijk} d_l``,
``Rm_{ijkl} = <R(d_i, d_j) d_k, d_l>`` and ``Ric_{jk} = R^i_{ijk}``.  With
these conventions the round sphere has ``Ric = g`` and the commutation rule
``nabla_i nabla_k w_j - nabla_k nabla_i w_j = -Rm_{ikjl} w^l`` holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .expr import FieldExpr, differentiate, evaluate, parse_expr
from .grid import GridTensor, ManifoldChart, as_array, partials

__all__ = [
    "christoffel",
    "covariant_derivative",
    "riemann_ricci_scalar",
    "lower",
    "raise_",
    "inner",
    "tensor_norm",
    "lie_derivative_metric",
    "BakryEmerySetup",
    "SetupSpec",
    "make_setup",
    "bakry_emery",
    "JacobiNonConvergence",
    "jacobi_eigvalsh",
    "generalized_eigvalsh",
    "CurvatureBounds",
    "curvature_bounds",
    "slack",
    "DEFAULT_C_SLACK",
]

DEFAULT_C_SLACK = 10.0


def slack(chart_or_h, c_slack: float = DEFAULT_C_SLACK, scale: float = 1.0) -> float:
    """Discretization tolerance ``c_slack * h**2 * scale``."""
    h = chart_or_h.h if isinstance(chart_or_h, ManifoldChart) else float(chart_or_h)
    return c_slack * h * h * max(scale, 1.0)


# Connection -----------------------------------------------------------------


def christoffel(chart: ManifoldChart) -> GridTensor:
    """Levi-Civita symbols ``Gamma[k, i, j]`` from the analytic metric derivatives."""
    if "gamma" not in chart._cache:
        dg = chart.metric_deriv
        # S[i, j, l] = d_i g_jl + d_j g_il - d_l g_ij
        S = dg + np.swapaxes(dg, 0, 1) - np.moveaxis(dg, 0, 2)
        gam = 0.5 * np.einsum("kl...,ijl...->kij...", chart.metric_inv, S)
        gam = 0.5 * (gam + np.swapaxes(gam, 1, 2))
        chart._cache["gamma"] = gam
    return GridTensor(chart._cache["gamma"], "ull", chart)


def covariant_derivative(chart: ManifoldChart, T, variance: str = "") -> np.ndarray:
    """Covariant derivative with the new (lower) slot placed first.

    Parameters
    ----------
    T : array_like, shape (m,)*r + chart.shape
    variance : str
        One of ``'u'``/``'l'`` per slot of ``T``.

    Returns
    -------
    ndarray, shape (m,)*(r+1) + chart.shape
        ``out[a, i1, ..., ir] = nabla_a T_{i1...ir}``.
    """
    if isinstance(T, GridTensor):
        variance = T.variance
    T = as_array(T)
    out = partials(chart, T)
    if chart.flat or not variance:
        return out
    gam = christoffel(chart).values
    for s, var in enumerate(variance):
        Ts = np.moveaxis(T, s, 0)
        if var == "l":
            corr = -np.einsum("pai...,p...->ai...", gam, Ts)
        else:
            corr = np.einsum("iap...,p...->ai...", gam, Ts)
        out = out + np.moveaxis(corr, 1, s + 1)
    return out


# Index gymnastics -----------------------------------------------------------


def lower(chart: ManifoldChart, V, slot: int = 0) -> np.ndarray:
    """Lower the index in ``slot`` with g."""
    V = np.moveaxis(as_array(V), slot, 0)
    return np.moveaxis(np.einsum("ij...,j...->i...", chart.metric, V), 0, slot)


def raise_(chart: ManifoldChart, w, slot: int = 0) -> np.ndarray:
    """Raise the index in ``slot`` with g^{-1}."""
    w = np.moveaxis(as_array(w), slot, 0)
    return np.moveaxis(np.einsum("ij...,j...->i...", chart.metric_inv, w), 0, slot)


def inner(chart: ManifoldChart, X, Y) -> np.ndarray:
    """g(X, Y) for upper-index vector fields."""
    return np.einsum("ij...,i...,j...->...", chart.metric, as_array(X), as_array(Y))


def tensor_norm(chart: ManifoldChart, T, variance: str, squared: bool = False) -> np.ndarray:
    """Pointwise metric norm with every slot contracted against g or g^{-1}."""
    T = as_array(T)
    S = T
    for s, var in enumerate(variance):
        S = raise_(chart, S, s) if var == "l" else lower(chart, S, s)
    r = len(variance)
    n2 = np.sum(T * S, axis=tuple(range(r))) if r else T * T
    n2 = np.maximum(n2, 0.0)
    return n2 if squared else np.sqrt(n2)


# Curvature ------------------------------------------------------------------


def _project_curvature(R: np.ndarray) -> np.ndarray:
    """Project onto tensors with the pair antisymmetries and pair symmetry."""
    R = 0.5 * (R - np.swapaxes(R, 0, 1))
    R = 0.5 * (R - np.swapaxes(R, 2, 3))
    perm = (2, 3, 0, 1) + tuple(range(4, R.ndim))
    return 0.5 * (R + np.transpose(R, perm))


def riemann_ricci_scalar(chart: ManifoldChart):
    """Riemann, Ricci and scalar curvature by finite differences of Gamma.

    Returns
    -------
    Rm : GridTensor 'llll'
        ``Rm[i, j, k, l] = <R(d_i, d_j) d_k, d_l>``.
    Ric : GridTensor 'll'
    R : GridTensor ''
    """
    if "curv" not in chart._cache:
        m = chart.dim
        gam = christoffel(chart).values
        if chart.flat:
            Rm = np.zeros((m,) * 4 + chart.shape)
        else:
            dgam = partials(chart, gam)  # [a, l, j, k]
            Rup = (
                np.einsum("iljk...->lijk...", dgam)
                - np.einsum("jlik...->lijk...", dgam)
                + np.einsum("lip...,pjk...->lijk...", gam, gam)
                - np.einsum("ljp...,pik...->lijk...", gam, gam)
            )
            Rm = np.einsum("lp...,pijk...->ijkl...", chart.metric, Rup)
            Rm = _project_curvature(Rm)
        Ric = np.einsum("il...,ijkl...->jk...", chart.metric_inv, Rm)
        Ric = 0.5 * (Ric + np.swapaxes(Ric, 0, 1))
        R = np.einsum("jk...,jk...->...", chart.metric_inv, Ric)
        chart._cache["curv"] = (Rm, Ric, R)
    Rm, Ric, R = chart._cache["curv"]
    return GridTensor(Rm, "llll", chart), GridTensor(Ric, "ll", chart), GridTensor(R, "", chart)


def lie_derivative_metric(chart: ManifoldChart, V) -> GridTensor:
    """(L_V g)_ij = nabla_i V_j + nabla_j V_i for an upper-index field V."""
    dV = covariant_derivative(chart, lower(chart, V), "l")
    return GridTensor(dV + np.swapaxes(dV, 0, 1), "ll", chart)


def _antisymmetric_part(chart: ManifoldChart, V) -> np.ndarray:
    dV = covariant_derivative(chart, lower(chart, V), "l")
    return 0.5 * (dV - np.swapaxes(dV, 0, 1))


# Bakry-Emery setup ----------------------------------------------------------


@dataclass(frozen=True)
class SetupSpec:
    """Chart-independent description of a Bakry-Emery setup.

    Exactly one of ``V`` (upper components as expressions, or a named field)
    and ``potential`` (V = grad f) may be given; neither means V = 0.
    """

    V: tuple[str, ...] | str | None = None
    potential: str | None = None
    n: float | None = None

    def build(self, chart: ManifoldChart) -> "BakryEmerySetup":
        return make_setup(chart, V=self.V, potential=self.potential, n=self.n)

    def to_dict(self) -> dict:
        return {"V": list(self.V) if isinstance(self.V, tuple) else self.V,
                "potential": self.potential, "n": self.n}


NAMED_FIELDS = ("zero", "rotation")


def _named_field(chart: ManifoldChart, name: str) -> np.ndarray:
    m = chart.dim
    V = np.zeros((m,) + chart.shape)
    if name == "zero":
        return V
    if name == "rotation":
        if chart.name == "sphere_band":
            V[-1] = 1.0  # d/dphi
        elif m == 2:
            x, y = chart.mesh
            V[0], V[1] = -y, x
        else:
            raise ValueError(f"no rotation field defined on {chart.name!r} with dim {m}")
        return V
    raise ValueError(f"unknown named vector field {name!r}; choose from {NAMED_FIELDS}")


@dataclass(eq=False)
class BakryEmerySetup:
    """The pair (V, n) on a chart, optionally tagged as a gradient field.

    Attributes
    ----------
    V : GridTensor 'u'
    n : float
    potential : GridTensor '' or None
        f with V = grad f when the gradient flag is set.
    spec : SetupSpec or None
        Recipe to rebuild the setup on another chart.
    """

    chart: ManifoldChart
    V: GridTensor
    n: float
    potential: GridTensor | None = None
    spec: SetupSpec | None = None
    gradient_defect: float = field(default=0.0, init=False)

    def __post_init__(self):
        m = self.chart.dim
        if self.V.rank != 1 or self.V.variance != "u":
            raise ValueError("V must be an upper-index vector field")
        if self.zero_drift:
            if self.n < m:
                raise ValueError(f"n = {self.n} must be >= m = {m}")
        elif not self.n > m:
            raise ValueError(f"n = {self.n} must exceed m = {m} when V is not identically zero")
        if self.potential is not None:
            grad = raise_(self.chart, partials(self.chart, self.potential.values))
            defect = float(np.max(tensor_norm(self.chart, self.V.values - grad, "u")))
            scale = float(np.max(tensor_norm(self.chart, self.V.values, "u")))
            object.__setattr__(self, "gradient_defect", defect)
            if defect > slack(self.chart, scale=scale):
                raise ValueError(f"V differs from grad f by {defect:.3e} (beyond slack)")

    @property
    def zero_drift(self) -> bool:
        return not np.any(self.V.values)

    @property
    def gradient(self) -> bool:
        return self.potential is not None or self.zero_drift

    @property
    def nm_gap(self) -> float:
        return self.n - self.chart.dim

    def on(self, chart: ManifoldChart) -> "BakryEmerySetup":
        """Rebuild the same setup on another chart."""
        if self.spec is None:
            raise ValueError("setup has no recipe; construct it with make_setup")
        return self.spec.build(chart)

    def weight(self) -> np.ndarray:
        """Density e^f of the invariant measure (1 when V = 0)."""
        if self.potential is None:
            return np.ones(self.chart.shape)
        return np.exp(self.potential.values)


def make_setup(chart: ManifoldChart, V=None, potential=None, n=None) -> BakryEmerySetup:
    """Build a :class:`BakryEmerySetup` from expressions, arrays or names.

    Parameters
    ----------
    V : None, str, sequence of (str or array), or array
        Upper components of the drift.  A bare string names a catalog field
        (``'zero'`` or ``'rotation'``).
    potential : str, FieldExpr or array, optional
        f with V = grad f.  Expressions are differentiated exactly.
    n : float, optional
        Dimension parameter; defaults to m when V = 0 and m + 1 otherwise.
    """
    m = chart.dim
    if V is not None and potential is not None:
        raise ValueError("give either V or a potential, not both")
    spec_V, spec_f = None, None
    pot = None
    if potential is not None:
        if isinstance(potential, (str, FieldExpr)):
            fexpr = parse_expr(potential)
            spec_f = str(potential) if isinstance(potential, str) else potential.text
            env = chart.env()
            f = np.broadcast_to(evaluate(fexpr, env), chart.shape).astype(float)
            df = np.stack([
                np.broadcast_to(evaluate(differentiate(fexpr, a), env), chart.shape)
                for a in chart.axis_names
            ]).astype(float)
        else:
            f = np.broadcast_to(as_array(potential), chart.shape).astype(float)
            df = partials(chart, f)
        Vv = raise_(chart, df)
        pot = GridTensor(f, "", chart)
    elif V is None:
        Vv = np.zeros((m,) + chart.shape)
    elif isinstance(V, str):
        Vv = _named_field(chart, V)
        spec_V = V
    else:
        comps = list(V)
        if len(comps) != m:
            raise ValueError(f"V needs {m} components")
        arrs = []
        for c in comps:
            if isinstance(c, (str, FieldExpr, int, float)):
                arrs.append(np.broadcast_to(evaluate(parse_expr(c), chart.env()), chart.shape))
            else:
                arrs.append(np.broadcast_to(as_array(c), chart.shape))
        Vv = np.stack(arrs).astype(float)
        if all(isinstance(c, (str, int, float)) for c in comps):
            spec_V = tuple(str(c) for c in comps)
    Vt = GridTensor(Vv, "u", chart)
    if n is None:
        n = float(m) if not np.any(Vv) else float(m + 1)
    spec = None
    if (potential is None or spec_f is not None) and (V is None or spec_V is not None):
        spec = SetupSpec(V=spec_V, potential=spec_f, n=n)
    return BakryEmerySetup(chart, Vt, float(n), pot, spec)


def bakry_emery(chart: ManifoldChart, setup: BakryEmerySetup):
    """Ric_V, Ric_V^{n,m} and the antisymmetric part A_V of nabla V.

    Ric_V = Ric - (1/2) L_V g and Ric_V^{n,m} = Ric_V - V(x)V/(n - m), where
    the last term is dropped when V = 0 and n = m.
    """
    key = ("be", id(setup))
    if key not in chart._cache:
        _, Ric, _ = riemann_ricci_scalar(chart)
        V = setup.V.values
        ricv = Ric.values - 0.5 * lie_derivative_metric(chart, V).values
        if setup.zero_drift:
            ricnm = ricv.copy()
        else:
            Vl = lower(chart, V)
            ricnm = ricv - np.einsum("i...,j...->ij...", Vl, Vl) / setup.nm_gap
        A = _antisymmetric_part(chart, V)
        chart._cache[key] = (ricv, ricnm, A, setup)
    ricv, ricnm, A, _ = chart._cache[key]
    return GridTensor(ricv, "ll", chart), GridTensor(ricnm, "ll", chart), GridTensor(A, "ll", chart)


# Generalized eigenvalues ----------------------------------------------------


class JacobiNonConvergence(RuntimeError):
    pass


def jacobi_eigvalsh(S: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a batch of symmetric matrices by cyclic Jacobi sweeps.

    Parameters
    ----------
    S : ndarray, shape (P, m, m)
    tol : float
        Sweeps stop once the off-diagonal Frobenius norm is below
        ``tol`` times the matrix Frobenius norm at every batch entry.

    Returns
    -------
    ndarray, shape (P, m)
        Eigenvalues in ascending order.
    """
    A = 0.5 * (S + np.swapaxes(S, -1, -2))
    A = A.astype(float, copy=True)
    P, m, _ = A.shape
    scale = np.sqrt(np.sum(A * A, axis=(1, 2)))
    offmask = ~np.eye(m, dtype=bool)
    for _ in range(max_sweeps + 1):
        off = np.sqrt(np.sum(A[:, offmask] ** 2, axis=1))
        if np.all(off <= tol * scale):
            return np.sort(np.diagonal(A, axis1=1, axis2=2), axis=1)
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = A[:, p, q]
                active = np.abs(apq) > 1e-300
                safe = np.where(active, apq, 1.0)
                tau = (A[:, q, q] - A[:, p, p]) / (2.0 * safe)
                sgn = np.where(tau >= 0, 1.0, -1.0)
                t = np.where(active, sgn / (np.abs(tau) + np.hypot(1.0, tau)), 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                c_, s_ = c[:, None], s[:, None]
                colp, colq = A[:, :, p].copy(), A[:, :, q].copy()
                A[:, :, p] = c_ * colp - s_ * colq
                A[:, :, q] = s_ * colp + c_ * colq
                rowp, rowq = A[:, p, :].copy(), A[:, q, :].copy()
                A[:, p, :] = c_ * rowp - s_ * rowq
                A[:, q, :] = s_ * rowp + c_ * rowq
    raise JacobiNonConvergence(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


def generalized_eigvalsh(T, g, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of T relative to g at every grid point.

    Uses the congruence S = L^{-1} T L^{-T} with g = L L^T, followed by
    Jacobi sweeps.  Returns shape (m, *grid) in ascending order.
    """
    T, g = as_array(T), as_array(g)
    m = T.shape[0]
    grid = T.shape[2:]
    Tb = np.moveaxis(T, (0, 1), (-2, -1)).reshape(-1, m, m)
    gb = np.moveaxis(g, (0, 1), (-2, -1)).reshape(-1, m, m)
    Linv = np.linalg.inv(np.linalg.cholesky(gb))
    S = Linv @ Tb @ np.swapaxes(Linv, -1, -2)
    lam = jacobi_eigvalsh(S, tol, max_sweeps)
    return np.moveaxis(lam.reshape(grid + (m,)), -1, 0)


# Curvature bounds -----------------------------------------------------------


@dataclass
class CurvatureBounds:
    """Curvature constants entering the estimates.

    ``K_plain`` bounds Ric_V^{n,m} >= -K_plain g; ``K_scaled`` is
    ``K_plain / (n - 1)``; ``K_ricv`` bounds Ric_V >= -K_ricv g.  The signed
    minima are kept for comparison checks.  |Rm| is the full tensor g-norm.
    """

    K_plain: float
    K_scaled: float
    K1: float
    K2: float
    supV2: float
    K_ricv: float
    ric_nm_min: float
    ric_v_min: float
    rm_norm: str = "full tensor g-norm"

    def to_dict(self) -> dict:
        return asdict(self)


def curvature_bounds(chart: ManifoldChart, setup: BakryEmerySetup, mask=None) -> CurvatureBounds:
    """Grid maxima and minima of the curvature quantities.

    Parameters
    ----------
    mask : bool array, optional
        Restrict the extrema to these grid points.
    """
    Rm, _, _ = riemann_ricci_scalar(chart)
    ricv, ricnm, _ = bakry_emery(chart, setup)
    sel = np.ones(chart.shape, dtype=bool) if mask is None else np.asarray(mask, bool)
    lam_nm = generalized_eigvalsh(ricnm.values, chart.metric)[0][sel]
    lam_v = generalized_eigvalsh(ricv.values, chart.metric)[0][sel]
    k1 = tensor_norm(chart, Rm.values, "llll") + tensor_norm(chart, ricv.values, "ll")
    dric = covariant_derivative(chart, ricv.values, "ll")
    k2 = tensor_norm(chart, dric, "lll")
    v2 = tensor_norm(chart, setup.V.values, "u", squared=True)
    K_plain = max(0.0, -float(np.min(lam_nm)))
    return CurvatureBounds(
        K_plain=K_plain,
        K_scaled=K_plain / (setup.n - 1.0) if setup.n > 1 else math.inf,
        K1=float(np.max(k1[sel])),
        K2=float(np.max(k2[sel])),
        supV2=float(np.max(v2[sel])),
        K_ricv=max(0.0, -float(np.min(lam_v))),
        ric_nm_min=float(np.min(lam_nm)),
        ric_v_min=float(np.min(lam_v)),
    )
