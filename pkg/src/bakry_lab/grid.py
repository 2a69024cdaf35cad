"""Structured coordinate charts, finite-difference stencils and the catalog.

Field arrays carry tensor-component axes first and grid axes last, so a
rank-r field on an m-dimensional chart has shape ``(m,)*r + chart.shape``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ManifoldChart",
    "GridTensor",
    "CATALOG",
    "build_manifold",
    "diff1",
    "diff2",
    "partials",
    "second_partials",
    "interior_mask",
    "as_array",
]

BOUNDARY_KINDS = ("periodic", "dirichlet", "neumann")
MIN_RESOLUTION = 8


@dataclass(eq=False)
class ManifoldChart:
    """A single structured chart with analytic metric data.

    Attributes
    ----------
    name : str
        Catalog name (or a derived name for reduced charts).
    lower, upper : tuple of float
        Coordinate range per axis.
    shape : tuple of int
        Grid points per axis.  Periodic axes exclude the right endpoint.
    boundary : tuple of str
        Boundary kind per axis.
    metric : ndarray, shape (m, m, *shape)
    metric_deriv : ndarray, shape (m, m, m, *shape)
        ``metric_deriv[k, i, j]`` is the coordinate derivative d_k g_ij.
    distance_fn : callable or None
        ``distance_fn(chart, p0)`` returns the exact geodesic distance field.
    injectivity_bound : float
        Lower bound for the injectivity radius at interior points.
    """

    name: str
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    shape: tuple[int, ...]
    boundary: tuple[str, ...]
    axis_names: tuple[str, ...]
    metric: np.ndarray
    metric_deriv: np.ndarray
    distance_fn: Callable | None = None
    injectivity_bound: float = math.inf
    params: dict = field(default_factory=dict)
    flat: bool = False
    recipe: tuple | None = None

    def __post_init__(self):
        m = len(self.shape)
        if any(b not in BOUNDARY_KINDS for b in self.boundary):
            raise ValueError(f"unknown boundary kind in {self.boundary}")
        if self.metric.shape != (m, m) + tuple(self.shape):
            raise ValueError("metric shape does not match the grid")
        if not np.allclose(self.metric, np.swapaxes(self.metric, 0, 1), rtol=0, atol=1e-14):
            raise ValueError("metric is not symmetric")
        gm = np.moveaxis(self.metric, (0, 1), (-2, -1))
        if np.min(np.linalg.eigvalsh(gm)) <= 0:
            raise ValueError("metric is not positive definite at some grid point")
        self._cache: dict = {}
        for arr in (self.metric, self.metric_deriv):
            arr.flags.writeable = False

    # geometry of the grid --------------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        out = []
        for lo, hi, n, b in zip(self.lower, self.upper, self.shape, self.boundary):
            out.append((hi - lo) / n if b == "periodic" else (hi - lo) / (n - 1))
        return tuple(out)

    @property
    def h(self) -> float:
        """Largest grid spacing (the refinement parameter)."""
        return max(self.spacing)

    @property
    def periodic(self) -> bool:
        return all(b == "periodic" for b in self.boundary)

    @property
    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(
            lo + hh * np.arange(n)
            for lo, hh, n in zip(self.lower, self.spacing, self.shape)
        )

    @property
    def mesh(self) -> tuple[np.ndarray, ...]:
        if "mesh" not in self._cache:
            self._cache["mesh"] = np.meshgrid(*self.coords, indexing="ij")
        return self._cache["mesh"]

    def env(self, **extra) -> dict:
        """Variable bindings for expression evaluation on this grid."""
        env = dict(zip(self.axis_names, self.mesh))
        env.update(extra)
        return env

    @property
    def metric_inv(self) -> np.ndarray:
        if "ginv" not in self._cache:
            gm = np.moveaxis(self.metric, (0, 1), (-2, -1))
            self._cache["ginv"] = np.moveaxis(np.linalg.inv(gm), (-2, -1), (0, 1))
        return self._cache["ginv"]

    @property
    def sqrt_det(self) -> np.ndarray:
        if "sqrtg" not in self._cache:
            gm = np.moveaxis(self.metric, (0, 1), (-2, -1))
            self._cache["sqrtg"] = np.sqrt(np.linalg.det(gm))
        return self._cache["sqrtg"]

    @property
    def diagonal(self) -> bool:
        """True when the metric has no off-diagonal entries."""
        if "diag" not in self._cache:
            m = self.dim
            off = [self.metric[i, j] for i in range(m) for j in range(m) if i != j]
            self._cache["diag"] = all(not np.any(o) for o in off)
        return self._cache["diag"]

    @property
    def quadrature_weights(self) -> np.ndarray:
        """Cell volumes times sqrt(det g) (trapezoid ends on closed axes)."""
        w = np.ones(self.shape)
        for ax, (hh, b) in enumerate(zip(self.spacing, self.boundary)):
            wa = np.full(self.shape[ax], hh)
            if b != "periodic":
                wa[0] *= 0.5
                wa[-1] *= 0.5
            shape = [1] * self.dim
            shape[ax] = -1
            w = w * wa.reshape(shape)
        return w * self.sqrt_det

    def integrate(self, u) -> float:
        return float(np.sum(as_array(u) * self.quadrature_weights))

    def boundary_mask(self) -> np.ndarray:
        """True on grid points lying on a non-periodic chart boundary."""
        mask = np.zeros(self.shape, dtype=bool)
        for ax, b in enumerate(self.boundary):
            if b != "periodic":
                idx = [slice(None)] * self.dim
                idx[ax] = 0
                mask[tuple(idx)] = True
                idx[ax] = -1
                mask[tuple(idx)] = True
        return mask

    def boundary_distance(self) -> np.ndarray:
        """Coordinate distance to the nearest non-periodic boundary."""
        out = np.full(self.shape, np.inf)
        for ax, b in enumerate(self.boundary):
            if b != "periodic":
                x = self.mesh[ax]
                out = np.minimum(out, np.minimum(x - self.lower[ax], self.upper[ax] - x))
        return out

    # points and distances ------------------------------------------------
    def nearest_index(self, point: Sequence[float]) -> tuple[int, ...]:
        idx = []
        for ax, p in enumerate(point):
            k = int(round((p - self.lower[ax]) / self.spacing[ax]))
            if self.boundary[ax] == "periodic":
                k %= self.shape[ax]
            elif not 0 <= k < self.shape[ax]:
                raise ValueError(f"point {tuple(point)} lies outside the chart")
            idx.append(k)
        return tuple(idx)

    def point(self, index: Sequence[int]) -> tuple[float, ...]:
        return tuple(float(c[i]) for c, i in zip(self.coords, index))

    def distance(self, p0: Sequence[float]) -> np.ndarray:
        """Exact geodesic distance from ``p0`` (snapped to the grid)."""
        if self.distance_fn is None:
            raise NotImplementedError(f"no exact distance function on chart {self.name!r}")
        p0 = self.point(self.nearest_index(p0))
        return self.distance_fn(self, p0)

    def rebuild(self, resolution) -> "ManifoldChart":
        """The same catalog chart at another resolution."""
        if self.recipe is None:
            raise ValueError("chart was not built from the catalog")
        name, params = self.recipe
        return build_manifold(name, resolution=resolution, **dict(params))

    @property
    def resolution(self) -> int:
        return self.params.get("resolution", self.shape[0])

    def __repr__(self) -> str:
        return f"ManifoldChart({self.name!r}, shape={self.shape}, boundary={self.boundary})"


@dataclass
class GridTensor:
    """A sampled tensor field.

    ``variance`` has one character per slot, ``'u'`` (upper) or ``'l'``
    (lower); rank 0 fields have an empty variance string.
    """

    values: np.ndarray
    variance: str
    chart: ManifoldChart | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.chart is not None:
            m = self.chart.dim
            expect = (m,) * self.rank + tuple(self.chart.shape)
            if self.values.shape != expect:
                raise ValueError(f"tensor shape {self.values.shape} != expected {expect}")

    @property
    def rank(self) -> int:
        return len(self.variance)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def symmetry_defect(self, i: int = 0, j: int = 1) -> float:
        """max |T_..i..j.. - T_..j..i..| relative to max |T|."""
        v = self.values
        scale = float(np.max(np.abs(v))) or 1.0
        return float(np.max(np.abs(v - np.swapaxes(v, i, j)))) / scale

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        return self.symmetry_defect() <= tol


def as_array(u) -> np.ndarray:
    if isinstance(u, GridTensor):
        return u.values
    return np.asarray(u, dtype=float)


# Finite differences ---------------------------------------------------------


def _sl(ndim: int, axis: int, s) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def diff1(chart: ManifoldChart, u, axis: int) -> np.ndarray:
    """Second-order first derivative along a grid axis.

    Centered in the interior, periodic wrap on periodic axes and
    one-sided second-order stencils at the ends of closed axes.
    """
    u = as_array(u)
    hh = chart.spacing[axis]
    ax = u.ndim - chart.dim + axis
    if chart.boundary[axis] == "periodic":
        return (np.roll(u, -1, ax) - np.roll(u, 1, ax)) / (2.0 * hh)
    nd = u.ndim
    out = np.empty_like(u)
    out[_sl(nd, ax, slice(1, -1))] = (
        u[_sl(nd, ax, slice(2, None))] - u[_sl(nd, ax, slice(None, -2))]
    ) / (2.0 * hh)
    out[_sl(nd, ax, 0)] = (
        -3.0 * u[_sl(nd, ax, 0)] + 4.0 * u[_sl(nd, ax, 1)] - u[_sl(nd, ax, 2)]
    ) / (2.0 * hh)
    out[_sl(nd, ax, -1)] = (
        3.0 * u[_sl(nd, ax, -1)] - 4.0 * u[_sl(nd, ax, -2)] + u[_sl(nd, ax, -3)]
    ) / (2.0 * hh)
    return out


def diff2(chart: ManifoldChart, u, axis: int) -> np.ndarray:
    """Second-order compact second derivative along a grid axis."""
    u = as_array(u)
    hh = chart.spacing[axis]
    ax = u.ndim - chart.dim + axis
    if chart.boundary[axis] == "periodic":
        return (np.roll(u, -1, ax) - 2.0 * u + np.roll(u, 1, ax)) / (hh * hh)
    nd = u.ndim
    out = np.empty_like(u)
    out[_sl(nd, ax, slice(1, -1))] = (
        u[_sl(nd, ax, slice(2, None))]
        - 2.0 * u[_sl(nd, ax, slice(1, -1))]
        + u[_sl(nd, ax, slice(None, -2))]
    ) / (hh * hh)
    s = lambda k: u[_sl(nd, ax, k)]  # noqa: E731
    out[_sl(nd, ax, 0)] = (2.0 * s(0) - 5.0 * s(1) + 4.0 * s(2) - s(3)) / (hh * hh)
    out[_sl(nd, ax, -1)] = (2.0 * s(-1) - 5.0 * s(-2) + 4.0 * s(-3) - s(-4)) / (hh * hh)
    return out


def partials(chart: ManifoldChart, u) -> np.ndarray:
    """Coordinate gradient stacked on a new leading axis."""
    u = as_array(u)
    return np.stack([diff1(chart, u, a) for a in range(chart.dim)])


def second_partials(chart: ManifoldChart, u) -> np.ndarray:
    """Coordinate Hessian d_i d_j u with compact diagonal stencils."""
    u = as_array(u)
    m = chart.dim
    out = np.empty((m, m) + u.shape)
    first = [diff1(chart, u, a) for a in range(m)]
    for i in range(m):
        out[i, i] = diff2(chart, u, i)
        for j in range(i + 1, m):
            out[i, j] = out[j, i] = diff1(chart, first[i], j)
    return out


def interior_mask(chart: ManifoldChart, layer: float = 0.0) -> np.ndarray:
    """Points at coordinate distance > ``layer`` from closed boundaries."""
    if layer <= 0:
        return ~chart.boundary_mask()
    return chart.boundary_distance() > layer * (1 + 1e-9)


# Catalog --------------------------------------------------------------------


def _resolution_tuple(resolution, default_shape: Callable[[int], tuple[int, ...]], m: int):
    if isinstance(resolution, (int, np.integer)):
        shape = default_shape(int(resolution))
    else:
        shape = tuple(int(r) for r in resolution)
        if len(shape) != m:
            raise ValueError(f"resolution needs {m} entries, got {len(shape)}")
    if min(shape) < MIN_RESOLUTION:
        raise ValueError(f"resolution {min(shape)} below the minimum of {MIN_RESOLUTION}")
    return shape


def _conformal(mesh, phi, dphi):
    """Metric e^{2 phi} delta and its derivatives from phi and grad phi."""
    m = len(mesh)
    e2 = np.exp(2.0 * phi)
    g = np.zeros((m, m) + phi.shape)
    dg = np.zeros((m, m, m) + phi.shape)
    for i in range(m):
        g[i, i] = e2
        for k in range(m):
            dg[k, i, i] = 2.0 * dphi[k] * e2
    return g, dg


def _flat_torus(resolution=64, dim=2, side=1.0, boundary="periodic"):
    if not 1 <= dim <= 3:
        raise ValueError("flat_torus supports 1 <= dim <= 3")
    if side <= 0:
        raise ValueError("side must be positive")
    kinds = (boundary,) * dim if isinstance(boundary, str) else tuple(boundary)
    shape = _resolution_tuple(resolution, lambda n: (n,) * dim, dim)
    names = ("x", "y", "z")[:dim]
    g = np.zeros((dim, dim) + shape)
    for i in range(dim):
        g[i, i] = 1.0
    dg = np.zeros((dim,) * 3 + shape)

    def distance(chart, p0):
        d2 = 0.0
        for ax, x in enumerate(chart.mesh):
            dx = np.abs(x - p0[ax])
            if chart.boundary[ax] == "periodic":
                dx = np.minimum(dx, side - dx)
            d2 = d2 + dx * dx
        return np.sqrt(d2)

    inj = side / 2 if all(k == "periodic" for k in kinds) else math.inf
    return dict(
        lower=(0.0,) * dim, upper=(float(side),) * dim, shape=shape, boundary=kinds,
        axis_names=names, metric=g, metric_deriv=dg, distance_fn=distance,
        injectivity_bound=inj, flat=True,
    )


def _sphere_band(resolution=32, dim=2, theta_min=0.3, radius=1.0, boundary="neumann"):
    if dim not in (2, 3):
        raise ValueError("sphere_band supports dim 2 or 3")
    if not 0 < theta_min < math.pi / 2:
        raise ValueError("theta_min must lie in (0, pi/2)")
    if radius <= 0:
        raise ValueError("radius must be positive")
    lo, hi = theta_min, math.pi - theta_min
    if dim == 2:
        shape = _resolution_tuple(resolution, lambda n: (n, 2 * n), 2)
        names = ("theta", "phi")
        lower, upper = (lo, 0.0), (hi, 2 * math.pi)
        kinds = (boundary, "periodic")
    else:
        shape = _resolution_tuple(resolution, lambda n: (n, n, 2 * n), 3)
        names = ("chi", "theta", "phi")
        lower, upper = (lo, lo, 0.0), (hi, hi, 2 * math.pi)
        kinds = (boundary, boundary, "periodic")
    axes = [np.linspace(a, b, n) if k != "periodic" else a + (b - a) / n * np.arange(n)
            for a, b, n, k in zip(lower, upper, shape, kinds)]
    mesh = np.meshgrid(*axes, indexing="ij")
    R2 = radius * radius
    g = np.zeros((dim, dim) + shape)
    dg = np.zeros((dim,) * 3 + shape)
    if dim == 2:
        th = mesh[0]
        s, c = np.sin(th), np.cos(th)
        g[0, 0] = R2
        g[1, 1] = R2 * s * s
        dg[0, 1, 1] = 2 * R2 * s * c
    else:
        ch, th = mesh[0], mesh[1]
        sc, cc, st, ct = np.sin(ch), np.cos(ch), np.sin(th), np.cos(th)
        g[0, 0] = R2
        g[1, 1] = R2 * sc * sc
        g[2, 2] = R2 * sc * sc * st * st
        dg[0, 1, 1] = 2 * R2 * sc * cc
        dg[0, 2, 2] = 2 * R2 * sc * cc * st * st
        dg[1, 2, 2] = 2 * R2 * sc * sc * st * ct

    def embed(angles):
        if dim == 2:
            th, ph = angles
            return np.stack([np.cos(th), np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph)])
        ch, th, ph = angles
        return np.stack([
            np.cos(ch),
            np.sin(ch) * np.cos(th),
            np.sin(ch) * np.sin(th) * np.cos(ph),
            np.sin(ch) * np.sin(th) * np.sin(ph),
        ])

    def distance(chart, p0):
        a = embed(chart.mesh)
        b = embed([np.asarray(p) for p in p0])
        dot = np.tensordot(b, a, axes=(0, 0))
        return radius * np.arccos(np.clip(dot, -1.0, 1.0))

    return dict(
        lower=lower, upper=upper, shape=shape, boundary=kinds, axis_names=names,
        metric=g, metric_deriv=dg, distance_fn=distance,
        injectivity_bound=math.pi * radius,
    )


def _hyperbolic_disk(resolution=64, half_width=0.6, boundary="dirichlet"):
    if not 0 < half_width < 1 / math.sqrt(2):
        raise ValueError("half_width must lie in (0, 1/sqrt(2)) so the box fits in the disk")
    shape = _resolution_tuple(resolution, lambda n: (n, n), 2)
    axes = [np.linspace(-half_width, half_width, n) for n in shape]
    x, y = np.meshgrid(*axes, indexing="ij")
    r2 = x * x + y * y
    phi = np.log(2.0 / (1.0 - r2))
    dphi = np.stack([2 * x / (1 - r2), 2 * y / (1 - r2)])
    g, dg = _conformal((x, y), phi, dphi)

    def distance(chart, p0):
        X, Y = chart.mesh
        q2 = p0[0] ** 2 + p0[1] ** 2
        d2 = (X - p0[0]) ** 2 + (Y - p0[1]) ** 2
        arg = 1.0 + 2.0 * d2 / ((1.0 - X * X - Y * Y) * (1.0 - q2))
        return np.arccosh(np.maximum(arg, 1.0))

    return dict(
        lower=(-half_width,) * 2, upper=(half_width,) * 2, shape=shape,
        boundary=(boundary,) * 2, axis_names=("x", "y"), metric=g, metric_deriv=dg,
        distance_fn=distance, injectivity_bound=math.inf,
    )


def _cigar(resolution=64, half_width=4.0, boundary="dirichlet"):
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    shape = _resolution_tuple(resolution, lambda n: (n, n), 2)
    axes = [np.linspace(-half_width, half_width, n) for n in shape]
    x, y = np.meshgrid(*axes, indexing="ij")
    r2 = x * x + y * y
    phi = -0.5 * np.log1p(r2)
    dphi = np.stack([-x / (1 + r2), -y / (1 + r2)])
    g, dg = _conformal((x, y), phi, dphi)

    def distance(chart, p0):
        # Radial lines through the origin are minimizing, so only d(0, .) is closed form.
        if abs(p0[0]) > 1e-12 or abs(p0[1]) > 1e-12:
            raise NotImplementedError("cigar distance is available from the origin only")
        X, Y = chart.mesh
        return np.arcsinh(np.sqrt(X * X + Y * Y))

    return dict(
        lower=(-half_width,) * 2, upper=(half_width,) * 2, shape=shape,
        boundary=(boundary,) * 2, axis_names=("x", "y"), metric=g, metric_deriv=dg,
        distance_fn=distance, injectivity_bound=math.inf,
    )


CATALOG = {
    "flat_torus": _flat_torus,
    "sphere_band": _sphere_band,
    "hyperbolic_disk": _hyperbolic_disk,
    "cigar": _cigar,
}


def build_manifold(name: str, resolution=None, **params) -> ManifoldChart:
    """Build a catalog chart.

    Parameters
    ----------
    name : {'flat_torus', 'sphere_band', 'hyperbolic_disk', 'cigar'}
    resolution : int or sequence of int
        Points per axis (an int is expanded per manifold; the sphere band
        uses twice as many points in phi).
    **params
        Range parameters: ``dim`` and ``side`` (flat torus), ``dim``,
        ``theta_min`` and ``radius`` (sphere band), ``half_width`` (disk,
        cigar) and ``boundary`` (all).

    Examples
    --------
    >>> chart = build_manifold("cigar", resolution=64)
    >>> chart.metric[0, 0, 32, 32] > 0
    True
    """
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown catalog manifold {name!r}; choose from {sorted(CATALOG)}") from None
    if resolution is not None:
        params["resolution"] = resolution
    data = factory(**params)
    params.setdefault("resolution", data["shape"][0])
    recipe_params = {k: v for k, v in params.items() if k != "resolution"}
    return ManifoldChart(
        name=name, params=dict(params), recipe=(name, tuple(sorted(recipe_params.items()))),
        **data,
    )
