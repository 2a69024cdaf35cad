"""Report records shared by the identity and estimate checks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "VERDICTS",
    "EstimateReport",
    "ResidualReport",
    "classify",
    "refine",
    "residual_report",
    "observed_orders",
    "jsonable",
    "unjson",
]

VERDICTS = ("holds", "holds-within-slack", "violated", "genuine-violation")
PASSING = ("holds", "holds-within-slack")


def jsonable(obj):
    """Convert numpy scalars/arrays and tuples into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def _unjson_float(v):
    if isinstance(v, str) and v in ("inf", "-inf", "nan"):
        return float(v)
    return v


def unjson(obj):
    """Inverse of :func:`jsonable` for the non-finite float markers."""
    if isinstance(obj, dict):
        return {k: unjson(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [unjson(v) for v in obj]
    return _unjson_float(obj)


@dataclass
class EstimateReport:
    """One checked inequality.

    ``margin`` is the worst signed value of RHS - LHS over the checked
    points; ``lhs`` and ``rhs`` are the two sides at that point.
    """

    estimate: str
    params: dict
    lhs: float
    rhs: float
    margin: float
    slack: float
    h: float
    location: dict
    verdict: str
    convergence_ratio: float | None = None
    extra: dict = field(default_factory=dict)
    kind: str = "estimate"

    @property
    def passed(self) -> bool:
        return self.verdict in PASSING

    def to_dict(self) -> dict:
        return jsonable(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateReport":
        d = dict(d)
        for key in ("params", "location", "extra", "lhs", "rhs", "margin", "slack", "h",
                    "convergence_ratio"):
            d[key] = unjson(d.get(key))
        return cls(**d)


def classify(estimate, lhs, rhs, margin, slack_used, h, location=None, params=None, extra=None):
    """Build an :class:`EstimateReport` with the single-resolution verdict."""
    if not math.isfinite(margin):
        verdict = "holds" if margin > 0 else "violated"
    elif margin >= 0:
        verdict = "holds"
    elif margin >= -slack_used:
        verdict = "holds-within-slack"
    else:
        verdict = "violated"
    return EstimateReport(
        estimate=estimate, params=dict(params or {}), lhs=float(lhs), rhs=float(rhs),
        margin=float(margin), slack=float(slack_used), h=float(h),
        location=dict(location or {}), verdict=verdict, extra=dict(extra or {}),
    )


def refine(coarse: EstimateReport, fine: EstimateReport) -> EstimateReport:
    """Combine a coarse and a fine run of the same check.

    A violation survives only if it exceeds the slack at both resolutions
    and its magnitude does not shrink at observed order >= 1; it is then
    flagged ``genuine-violation``.  A violation that shrinks at order >= 1
    is reported as ``holds-within-slack``.
    """
    out = EstimateReport(**{**asdict(fine)})
    out.extra = dict(fine.extra)
    out.extra["coarse"] = {"h": coarse.h, "margin": coarse.margin, "slack": coarse.slack,
                           "verdict": coarse.verdict}
    vc = max(0.0, -coarse.margin)
    vf = max(0.0, -fine.margin)
    if vc > 0 and vf > 0:
        out.convergence_ratio = vc / vf
    if fine.verdict in PASSING:
        return out
    if coarse.verdict in PASSING:
        # violation appears only on the finer grid: cannot be a shrinking artifact
        out.verdict = "genuine-violation"
        return out
    order = math.log(vc / vf) / math.log(coarse.h / fine.h) if vf > 0 else math.inf
    out.extra["violation_order"] = order
    out.verdict = "holds-within-slack" if order >= 1.0 else "genuine-violation"
    return out


def observed_orders(hs: Sequence[float], errs: Sequence[float]) -> list[float]:
    out = []
    for (h0, e0), (h1, e1) in zip(zip(hs, errs), zip(hs[1:], errs[1:])):
        if e0 <= 0 or e1 <= 0:
            out.append(math.inf)
        else:
            out.append(math.log(e0 / e1) / math.log(h0 / h1))
    return out


@dataclass
class ResidualReport:
    """Discretization residual of an identity at several resolutions.

    ``order`` is the observed order of the finest pair, or ``None`` when
    every residual is at rounding level (``exact`` is then True).
    """

    identity: str
    h: list
    sup: list
    l2: list
    orders: list
    order: float | None
    exact: bool
    passed: bool
    scale: float
    c_slack: float
    min_order: float = 1.5
    extra: dict = field(default_factory=dict)
    kind: str = "residual"

    def to_dict(self) -> dict:
        return jsonable(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ResidualReport":
        d = dict(d)
        for key in ("h", "sup", "l2", "orders", "order", "extra"):
            d[key] = unjson(d[key])
        return cls(**d)

    @property
    def verdict(self) -> str:
        return "holds" if self.passed else "violated"


def residual_report(identity, hs, sups, l2s, scale=1.0, c_slack=10.0, min_order=1.5,
                    extra=None, rounding=1e-11, calibrate=True) -> ResidualReport:
    """Assemble a :class:`ResidualReport` and its pass flag.

    Passing requires observed order >= ``min_order`` on the finest pair and
    a finest residual within ``c_slack * h**2 * scale``.  With ``calibrate``
    the constant is raised to twice the Richardson estimate of the leading
    error coefficient on the coarsest grid, sup_0 / (h_0**2 * scale), so
    the finest level must sit on the asymptotic h**2 line predicted by the
    coarsest one.  Residuals at rounding level on every grid count as exact.
    """
    hs = [float(h) for h in hs]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError("resolutions must be strictly increasing (h decreasing)")
    sups = [float(s) for s in sups]
    l2s = [float(s) for s in l2s]
    scale = max(float(scale), 1.0)
    exact = all(s <= rounding * scale for s in sups)
    orders = observed_orders(hs, sups) if len(hs) >= 2 else []
    order = None if exact or not orders else orders[-1]
    c_used = float(c_slack)
    if calibrate and len(hs) >= 2 and not exact:
        c_used = max(c_used, 2.0 * sups[0] / (hs[0] ** 2 * scale))
    within = sups[-1] <= c_used * hs[-1] ** 2 * scale
    passed = exact or (order is not None and order >= min_order and within)
    return ResidualReport(
        identity=identity, h=hs, sup=sups, l2=l2s, orders=orders, order=order, exact=exact,
        passed=bool(passed), scale=scale, c_slack=c_used, min_order=min_order,
        extra=dict(extra or {}),
    )
