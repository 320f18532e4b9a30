"""Flows of compactly supported fields and the first variation of mod_p^p.

The variation of ``t -> mod_p(F_t)**p`` with ``F_t = phi_t(F)`` is computed
two independent ways:

* analytically, ``-p * int f0**(p-1) * (g(grad f0, X) + f0 * div_F X)``,
  from the closed-form extremal function of ``F`` alone;
* by a 4-point central difference of the closed-form modulus of the pushed
  foliations, whose submersions ``phi o flow(-t)`` are traced afresh.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    ChartQuadrature,
    Curve,
    FunctionField,
    GeometryError,
    MetricChart,
    VectorField,
    div_leafwise,
    gradient,
)
from .foliation import (
    LeafFamily,
    SubmersionFoliation,
    admissibility_diagnostics,
    extremal_closed_form,
    modulus_closed_form,
)
from .tracing import LevelSetSystem, trace_level_curves

__all__ = [
    "Flow",
    "FlowedFoliation",
    "VariationReport",
    "flow_point",
    "leaf_jacobian",
    "leafwise_jacobian_rate",
    "divflow_residual",
    "check_compact_support",
    "variation_integrand",
    "variation_analytic",
    "variation_fd",
    "variation_linearity_check",
    "flowed_foliations",
    "default_t_step",
]


class Flow:
    """Flow of ``X`` by classical RK4 with substeps of at most ``h_flow``.

    ``map`` works in unwrapped chart coordinates so compositions with a
    submersion stay continuous across a periodic seam; :func:`flow_point`
    wraps the result.
    """

    def __init__(self, X: VectorField, chart: Optional[MetricChart] = None,
                 h_flow: float = 1e-2, t_max: float = 1.0):
        self.X = X
        self.chart = chart
        self.h_flow = float(h_flow)
        self.t_max = float(t_max)

    def _field(self, u, v):
        # X lives on the chart: evaluate it at wrapped coordinates
        if self.chart is not None:
            u, v = self.chart.wrap(u, v)
        return self.X(u, v)

    def map(self, t, u, v):
        t = np.asarray(t, dtype=float)
        tmax = float(np.max(np.abs(t))) if t.size else 0.0
        if tmax > self.t_max:
            raise ValueError(f"|t| = {tmax:.6g} exceeds t_max = {self.t_max:.6g}")
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if tmax == 0.0:
            return u, v
        n = max(1, math.ceil(tmax / self.h_flow))
        h = t / n
        X = self._field
        for _ in range(n):
            a1, b1 = X(u, v)
            a2, b2 = X(u + 0.5 * h * a1, v + 0.5 * h * b1)
            a3, b3 = X(u + 0.5 * h * a2, v + 0.5 * h * b2)
            a4, b4 = X(u + h * a3, v + h * b3)
            u = u + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
            v = v + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        return u, v

    def differential(self, t, u, v, a, eps: float = 1e-6):
        """Push the coordinate vector ``a`` at ``(u, v)`` through ``d(flow_t)``."""
        pu, pv = self.map(t, u + eps * a[0], v + eps * a[1])
        mu, mv = self.map(t, u - eps * a[0], v - eps * a[1])
        return (pu - mu) / (2 * eps), (pv - mv) / (2 * eps)


def flow_point(flow: Flow, t: float, pt):
    """Image of ``pt`` under the time-``t`` flow, periodic coordinates wrapped."""
    u, v = flow.map(t, pt[0], pt[1])
    if flow.chart is not None:
        u, v = flow.chart.wrap(u, v)
    return u, v


def _leaf_tangents(chart: MetricChart, leaf: Curve):
    """Unit tangents at the samples of a traced curve, by central differences."""
    pts = leaf.points
    if leaf.closed:
        du, dv = chart.periodic_delta(np.roll(pts[:, 0], -1) - np.roll(pts[:, 0], 1),
                                      np.roll(pts[:, 1], -1) - np.roll(pts[:, 1], 1))
    else:
        du = np.gradient(pts[:, 0])
        dv = np.gradient(pts[:, 1])
    n = chart.norm(pts[:, 0], pts[:, 1], (du, dv))
    return du / n, dv / n


def leaf_jacobian(flow: Flow, t: float, leaf: Curve, chart: Optional[MetricChart] = None,
                  tangent=None, eps: float = 1e-6):
    """Leafwise Jacobian: metric stretch of the unit leaf tangent under ``flow_t``.

    ``tangent`` gives the unit tangents at the samples; by default they are
    estimated from the sample points.
    """
    chart = chart if chart is not None else flow.chart
    if chart is None:
        raise ValueError("leaf_jacobian needs a chart")
    u, v = leaf.u, leaf.v
    e = _leaf_tangents(chart, leaf) if tangent is None else tangent
    if t == 0:
        return np.ones_like(u)
    return _stretch(flow, chart, t, u, v, e, eps)


def _stretch(flow, chart, t, u, v, e, eps=1e-6):
    du, dv = flow.differential(t, u, v, e, eps)
    pu, pv = flow.map(t, u, v)
    num = chart.norm(pu, pv, (du, dv))
    den = chart.norm(u, v, e)
    if np.any(num < 1e-12 * den):
        raise GeometryError("flow tangent map degenerate on the leaf")
    return num / den


def leafwise_jacobian_rate(fol: SubmersionFoliation, X: VectorField, u, v,
                           tau: float = 1e-3, h_flow: float = 1e-3):
    """Four-point central difference in ``t`` of the leafwise Jacobian at ``t = 0``."""
    flow = Flow(X, fol.chart, h_flow=h_flow)
    e = fol.unit_tangent(u, v)

    def J(t):
        return _stretch(flow, fol.chart, t, u, v, e)

    return (8 * (J(tau) - J(-tau)) - (J(2 * tau) - J(-2 * tau))) / (12 * tau)


def divflow_residual(fol: SubmersionFoliation, X: VectorField, n_points: int = 100,
                     seed: int = 0, tau: float = 1e-3) -> dict:
    """Sup over random points of |d/dt (leafwise Jacobian) - leafwise div X| at t = 0."""
    rng = np.random.default_rng(seed)
    c = fol.chart
    (u0, u1), (v0, v1) = c.u_range, c.v_range
    margin_u = 0.0 if c.periodic_u else 0.02 * (u1 - u0)
    margin_v = 0.0 if c.periodic_v else 0.02 * (v1 - v0)
    u = rng.uniform(u0 + margin_u, u1 - margin_u, n_points)
    v = rng.uniform(v0 + margin_v, v1 - margin_v, n_points)
    rate = leafwise_jacobian_rate(fol, X, u, v, tau=tau)
    div = div_leafwise(c, X, fol.unit_tangent(u, v), u, v)
    err = np.abs(rate - div)
    return {"residual": float(err.max()), "points": n_points,
            "max_abs_div": float(np.abs(div).max())}


def check_compact_support(chart: MetricChart, X: VectorField, samples: int = 401,
                          tol: float = 1e-12) -> None:
    """Raise unless ``X`` vanishes on every non-periodic edge of the chart."""
    (u0, u1), (v0, v1) = chart.u_range, chart.v_range
    uu = np.linspace(u0, u1, samples)
    vv = np.linspace(v0, v1, samples)
    edges = []
    if not chart.periodic_u:
        edges += [(np.full(samples, u0), vv), (np.full(samples, u1), vv)]
    if not chart.periodic_v:
        edges += [(uu, np.full(samples, v0)), (uu, np.full(samples, v1))]
    for a, b in edges:
        x1, x2 = X(a, b)
        if np.max(np.hypot(x1, x2)) > tol:
            raise GeometryError("vector field is not compactly supported in the chart")


# -- pushed foliations ---------------------------------------------------------


class FlowedFoliation(SubmersionFoliation):
    """``flow_t(F)``, the foliation by level sets of ``phi o flow_(-t)``."""

    def __init__(self, base: SubmersionFoliation, flow: Flow, t: float,
                 n_leaves: Optional[int] = None):
        self.base = base
        self.flow = flow
        self.t = float(t)
        t_ = self.t
        if t_ == 0.0:
            phi = base.phi
        else:
            phi = FunctionField(lambda u, v: base.phi(*flow.map(-t_, u, v)),
                                period=base.phi.period, name=f"phi_t[{t_:g}]")
        super().__init__(base.chart, phi, n_leaves=n_leaves or base.n_leaves, step=base.step,
                         max_leaf_length=base.max_leaf_length, trace_tol=base.trace_tol,
                         name=f"{base.name}@t={t_:g}")
        if t_ == 0.0:
            self._tangent = base._tangent
        # X vanishes near the boundary, where a submersion takes its extremes
        self._level_range = base.level_range


def flowed_foliations(base: SubmersionFoliation, flow: Flow, ts: Sequence[float],
                      n_leaves: Optional[int] = None):
    """Pushed foliations for several times, with their level tables traced as one batch."""
    fols = [FlowedFoliation(base, flow, t, n_leaves) for t in ts]
    n = fols[0].n_leaves
    lo, hi = base.level_range
    x = -np.cos(np.pi * np.arange(n) / (n - 1))
    levels = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x
    seeds = [f.seeds(levels) for f in fols]
    su = np.concatenate([s[0] for s in seeds])
    sv = np.concatenate([s[1] for s in seeds])
    T = np.repeat(np.asarray(ts, dtype=float), n)
    all_levels = np.tile(levels, len(fols))
    period = base.phi.period

    def phi_for(idx):
        tt = T[idx]
        # partials stacks its stencil points, so tile the per-point times
        return FunctionField(
            lambda a, b: base.phi(*flow.map(-np.resize(tt, np.shape(a)), a, b)),
            period=period,
        )

    system = LevelSetSystem(
        base.chart,
        lambda u, v, idx: base.unit_tangent(u, v, phi_for(idx)),
        lambda u, v, idx: phi_for(idx)(u, v),
        lambda u, v, idx: base.newton_direction(u, v, phi_for(idx)),
    )
    for f, (a, b) in zip(fols, seeds):
        f.jacobian(a, b)
    curves = trace_level_curves(system, su, sv, all_levels, base.step,
                                base.max_leaf_length, trace_tol=base.trace_tol)
    w = np.gradient(levels)
    for k, f in enumerate(fols):
        f._table = LeafFamily(curves[k * n:(k + 1) * n], levels, w)
    return fols


# -- the two sides of the variation formula ------------------------------------


def variation_integrand(fol: SubmersionFoliation, p: float, X: VectorField, U, V,
                        extremal=None):
    """``f0**(p-1) * (g(grad f0, X) + f0 * div_F X)`` at the given points."""
    c = fol.chart
    ext = extremal if extremal is not None else extremal_closed_form(fol, p)
    f0 = ext(U, V)
    grad = gradient(c, ext.f0, U, V)
    Xv = X(U, V)
    div = div_leafwise(c, X, fol.unit_tangent(U, V), U, V)
    return f0 ** (p - 1) * (c.inner(U, V, grad, Xv) + f0 * div)


def variation_analytic(fol: SubmersionFoliation, p: float, X: VectorField,
                       grid=(128, 128), return_scale: bool = False):
    """Right-hand side of the variation formula by chart quadrature.

    With ``return_scale=True`` also returns ``p * int |integrand|``, the
    natural size against which cancellation in the integral is judged.
    """
    check_compact_support(fol.chart, X)
    quad = ChartQuadrature(fol.chart, grid)
    vals = variation_integrand(fol, p, X, quad.U, quad.V)
    value = -p * quad.integrate(vals)
    if return_scale:
        return value, p * quad.integrate(np.abs(vals))
    return value


@dataclass
class VariationReport:
    analytic: float
    finite_difference: float
    stencil: dict  # t -> mod_p^p
    relative_gap: float
    richardson_error: float
    fd_second_order: float
    t_step: float
    p: float
    modulus: float
    d_modulus: float  # d/dt mod_p, from the analytic value by the chain rule
    fd_floor: float = 1e-8
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "analytic": self.analytic,
            "finite_difference": self.finite_difference,
            "stencil": {repr(k): v for k, v in self.stencil.items()},
            "relative_gap": self.relative_gap,
            "richardson_error": self.richardson_error,
            "fd_second_order": self.fd_second_order,
            "t_step": self.t_step,
            "p": self.p,
            "modulus": self.modulus,
            "d_modulus": self.d_modulus,
            "fd_floor": self.fd_floor,
        }


def default_t_step(chart: MetricChart) -> float:
    """``1e-3`` times the shorter side of the coordinate box."""
    return 1e-3 * min(chart.u_range[1] - chart.u_range[0], chart.v_range[1] - chart.v_range[0])


_FLOW_CACHE: dict = {}


def _flowed_cached(fol, X, ts, h_flow, n_leaves):
    key = (id(fol), id(X), tuple(ts), h_flow, n_leaves)
    hit = _FLOW_CACHE.get(key)
    if hit is not None and hit[0] is fol and hit[1] is X:
        return hit[2]
    fols = flowed_foliations(fol, Flow(X, fol.chart, h_flow=h_flow), ts, n_leaves)
    for t, f in zip(ts, fols):
        rep = admissibility_diagnostics(f, grid=(32, 32))
        if not rep["ok"]:
            raise GeometryError(f"pushed foliation at t={t:g} not admissible: "
                                f"{'; '.join(rep['violations'])}")
    if len(_FLOW_CACHE) > 32:
        _FLOW_CACHE.clear()
    _FLOW_CACHE[key] = (fol, X, fols)
    return fols


def variation_fd(fol: SubmersionFoliation, p: float, X: VectorField,
                 t_step: Optional[float] = None, grid=(128, 128), h_flow: float = 1e-2,
                 fd_floor: float = 1e-8, analytic: Optional[float] = None,
                 n_leaves: Optional[int] = None) -> VariationReport:
    """4-point central difference of ``mod_p(F_t)**p`` at ``t = 0``.

    Each pushed foliation is traced from its own submersion; its Jacobian is
    taken directly from that submersion.  ``t_step`` defaults to ``1e-3``
    times the shorter side of the coordinate box.  ``n_leaves`` sets the level
    table size of the pushed foliations (default: that of ``fol``); the
    level-direction resolution is what limits the difference quotient when
    the true derivative is near zero.  The Richardson error bar is the
    distance between the 4-point and 2-point stencils.
    """
    check_compact_support(fol.chart, X)
    h = default_t_step(fol.chart) if t_step is None else float(t_step)
    ts = (-2 * h, -h, h, 2 * h)
    fols = _flowed_cached(fol, X, ts, h_flow, n_leaves)
    vals = {t: modulus_closed_form(f, p, grid) ** p for t, f in zip(ts, fols)}
    m2, m1, p1, p2 = (vals[t] for t in ts)
    d4 = (8 * (p1 - m1) - (p2 - m2)) / (12 * h)
    d2 = (p1 - m1) / (2 * h)
    if analytic is None:
        analytic = variation_analytic(fol, p, X, grid)
    mod = modulus_closed_form(fol, p, grid)
    return VariationReport(
        analytic=float(analytic),
        finite_difference=float(d4),
        stencil=vals,
        relative_gap=abs(analytic - d4) / max(abs(d4), fd_floor),
        richardson_error=abs(d4 - d2),
        fd_second_order=float(d2),
        t_step=h,
        p=float(p),
        modulus=float(mod),
        d_modulus=float(analytic / (p * mod ** (p - 1))),
        fd_floor=fd_floor,
    )


def variation_linearity_check(fol: SubmersionFoliation, p: float, X1: VectorField,
                              X2: VectorField, grid=(128, 128)) -> float:
    """``|V(X1 + X2) - V(X1) - V(X2)|`` relative to the summed absolute integrands."""
    v1, s1 = variation_analytic(fol, p, X1, grid, return_scale=True)
    v2, s2 = variation_analytic(fol, p, X2, grid, return_scale=True)
    v12 = variation_analytic(fol, p, X1 + X2, grid)
    return abs(v12 - v1 - v2) / max(s1 + s2, 1e-300)
