"""Riemannian calculus on rectangular 2-D charts.

A :class:`MetricChart` is a coordinate box ``[u0, u1] x [v0, v1]`` with a
metric ``g11 du^2 + 2 g12 du dv + g22 dv^2``.  Every operation here is
vectorised: points are given as two broadcastable arrays ``u`` and ``v``,
tangent vectors as pairs of arrays of contravariant components.

Derivatives are central finite differences with step ``chart.h_fd``
(one-sided second order stencils next to a non-periodic edge).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .expr import bump, evaluate, free_variables, parse, to_source

__all__ = [
    "GeometryError",
    "ScalarField",
    "ExprField",
    "GridField",
    "FunctionField",
    "as_field",
    "Support",
    "VectorField",
    "MetricChart",
    "Curve",
    "partials",
    "christoffel",
    "gradient",
    "div_full",
    "covariant_derivative",
    "div_leafwise",
    "curve_mean_curvature",
    "ChartQuadrature",
    "integrate_chart",
    "integrate_curve",
]

BOUNDARY_POLICIES = ("none", "periodic_u", "periodic_v")


class GeometryError(ValueError):
    """Degenerate metric, bad tangent vector or similar geometric failure."""


class ScalarField:
    """A function on the chart, evaluable on arrays of coordinates.

    Calls return values broadcastable against the inputs (constant fields
    may return a plain float).

    ``period`` marks a circle-valued field (an angle coordinate); finite
    differences of such a field are taken modulo the period.
    """

    period: Optional[float] = None

    def __call__(self, u, v):
        raise NotImplementedError


class ExprField(ScalarField):
    def __init__(self, expr, period=None):
        if isinstance(expr, str):
            expr = parse(expr)
        self.expr = expr
        self.period = period
        # constant expressions short-circuit to a float
        self.constant = None
        if not free_variables(expr):
            self.constant = float(evaluate(expr))

    @property
    def source(self) -> str:
        return to_source(self.expr)

    def __call__(self, u, v):
        if self.constant is not None:
            return self.constant
        return evaluate(self.expr, u, v)

    def __repr__(self):
        return f"ExprField({self.source!r})"


class FunctionField(ScalarField):
    """Wraps a numpy callable ``fn(u, v)``; used for derived fields."""

    def __init__(self, fn: Callable, period=None, name: str = ""):
        self.fn = fn
        self.period = period
        self.name = name

    def __call__(self, u, v):
        return np.asarray(self.fn(u, v), dtype=float)

    def __repr__(self):
        return f"FunctionField({self.name or self.fn!r})"


class GridField(ScalarField):
    """Samples on a tensor grid of nodes with bilinear interpolation.

    Periodic axes list nodes ``x0 + k*P/n`` for ``k < n`` and wrap around.
    """

    def __init__(self, u_nodes, v_nodes, values, periodic_u=None, periodic_v=None):
        self.u_nodes = np.asarray(u_nodes, dtype=float)
        self.v_nodes = np.asarray(v_nodes, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (self.u_nodes.size, self.v_nodes.size):
            raise ValueError("values must have shape (len(u_nodes), len(v_nodes))")
        # period lengths, or None
        self.periodic_u = periodic_u
        self.periodic_v = periodic_v

    @property
    def resolution(self):
        return self.values.shape

    def __call__(self, u, v):
        iu, tu = _locate(self.u_nodes, np.asarray(u, dtype=float), self.periodic_u)
        iv, tv = _locate(self.v_nodes, np.asarray(v, dtype=float), self.periodic_v)
        nu, nv = self.values.shape
        iu1 = (iu + 1) % nu if self.periodic_u else np.minimum(iu + 1, nu - 1)
        iv1 = (iv + 1) % nv if self.periodic_v else np.minimum(iv + 1, nv - 1)
        f = self.values
        return (
            f[iu, iv] * (1 - tu) * (1 - tv)
            + f[iu1, iv] * tu * (1 - tv)
            + f[iu, iv1] * (1 - tu) * tv
            + f[iu1, iv1] * tu * tv
        )


def _locate(nodes, x, period):
    """Cell index and local coordinate of ``x`` on a uniform node list."""
    n = nodes.size
    if period:
        h = period / n
        s = np.mod(x - nodes[0], period) / h
        i = np.minimum(np.floor(s).astype(int), n - 1)
        return i, s - i
    h = (nodes[-1] - nodes[0]) / (n - 1)
    s = np.clip((x - nodes[0]) / h, 0.0, n - 1)
    i = np.minimum(np.floor(s).astype(int), n - 2)
    return i, s - i


def as_field(x) -> ScalarField:
    """Coerce a number, expression string or callable to a ScalarField."""
    if isinstance(x, ScalarField):
        return x
    if isinstance(x, str):
        return ExprField(x)
    if isinstance(x, (int, float)):
        return ExprField(repr(float(x)))
    if callable(x):
        return FunctionField(x)
    raise TypeError(f"cannot make a scalar field from {x!r}")


@dataclass(frozen=True)
class Support:
    """Smooth cutoff ``bump(|x - center|, r_in, r_out)`` in chart coordinates.

    ``periods`` makes the coordinate distance periodic along those axes, so
    the cutoff is a genuine function on a chart with a seam.
    """

    center: tuple
    r_in: float
    r_out: float
    periods: tuple = (None, None)

    def __call__(self, u, v):
        du = np.asarray(u, dtype=float) - self.center[0]
        dv = np.asarray(v, dtype=float) - self.center[1]
        pu, pv = self.periods
        if pu:
            du = np.mod(du + pu / 2, pu) - pu / 2
        if pv:
            dv = np.mod(dv + pv / 2, pv) - pv / 2
        return bump(np.hypot(du, dv), self.r_in, self.r_out)


@dataclass
class VectorField:
    """Contravariant components ``(X1, X2)``, optionally cut off by ``support``."""

    X1: ScalarField
    X2: ScalarField
    support: Optional[Support] = None

    def __post_init__(self):
        self.X1 = as_field(self.X1)
        self.X2 = as_field(self.X2)

    def __call__(self, u, v):
        a = np.asarray(self.X1(u, v), dtype=float)
        b = np.asarray(self.X2(u, v), dtype=float)
        if self.support is not None:
            c = self.support(u, v)
            a, b = a * c, b * c
        a, b = np.broadcast_arrays(a, b)
        return a, b

    def __add__(self, other: "VectorField") -> "VectorField":
        x1 = FunctionField(lambda u, v: self(u, v)[0] + other(u, v)[0])
        x2 = FunctionField(lambda u, v: self(u, v)[1] + other(u, v)[1])
        return VectorField(x1, x2)

    def scaled(self, c: float) -> "VectorField":
        return VectorField(
            FunctionField(lambda u, v: c * self(u, v)[0]),
            FunctionField(lambda u, v: c * self(u, v)[1]),
        )

    @classmethod
    def zero(cls):
        return cls(ExprField("0"), ExprField("0"))


@dataclass
class MetricChart:
    u_range: tuple
    v_range: tuple
    g11: ScalarField
    g12: ScalarField
    g22: ScalarField
    boundary_policy: str = "none"
    h_fd: float = 1e-5
    name: str = "custom"

    def __post_init__(self):
        self.g11 = as_field(self.g11)
        self.g12 = as_field(self.g12)
        self.g22 = as_field(self.g22)
        self.u_range = tuple(float(x) for x in self.u_range)
        self.v_range = tuple(float(x) for x in self.v_range)
        if self.boundary_policy not in BOUNDARY_POLICIES:
            raise ValueError(f"boundary_policy must be one of {BOUNDARY_POLICIES}")
        if not (self.u_range[0] < self.u_range[1] and self.v_range[0] < self.v_range[1]):
            raise ValueError("empty chart box")

    @classmethod
    def rectangle(cls, a: float, b: float) -> "MetricChart":
        """Euclidean ``[0, a] x [0, b]``."""
        return cls((0.0, a), (0.0, b), "1", "0", "1", name="rectangle")

    @classmethod
    def annulus(cls, r1: float, r2: float) -> "MetricChart":
        """Polar chart ``u = r in [r1, r2]``, ``v = theta``, periodic in theta."""
        return cls(
            (r1, r2), (0.0, 2 * np.pi), "1", "0", "u^2",
            boundary_policy="periodic_v", name="annulus",
        )

    @property
    def periodic_u(self) -> Optional[float]:
        if self.boundary_policy == "periodic_u":
            return self.u_range[1] - self.u_range[0]
        return None

    @property
    def periodic_v(self) -> Optional[float]:
        if self.boundary_policy == "periodic_v":
            return self.v_range[1] - self.v_range[0]
        return None

    def metric(self, u, v):
        """Components ``(g11, g12, g22)``, broadcastable against ``u, v``."""
        return self.g11(u, v), self.g12(u, v), self.g22(u, v)

    def det(self, u, v):
        g11, g12, g22 = self.metric(u, v)
        return g11 * g22 - g12 * g12

    def check_positive(self, u, v):
        g11, g12, g22 = self.metric(u, v)
        bad = np.broadcast_to((g11 <= 0) | (g11 * g22 - g12 * g12 <= 0), np.broadcast(u, v).shape)
        if np.any(bad):
            idx = tuple(np.argwhere(np.atleast_1d(bad))[0])
            uu = np.atleast_1d(np.broadcast_to(u, bad.shape))[idx]
            vv = np.atleast_1d(np.broadcast_to(v, bad.shape))[idx]
            raise GeometryError(f"metric not positive definite at ({uu:.6g}, {vv:.6g})")

    def sqrt_det(self, u, v):
        return np.sqrt(self.det(u, v))

    def inverse(self, u, v):
        g11, g12, g22 = self.metric(u, v)
        d = g11 * g22 - g12 * g12
        return g22 / d, -g12 / d, g11 / d

    def inner(self, u, v, a, b):
        """g(a, b) for contravariant pairs ``a = (a1, a2)``, ``b = (b1, b2)``."""
        g11, g12, g22 = self.metric(u, v)
        return g11 * a[0] * b[0] + g12 * (a[0] * b[1] + a[1] * b[0]) + g22 * a[1] * b[1]

    def norm(self, u, v, a):
        return np.sqrt(self.inner(u, v, a, a))

    def lower(self, u, v, a):
        g11, g12, g22 = self.metric(u, v)
        return g11 * a[0] + g12 * a[1], g12 * a[0] + g22 * a[1]

    def raise_index(self, u, v, w):
        i11, i12, i22 = self.inverse(u, v)
        return i11 * w[0] + i12 * w[1], i12 * w[0] + i22 * w[1]

    def rotate(self, u, v, a):
        """Rotate tangent vectors by +90 degrees in the metric (Hodge star)."""
        w1, w2 = self.lower(u, v, a)
        s = self.sqrt_det(u, v)
        return -w2 / s, w1 / s

    def contains(self, u, v, tol: float = 0.0):
        u = np.asarray(u)
        v = np.asarray(v)
        ok = np.ones(np.broadcast(u, v).shape, dtype=bool)
        if not self.periodic_u:
            ok &= (u >= self.u_range[0] - tol) & (u <= self.u_range[1] + tol)
        if not self.periodic_v:
            ok &= (v >= self.v_range[0] - tol) & (v <= self.v_range[1] + tol)
        return ok

    def wrap(self, u, v):
        """Map periodic coordinates back into the box."""
        if self.periodic_u:
            u = self.u_range[0] + np.mod(np.asarray(u) - self.u_range[0], self.periodic_u)
        if self.periodic_v:
            v = self.v_range[0] + np.mod(np.asarray(v) - self.v_range[0], self.periodic_v)
        return u, v

    def periodic_delta(self, du, dv):
        """Coordinate differences reduced to the nearest periodic image."""
        if self.periodic_u:
            P = self.periodic_u
            du = np.mod(du + P / 2, P) - P / 2
        if self.periodic_v:
            P = self.periodic_v
            dv = np.mod(dv + P / 2, P) - P / 2
        return du, dv

    def diameter(self) -> float:
        """Largest metric length among the box edges and diagonals."""
        (u0, u1), (v0, v1) = self.u_range, self.v_range
        segments = [
            ((u0, v0), (u1, v0)), ((u0, v1), (u1, v1)),
            ((u0, v0), (u0, v1)), ((u1, v0), (u1, v1)),
            ((u0, v0), (u1, v1)), ((u0, v1), (u1, v0)),
        ]
        x, w = np.polynomial.legendre.leggauss(64)
        s = 0.5 * (x + 1)
        out = 0.0
        for (a0, b0), (a1, b1) in segments:
            du, dv = a1 - a0, b1 - b0
            uu, vv = a0 + s * du, b0 + s * dv
            speed = np.sqrt(self.inner(uu, vv, (du, dv), (du, dv)))
            out = max(out, float(0.5 * np.sum(w * speed)))
        return out

    def area(self, grid=(32, 32)) -> float:
        return integrate_chart(self, 1.0, grid)

    def to_dict(self) -> dict:
        def src(f):
            return f.source if isinstance(f, ExprField) else repr(f)

        return {
            "u_range": list(self.u_range),
            "v_range": list(self.v_range),
            "g11": src(self.g11),
            "g12": src(self.g12),
            "g22": src(self.g22),
            "boundary_policy": self.boundary_policy,
        }


@dataclass
class Curve:
    """A sampled curve: points ``(N, 2)`` and induced-length quadrature weights."""

    points: np.ndarray
    arc_weights: np.ndarray
    closed: bool = False
    level: Optional[float] = None

    @property
    def u(self):
        return self.points[:, 0]

    @property
    def v(self):
        return self.points[:, 1]

    @property
    def length(self) -> float:
        return float(np.sum(self.arc_weights))


# --------------------------------------------------------------------------
# differential operators


def partials(chart: MetricChart, f, u, v, h=None, return_flags=False):
    """Coordinate partials ``(f_u, f_v)`` of a scalar field by central differences.

    Within ``h`` of a non-periodic edge the stencil becomes one-sided
    (second order); ``return_flags=True`` also returns the boolean mask of
    points where that happened.
    """
    f = as_field(f)
    h = chart.h_fd if h is None else h
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    period = f.period

    def diff(a, b):
        d = a - b
        if period:
            d = np.mod(d + period / 2, period) - period / 2
        return d

    out = []
    flags = np.zeros(u.shape, dtype=bool)
    if isinstance(f, ExprField) and f.constant is not None:
        z = np.zeros(u.shape)
        return (z, z.copy(), flags) if return_flags else (z, z.copy())
    # the four central stencil points in a single call
    n = u.size
    uf, vf = u.ravel(), v.ravel()
    stacked = np.broadcast_to(
        f(np.concatenate([uf + h, uf - h, uf, uf]), np.concatenate([vf, vf, vf + h, vf - h])),
        (4 * n,),
    )
    central = [
        diff(stacked[:n], stacked[n:2 * n]).reshape(u.shape) / (2 * h),
        diff(stacked[2 * n:3 * n], stacked[3 * n:]).reshape(u.shape) / (2 * h),
    ]
    for axis, lo_hi, periodic in (
        (0, chart.u_range, chart.periodic_u),
        (1, chart.v_range, chart.periodic_v),
    ):
        x = u if axis == 0 else v

        def at_offsets(offsets, axis=axis):
            # one stacked call; per-point parameters of f tile cyclically
            du = [o if axis == 0 else 0.0 for o in offsets]
            dv = [o if axis == 1 else 0.0 for o in offsets]
            vals = np.broadcast_to(
                f(np.concatenate([uf + a for a in du]), np.concatenate([vf + b for b in dv])),
                (len(offsets) * n,),
            )
            return [vals[k * n:(k + 1) * n].reshape(u.shape) for k in range(len(offsets))]

        d = central[axis]
        if not periodic:
            lo = x - h < lo_hi[0]
            hi = x + h > lo_hi[1]
            if np.any(lo) or np.any(hi):
                f0, p1, p2, m1, m2 = at_offsets((0.0, h, 2 * h, -h, -2 * h))
                fwd = (4 * diff(p1, f0) - diff(p2, f0)) / (2 * h)
                bwd = (-4 * diff(m1, f0) + diff(m2, f0)) / (2 * h)
                d = np.where(lo, fwd, np.where(hi, bwd, d))
                flags |= lo | hi
        out.append(np.asarray(d, dtype=float))
    if return_flags:
        return out[0], out[1], flags
    return out[0], out[1]


def _metric_partials(chart, u, v):
    """dg[a][i]: partial along coordinate i of metric component a (11, 12, 22)."""
    return [partials(chart, g, u, v) for g in (chart.g11, chart.g12, chart.g22)]


def christoffel(chart: MetricChart, u, v):
    """Christoffel symbols ``G[k, i, j]`` of the Levi-Civita connection."""
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    chart.check_positive(u, v)
    d11, d12, d22 = _metric_partials(chart, u, v)
    # dg[l][j][i] = d_i g_lj
    dg = [[d11, d12], [d12, d22]]
    i11, i12, i22 = chart.inverse(u, v)
    ginv = [[i11, i12], [i12, i22]]
    G = np.zeros((2, 2, 2) + u.shape)
    for k in range(2):
        for i in range(2):
            for j in range(i, 2):
                s = 0.0
                for l in range(2):
                    s = s + ginv[k][l] * (dg[l][j][i] + dg[l][i][j] - dg[i][j][l])
                G[k, i, j] = 0.5 * s
                G[k, j, i] = G[k, i, j]
    return G


def gradient(chart: MetricChart, f, u, v, return_flags=False, h=None):
    """Metric gradient ``g^{ij} d_j f`` as a contravariant pair."""
    fu, fv, flags = partials(chart, f, u, v, h=h, return_flags=True)
    grad = chart.raise_index(u, v, (fu, fv))
    return (grad, flags) if return_flags else grad


def div_full(chart: MetricChart, X: VectorField, u, v):
    """Riemannian divergence ``(1/sqrt g) d_i (sqrt g X^i)``."""
    c1 = FunctionField(lambda a, b: chart.sqrt_det(a, b) * X(a, b)[0])
    c2 = FunctionField(lambda a, b: chart.sqrt_det(a, b) * X(a, b)[1])
    d1, _ = partials(chart, c1, u, v)
    _, d2 = partials(chart, c2, u, v)
    return (d1 + d2) / chart.sqrt_det(u, v)


def _component_partials(chart, X, u, v):
    """J[k][i] = d_i X^k for a vector field given as a callable."""
    x1 = FunctionField(lambda a, b: X(a, b)[0])
    x2 = FunctionField(lambda a, b: X(a, b)[1])
    return [list(partials(chart, x1, u, v)), list(partials(chart, x2, u, v))]


def covariant_derivative(chart: MetricChart, X, Y, u, v):
    """``nabla_Y X`` for a vector field ``X`` and tangent vectors ``Y`` at the points."""
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    Xv = X(u, v)
    J = _component_partials(chart, X, u, v)
    G = christoffel(chart, u, v)
    out = []
    for k in range(2):
        s = Y[0] * J[k][0] + Y[1] * J[k][1]
        for i in range(2):
            for j in range(2):
                s = s + G[k, i, j] * Y[i] * Xv[j]
        out.append(s)
    return out[0], out[1]


def div_leafwise(chart: MetricChart, X, unit_tangent, u, v, tol: float = 1e-10):
    """Leafwise divergence ``g(nabla_e X, e)`` for a unit leaf tangent ``e``."""
    n = chart.norm(u, v, unit_tangent)
    if np.any(np.abs(n - 1.0) > tol):
        raise GeometryError("unit_tangent must have metric norm 1")
    D = covariant_derivative(chart, X, unit_tangent, u, v)
    return chart.inner(u, v, D, unit_tangent)


def curve_mean_curvature(chart: MetricChart, tangent_field, u, v):
    """Curvature vector of the integral curves of a line field.

    ``tangent_field(u, v)`` returns tangent vectors (normalised here).  The
    result is the part of ``nabla_e e`` orthogonal to ``e``; it points toward
    the centre of curvature.
    """

    def unit(a, b):
        t = tangent_field(a, b)
        n = chart.norm(a, b, t)
        if np.any(n == 0) or not np.all(np.isfinite(n)):
            raise GeometryError("tangent field cannot be normalised (zero vector)")
        return t[0] / n, t[1] / n

    e = unit(u, v)
    K = covariant_derivative(chart, unit, e, u, v)
    c = chart.inner(u, v, K, e)
    return K[0] - c * e[0], K[1] - c * e[1]


# --------------------------------------------------------------------------
# quadrature


class ChartQuadrature:
    """Tensor Gauss-Legendre nodes (``order`` per cell) and volume weights.

    ``weights`` already include ``sqrt(det g)``, so ``sum(weights * f(U, V))``
    approximates the integral of ``f`` against the Riemannian measure.
    """

    def __init__(self, chart: MetricChart, grid=(64, 64), order: int = 4):
        n_u, n_v = grid
        x, w = np.polynomial.legendre.leggauss(order)
        (u0, u1), (v0, v1) = chart.u_range, chart.v_range
        hu, hv = (u1 - u0) / n_u, (v1 - v0) / n_v
        uc = u0 + hu * (np.arange(n_u)[:, None] + 0.5 * (x[None, :] + 1))
        vc = v0 + hv * (np.arange(n_v)[:, None] + 0.5 * (x[None, :] + 1))
        wu = np.broadcast_to(0.5 * hu * w, (n_u, order)).ravel()
        wv = np.broadcast_to(0.5 * hv * w, (n_v, order)).ravel()
        self.U, self.V = np.meshgrid(uc.ravel(), vc.ravel(), indexing="ij")
        chart.check_positive(self.U, self.V)
        self.weights = np.outer(wu, wv) * chart.sqrt_det(self.U, self.V)
        self.chart = chart
        self.grid = (n_u, n_v)
        self.order = order

    def integrate(self, values) -> float:
        return float(np.sum(self.weights * values))

    def __call__(self, f) -> float:
        f = as_field(f)
        return self.integrate(np.broadcast_to(f(self.U, self.V), self.U.shape))


def integrate_chart(chart: MetricChart, f, grid=(64, 64), order: int = 4) -> float:
    """Integral of ``f`` over the chart against ``sqrt(det g) du dv``."""
    return ChartQuadrature(chart, grid, order)(f)


def integrate_curve(curve: Curve, f) -> float:
    """``sum f(sample) * arc_weight`` over the curve samples."""
    f = as_field(f)
    vals = np.broadcast_to(f(curve.u, curve.v), curve.arc_weights.shape)
    return float(np.sum(vals * curve.arc_weights))
