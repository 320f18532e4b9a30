"""Criticality diagnostics for foliations on a surface.

Mean curvature vectors follow the convention of
:func:`folmod.geometry.curve_mean_curvature`: the part of ``nabla_e e``
orthogonal to ``e``, pointing toward the centre of curvature (polar
circles have ``H = -(1/r) d_r``).  ``H_perp`` is the curvature vector of the
orthogonal line field, whose integral curves are the leaves of ``F^perp``.

Residuals are sup norms over a grid of interior points kept two stencil
widths away from non-periodic edges, where nested finite differences would
otherwise turn one-sided.

``grad log f0`` differentiates a field that already contains first
differences of the submersion.  With the inner step ``h`` round-off in
the outer difference grows like ``eps / (h * h_outer)``, so the outer
step is ``OUTER_STEP_FACTOR * h``, which balances it against truncation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geometry import (
    ChartQuadrature,
    FunctionField,
    GeometryError,
    MetricChart,
    curve_mean_curvature,
    gradient,
)
from .foliation import SubmersionFoliation, extremal_closed_form

__all__ = [
    "OrthogonalFoliation",
    "OrthogonalPair",
    "interior_samples",
    "tangent_gradient_residual",
    "criticality_residual",
    "pair_product_residual",
    "pair_product_value",
    "pair_holder_integral",
    "conjugate",
]


def conjugate(p: float) -> float:
    if not p > 1:
        raise ValueError("p must be > 1")
    return p / (p - 1.0)


OUTER_STEP_FACTOR = 30.0


def interior_samples(chart: MetricChart, grid=(48, 48), stencils: float = 2.0):
    """Cell-centred sample points, kept ``stencils`` nested-FD widths off edges."""
    margin = stencils * (OUTER_STEP_FACTOR + 1.0) * chart.h_fd
    out = []
    for (lo, hi), periodic, n in ((chart.u_range, chart.periodic_u, grid[0]),
                                  (chart.v_range, chart.periodic_v, grid[1])):
        if not periodic:
            lo, hi = lo + margin, hi - margin
        out.append(lo + (hi - lo) * (np.arange(n) + 0.5) / n)
    U, V = np.meshgrid(out[0], out[1], indexing="ij")
    return U, V


def _log_gradient(fol, p, U, V):
    ext = extremal_closed_form(fol, p)
    logf = FunctionField(lambda u, v: np.log(ext(u, v)))
    return gradient(fol.chart, logf, U, V, h=OUTER_STEP_FACTOR * fol.chart.h_fd)


def _normal_field(fol):
    return lambda u, v: fol.unit_normal(u, v)


def tangent_gradient_residual(fol: SubmersionFoliation, p: float, grid=(48, 48)) -> float:
    """``max |grad^T log f0 - H_perp / (p - 1)|``: leaf-tangential part vs orthogonal curvature."""
    c = fol.chart
    U, V = interior_samples(c, grid)
    G = _log_gradient(fol, p, U, V)
    T = fol.unit_tangent(U, V)
    gt = c.inner(U, V, G, T)
    Hp = curve_mean_curvature(c, _normal_field(fol), U, V)
    d = (gt * T[0] - Hp[0] / (p - 1), gt * T[1] - Hp[1] / (p - 1))
    return float(np.max(c.norm(U, V, d)))


def criticality_residual(fol: SubmersionFoliation, p: float, grid=(48, 48)) -> float:
    """``max |grad log f0**p - p H_F - q H_perp|`` over interior samples."""
    c = fol.chart
    q = conjugate(p)
    U, V = interior_samples(c, grid)
    G = _log_gradient(fol, p, U, V)
    HF = curve_mean_curvature(c, lambda u, v: fol.unit_tangent(u, v), U, V)
    Hp = curve_mean_curvature(c, _normal_field(fol), U, V)
    d = (p * G[0] - p * HF[0] - q * Hp[0], p * G[1] - p * HF[1] - q * Hp[1])
    return float(np.max(c.norm(U, V, d)))


# -- orthogonal foliation -------------------------------------------------------


class OrthogonalFoliation(SubmersionFoliation):
    """The foliation by integral curves of the unit normal field of ``F``.

    Its submersion assigns to a point the chosen chart coordinate of the
    place where its normal curve meets a reference leaf of ``F``: the
    point is carried along ``grad phi / |grad phi|**2`` (which moves
    ``phi`` at unit rate) for time ``c_ref - phi(x)`` by RK4 with
    ``n_steps`` steps.  Leaves are traced directly as integral curves of
    the normal field, starting on the reference leaf.
    """

    project = False

    def __init__(self, F: SubmersionFoliation, ref_level: Optional[float] = None,
                 coord: Optional[int] = None, n_steps: int = 16):
        self.F = F
        chart = F.chart
        lo, hi = F.level_range
        self.ref_level = 0.5 * (lo + hi) if ref_level is None else float(ref_level)
        ref = F.trace_levels([self.ref_level])[0]
        self.ref_leaf = ref
        if coord is None:
            span = [np.ptp(ref.u), np.ptp(ref.v)]
            coord = int(np.argmax(span))
        self.coord = coord
        period = chart.periodic_u if coord == 0 else chart.periodic_v
        self.n_steps = int(n_steps)
        if ref.closed:
            if not period:
                raise GeometryError("closed reference leaf needs a periodic coordinate")
            rng = chart.u_range if coord == 0 else chart.v_range
            self._psi_range = (rng[0], rng[0] + period)
        else:
            x = ref.u if coord == 0 else ref.v
            self._psi_range = (float(x.min()), float(x.max()))
        psi = FunctionField(self._psi, period=period if ref.closed else None, name="psi")
        super().__init__(chart, psi, n_leaves=F.n_leaves, step=F.step,
                         max_leaf_length=F.max_leaf_length, trace_tol=F.trace_tol,
                         tangent=lambda u, v: F.unit_normal(u, v),
                         name=f"perp({F.name})")
        self._level_range = self._psi_range
        if not ref.closed:
            self._check_coverage()

    def _check_coverage(self, grid=(16, 16)):
        # every normal curve must cross the reference leaf inside the chart
        c = self.chart
        U, V = interior_samples(c, grid, stencils=0.0)
        psi = self._psi(U, V)
        lo, hi = self._psi_range
        slack = 1e-6 * max(hi - lo, 1.0)
        if np.any(psi < lo - slack) or np.any(psi > hi + slack):
            raise GeometryError("normal curves miss the reference leaf; "
                                "the orthogonal foliation is not a single chart family")

    def _psi(self, u, v):
        F = self.F
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        u, v = np.broadcast_arrays(u, v)
        t = self.ref_level - F.phi(u, v)
        h = t / self.n_steps
        for _ in range(self.n_steps):
            a1, b1 = F.newton_direction(u, v)
            a2, b2 = F.newton_direction(u + 0.5 * h * a1, v + 0.5 * h * b1)
            a3, b3 = F.newton_direction(u + 0.5 * h * a2, v + 0.5 * h * b2)
            a4, b4 = F.newton_direction(u + h * a3, v + h * b3)
            u = u + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
            v = v + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        return u if self.coord == 0 else v

    def seeds(self, levels):
        """Points of the reference leaf whose chosen coordinate equals each level."""
        F, k = self.F, self.coord
        chart = self.chart
        ref = self.ref_leaf
        x = ref.u if k == 0 else ref.v
        y = ref.v if k == 0 else ref.u
        levels = np.asarray(levels, dtype=float)
        period = chart.periodic_u if k == 0 else chart.periodic_v
        if ref.closed:
            lo = self._psi_range[0]
            x = lo + np.mod(x - lo, period)
            order = np.argsort(x)
            guess = np.interp(levels, x[order], y[order], period=period)
        else:
            order = np.argsort(x)
            guess = np.interp(levels, x[order], y[order])
        xs = levels.copy()
        ys = guess.copy()
        for _ in range(50):
            u, v = (xs, ys) if k == 0 else (ys, xs)
            r = F.phi(u, v) - self.ref_level
            if np.all(np.abs(r) < 1e-14 * (1 + abs(self.ref_level))):
                break
            fu, fv = F._frame(u, v)[:2]
            dy = fv if k == 0 else fu
            ys = ys - r / dy
        return (xs, ys) if k == 0 else (ys, xs)


@dataclass
class OrthogonalPair:
    """Two mutually orthogonal foliations with conjugate exponents."""

    F: SubmersionFoliation
    G: SubmersionFoliation
    p: float
    q: Optional[float] = None
    check_grid: tuple = (16, 16)

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must be > 1")
        q = conjugate(self.p) if self.q is None else float(self.q)
        if abs(1.0 / self.p + 1.0 / q - 1.0) > 1e-12:
            raise ValueError(f"exponents are not conjugate: 1/{self.p} + 1/{q} != 1")
        self.q = q
        if self.F.chart is not self.G.chart:
            raise ValueError("both foliations must live on the same chart")
        U, V = interior_samples(self.F.chart, self.check_grid)
        c = self.F.chart
        dot = c.inner(U, V, self.F.unit_tangent(U, V), self.G.unit_tangent(U, V))
        self.orthogonality = float(np.max(np.abs(dot)))
        if self.orthogonality > 1e-8:
            raise GeometryError(
                f"foliations are not orthogonal: |g(T_F, T_G)| = {self.orthogonality:.3g}"
            )

    @classmethod
    def from_foliation(cls, F: SubmersionFoliation, p: float, **kw) -> "OrthogonalPair":
        return cls(F, OrthogonalFoliation(F, **kw), p)

    def extremals(self):
        """Closed-form ``(f0, g0)``; built once per pair."""
        if getattr(self, "_ext", None) is None:
            self._ext = (extremal_closed_form(self.F, self.p),
                         extremal_closed_form(self.G, self.q))
        return self._ext

    def quadrature(self, grid):
        """``(mod_p(F), mod_q(G), int f0 g0)`` from one evaluation per grid."""
        cache = self.__dict__.setdefault("_quad", {})
        key = tuple(grid)
        if key not in cache:
            quad = ChartQuadrature(self.F.chart, key)
            ext_f, ext_g = self.extremals()
            f0 = ext_f(quad.U, quad.V)
            g0 = ext_g(quad.U, quad.V)
            cache[key] = (quad.integrate(f0 ** self.p) ** (1.0 / self.p),
                          quad.integrate(g0 ** self.q) ** (1.0 / self.q),
                          quad.integrate(f0 * g0))
        return cache[key]


def pair_product_residual(pair: OrthogonalPair, grid=(64, 64), sample_grid=(48, 48)) -> float:
    """``max |mod_q(G)**q f0**p - mod_p(F)**p g0**q| / max(|lhs|, |rhs|)``."""
    p, q = pair.p, pair.q
    mF, mG, _ = pair.quadrature(grid)
    U, V = interior_samples(pair.F.chart, sample_grid)
    ext_f, ext_g = pair.extremals()
    lhs = mG ** q * ext_f(U, V) ** p
    rhs = mF ** p * ext_g(U, V) ** q
    return float(np.max(np.abs(lhs - rhs) / np.maximum(np.abs(lhs), np.abs(rhs))))


def pair_product_value(pair: OrthogonalPair, grid=(64, 64)) -> float:
    """``mod_p(F) * mod_q(G)``."""
    mF, mG, _ = pair.quadrature(grid)
    return mF * mG


def pair_holder_integral(pair: OrthogonalPair, grid=(64, 64)) -> float:
    """``int f0 g0``, bounded above by the moduli product (Hoelder)."""
    return pair.quadrature(grid)[2]
