"""Foliations by level sets of a submersion ``phi: chart -> R``.

For a codimension one foliation the Jacobian of the submersion is just the
metric length of its gradient.  The extremal function of the p-modulus is
then ``f0 = J**(1/(p-1)) / hat(J**(1/(p-1)))`` where ``hat`` integrates along
the leaf through the point.

Leafwise integrals are tabulated once per foliation on Chebyshev-Lobatto
spaced levels and interpolated in the level value by the Chebyshev
polynomial through those nodes (spectrally accurate for smooth data), so
evaluating ``f0`` on a quadrature grid costs one traced leaf family rather
than one leaf per node.  Level sets are assumed connected (one leaf per
level), which holds for every geometry shipped with the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial import Chebyshev

from .geometry import (
    ChartQuadrature,
    Curve,
    FunctionField,
    GeometryError,
    MetricChart,
    ScalarField,
    as_field,
    integrate_curve,
    partials,
)
from .tracing import LevelSetSystem, find_seeds, trace_level_curves

__all__ = [
    "SubmersionFoliation",
    "LeafFamily",
    "ExtremalFunction",
    "jacobian",
    "trace_leaf",
    "hat",
    "extremal_closed_form",
    "modulus_closed_form",
    "integral_identity_residual",
    "admissibility_diagnostics",
]

SING_TOL = 1e-10


@dataclass
class LeafFamily:
    """A finite sample of leaves with leaf-space quadrature weights."""

    leaves: list
    levels: np.ndarray
    leaf_weights: np.ndarray

    def __len__(self):
        return len(self.leaves)

    @property
    def lengths(self):
        return np.array([c.length for c in self.leaves])


@dataclass
class ExtremalFunction:
    f0: ScalarField
    p: float
    source: str  # "closed_form" or "solver"
    foliation: Optional["SubmersionFoliation"] = None

    def __call__(self, u, v):
        return self.f0(u, v)


class SubmersionFoliation:
    """Leaves are the level sets of ``phi`` on ``chart``.

    Parameters
    ----------
    chart : MetricChart
    phi : ScalarField or expression string
    n_leaves : int
        Number of tabulated levels used for leafwise integrals.
    step : float, optional
        Arc-length tracing step; defaults to ``chart.diameter() / 2000``.
    tangent : callable, optional
        Overrides the leaf direction ``(u, v) -> (T1, T2)``.  Used when the
        tangent is known more accurately than by differentiating ``phi``.
    """

    def __init__(self, chart: MetricChart, phi, n_leaves: int = 129, step=None,
                 max_leaf_length=None, trace_tol: float = 1e-8, tangent=None,
                 name: str = ""):
        self.chart = chart
        self.phi = as_field(phi)
        self.n_leaves = int(n_leaves)
        diam = chart.diameter()
        self.step = diam / 2000 if step is None else float(step)
        self.max_leaf_length = 100 * diam if max_leaf_length is None else max_leaf_length
        self.trace_tol = trace_tol
        self._tangent = tangent
        self.name = name
        self._level_range = None
        self._table = None

    # -- pointwise geometry -------------------------------------------------

    def _frame(self, u, v, phi=None):
        """Partials of phi, metric, det g and |grad phi|^2 from one metric evaluation.

        ``phi`` overrides the submersion (used when tracing several related
        foliations as one batch).
        """
        fu, fv = partials(self.chart, self.phi if phi is None else phi, u, v)
        g11, g12, g22 = self.chart.metric(u, v)
        det = g11 * g22 - g12 * g12
        n2 = (g22 * fu * fu - 2 * g12 * fu * fv + g11 * fv * fv) / det
        return fu, fv, g11, g12, g22, det, n2

    def grad_phi(self, u, v):
        fu, fv, g11, g12, g22, det, _ = self._frame(u, v)
        return (g22 * fu - g12 * fv) / det, (g11 * fv - g12 * fu) / det

    def jacobian(self, u, v, check: bool = True):
        u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        J = np.sqrt(self._frame(u, v)[-1])
        if check and np.any(J < SING_TOL):
            k = tuple(np.argwhere(np.atleast_1d(J < SING_TOL))[0])
            uu = np.atleast_1d(u)[k]
            vv = np.atleast_1d(v)[k]
            raise GeometryError(f"submersion degenerate at ({uu:.6g}, {vv:.6g})")
        return J

    def unit_normal(self, u, v):
        fu, fv, g11, g12, g22, det, n2 = self._frame(u, v)
        n = np.sqrt(n2)
        return (g22 * fu - g12 * fv) / (det * n), (g11 * fv - g12 * fu) / (det * n)

    def unit_tangent(self, u, v, phi=None):
        if self._tangent is not None and phi is None:
            t = self._tangent(u, v)
            n = self.chart.norm(u, v, t)
            return t[0] / n, t[1] / n
        fu, fv, g11, g12, g22, det, n2 = self._frame(u, v, phi)
        s = np.sqrt(det * n2)
        return -fv / s, fu / s

    def newton_direction(self, u, v, phi=None):
        fu, fv, g11, g12, g22, det, n2 = self._frame(u, v, phi)
        return (g22 * fu - g12 * fv) / (det * n2), (g11 * fv - g12 * fu) / (det * n2)

    #: project traced points back onto their level set after every step
    project = True

    def system(self) -> LevelSetSystem:
        return LevelSetSystem(
            self.chart,
            lambda u, v, idx: self.unit_tangent(u, v),
            (lambda u, v, idx: self.phi(u, v)) if self.project else None,
            lambda u, v, idx: self.newton_direction(u, v),
        )

    # -- leaves ------------------------------------------------------------

    @property
    def level_range(self):
        if self._level_range is None:
            c = self.chart
            U, V = np.meshgrid(np.linspace(*c.u_range, 201), np.linspace(*c.v_range, 201),
                               indexing="ij")
            F = self.phi(U, V)
            self._level_range = (float(F.min()), float(F.max()))
        return self._level_range

    def seeds(self, levels):
        return find_seeds(self.chart, self.phi, self.newton_direction, levels)

    def trace_levels(self, levels, step=None):
        levels = np.asarray(levels, dtype=float)
        su, sv = self.seeds(levels)
        return self.trace_from(su, sv, levels=levels, step=step)

    def trace_from(self, su, sv, levels=None, step=None):
        su = np.atleast_1d(np.asarray(su, dtype=float))
        sv = np.atleast_1d(np.asarray(sv, dtype=float))
        if levels is None:
            levels = self.phi(su, sv)
        self.jacobian(su, sv)
        return trace_level_curves(
            self.system(), su, sv, levels, self.step if step is None else step,
            self.max_leaf_length, trace_tol=self.trace_tol,
        )

    def leaf_family(self, n: Optional[int] = None) -> LeafFamily:
        """Leaves at uniformly spaced levels (midpoints of equal level bins)."""
        n = self.n_leaves if n is None else n
        lo, hi = self.level_range
        dc = (hi - lo) / n
        levels = lo + dc * (np.arange(n) + 0.5)
        return LeafFamily(self.trace_levels(levels), levels, np.full(n, dc))

    def table(self) -> LeafFamily:
        """Leaves on Chebyshev-Lobatto levels; cached, backs every hat interpolant."""
        if self._table is None:
            lo, hi = self.level_range
            n = self.n_leaves
            x = -np.cos(np.pi * np.arange(n) / (n - 1))
            levels = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x
            leaves = self.trace_levels(levels)
            w = np.gradient(levels)
            self._table = LeafFamily(leaves, levels, w)
        return self._table

    def hat_interpolant(self, f) -> Chebyshev:
        """Leaf integral of ``f`` as a function of the level value."""
        fam = self.table()
        f = as_field(f)
        vals = np.array([integrate_curve(c, f) for c in fam.leaves])
        return Chebyshev.fit(fam.levels, vals, len(vals) - 1, domain=self.level_range)

    def hat_field(self, f) -> FunctionField:
        interp = self.hat_interpolant(f)
        return FunctionField(lambda u, v: interp(self.phi(u, v)), name="hat")


# -- operations --------------------------------------------------------------


def jacobian(fol: SubmersionFoliation, u, v):
    """``J phi = |grad phi|_g``; raises if below the singularity tolerance."""
    return fol.jacobian(u, v)


def trace_leaf(fol: SubmersionFoliation, seed, step=None) -> Curve:
    """The leaf through ``seed = (u, v)``."""
    return fol.trace_from([seed[0]], [seed[1]], step=step)[0]


def hat(fol: SubmersionFoliation, f, pt) -> float:
    """Integral of ``f`` along the leaf through ``pt`` (traced exactly)."""
    return integrate_curve(trace_leaf(fol, pt), f)


def extremal_closed_form(fol: SubmersionFoliation, p: float) -> ExtremalFunction:
    """``f0 = J**(1/(p-1)) / hat(J**(1/(p-1)))`` as a field on the chart."""
    if not p > 1:
        raise ValueError("p must be > 1")
    a = 1.0 / (p - 1)
    fam = fol.table()
    if not np.all(np.isfinite(fam.lengths)):
        raise GeometryError("non-finite leaf in the sampled family")
    powJ = FunctionField(lambda u, v: fol.jacobian(u, v) ** a)
    denom = fol.hat_interpolant(powJ)

    def f0(u, v):
        d = denom(fol.phi(u, v))
        if np.any(d < 1e-14):
            raise GeometryError("extremal function denominator below 1e-14")
        return powJ(u, v) / d

    return ExtremalFunction(FunctionField(f0, name=f"f0[p={p}]"), p, "closed_form", fol)


def modulus_closed_form(fol: SubmersionFoliation, p: float, grid=(128, 128),
                        extremal: Optional[ExtremalFunction] = None) -> float:
    """``(integral of f0**p)**(1/p)``."""
    quad = ChartQuadrature(fol.chart, grid)
    f0 = extremal if extremal is not None else extremal_closed_form(fol, p)
    return quad.integrate(f0(quad.U, quad.V) ** p) ** (1.0 / p)


def integral_identity_residual(fol: SubmersionFoliation, p: float, testfn,
                               grid=(128, 128)) -> dict:
    """Compare ``int f0**(p-1) phi`` with ``int f0**p hat(phi)``.

    The residual is ``|lhs - rhs| / scale`` with ``scale`` the largest of
    ``|lhs|``, ``|rhs|`` and ``int f0**(p-1) |phi|`` so that test functions
    whose integrals cancel by symmetry still get a meaningful relative value.
    """
    testfn = as_field(testfn)
    quad = ChartQuadrature(fol.chart, grid)
    ext = extremal_closed_form(fol, p)
    f0 = ext(quad.U, quad.V)
    phi = np.broadcast_to(testfn(quad.U, quad.V), quad.U.shape)
    if not np.all(np.isfinite(phi)):
        raise GeometryError("test function is not bounded on the chart")
    hat_interp = fol.hat_interpolant(testfn)
    hat_vals = hat_interp(fol.phi(quad.U, quad.V))
    lhs = quad.integrate(f0 ** (p - 1) * phi)
    rhs = quad.integrate(f0 ** p * hat_vals)
    scale = max(abs(lhs), abs(rhs), quad.integrate(f0 ** (p - 1) * np.abs(phi)), 1e-30)
    return {
        "lhs": lhs,
        "rhs": rhs,
        "residual": abs(lhs - rhs) / scale,
        "sup_phi": float(np.max(np.abs(phi))),
        "sup_hat_phi": float(np.max(np.abs(hat_interp(fol.table().levels)))),
    }


def admissibility_diagnostics(fol: SubmersionFoliation, grid=(64, 64)) -> dict:
    """Sampled bounds behind the admissibility theorem.

    Reports ``C1 < J < C2`` over quadrature nodes, the longest and shortest
    traced leaf (``hat 1``), and the chart volume.  Violations are listed in
    ``report["violations"]``; nothing is raised.
    """
    report = {"violations": []}
    try:
        quad = ChartQuadrature(fol.chart, grid)
        report["volume"] = float(np.sum(quad.weights))
        if not np.isfinite(report["volume"]):
            report["violations"].append("chart volume is not finite")
        c = fol.chart
        U = np.concatenate([quad.U.ravel(), np.linspace(*c.u_range, 201).repeat(201)])
        V = np.concatenate([quad.V.ravel(), np.tile(np.linspace(*c.v_range, 201), 201)])
        J = fol.jacobian(U, V, check=False)
        report["jacobian_min"] = float(J.min())
        report["jacobian_max"] = float(J.max())
        if J.min() < SING_TOL:
            k = int(np.argmin(J))
            report["violations"].append(
                f"submersion degenerate at ({U[k]:.6g}, {V[k]:.6g})"
            )
            report["ok"] = False
            return report
        if not np.isfinite(J.max()):
            report["violations"].append("jacobian is unbounded")
        lengths = fol.table().lengths
        report["max_leaf_length"] = float(lengths.max())
        report["min_leaf_length"] = float(lengths.min())
        report["n_leaves"] = int(lengths.size)
        if not np.isfinite(lengths.max()) or lengths.max() >= fol.max_leaf_length:
            report["violations"].append("leaf of infinite length (F_infinity nonempty)")
    except GeometryError as exc:
        report["violations"].append(str(exc))
    report["ok"] = not report["violations"]
    return report
