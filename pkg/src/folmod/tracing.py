"""Vectorised RK4 tracing of level curves.

All leaves of a batch advance together; finished ones drop out of the
active set.  Tracing is two-pass: a coarse pass finds where each leaf closes
up or leaves the box (events are located to round-off by regula falsi on a
partial RK4 step), then a fine pass retraces every leaf with a uniform
arc-length step that divides its length exactly.  Closed leaves get the
periodic trapezoid rule, open ones composite Simpson.
"""

from __future__ import annotations

import numpy as np

from .geometry import Curve, GeometryError, MetricChart

__all__ = ["LevelSetSystem", "LeafTooLong", "trace_level_curves", "find_seeds"]


class LeafTooLong(GeometryError):
    """A traced leaf exceeded the maximum admissible length."""


class LevelSetSystem:
    """The three callables a tracer needs from a foliation.

    Each takes ``(u, v, idx)`` where ``idx`` indexes the leaves of the
    batch, so per-leaf parameters (the flow time of a flowed foliation, say)
    can be looked up.

    tangent(u, v, idx)  -> unit leaf tangent (T1, T2)
    value(u, v, idx)    -> submersion value
    newton(u, v, idx)   -> grad(value) / |grad(value)|^2, the level-change direction

    With ``value=None`` leaves are plain integral curves of ``tangent``
    (no projection back onto a level set).
    """

    def __init__(self, chart: MetricChart, tangent, value, newton):
        self.chart = chart
        self.tangent = tangent
        self.value = value
        self.newton = newton


def _rk4(system, u, v, h, idx):
    T = system.tangent
    a1, b1 = T(u, v, idx)
    a2, b2 = T(u + 0.5 * h * a1, v + 0.5 * h * b1, idx)
    a3, b3 = T(u + 0.5 * h * a2, v + 0.5 * h * b2, idx)
    a4, b4 = T(u + h * a3, v + h * b3, idx)
    return (
        u + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4),
        v + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4),
    )


def _project(system, u, v, levels, idx, tol):
    """Newton-correct points back onto their level sets (skipped without a value)."""
    if system.value is None:
        return u, v
    for _ in range(4):
        r = system.value(u, v, idx) - levels
        bad = np.abs(r) > tol
        if not np.any(bad):
            break
        nu, nv = system.newton(u[bad], v[bad], idx[bad])
        u = u.copy()
        v = v.copy()
        u[bad] -= r[bad] * nu
        v[bad] -= r[bad] * nv
    return u, v


def _edge_margins(chart, u, v, tol):
    """Signed coordinate distances to the non-periodic edges (plus tol), shape (4, n)."""
    inf = np.full(np.shape(u), np.inf)
    m = [inf, inf, inf, inf]
    if not chart.periodic_u:
        m[0] = u - chart.u_range[0]
        m[1] = chart.u_range[1] - u
    if not chart.periodic_v:
        m[2] = v - chart.v_range[0]
        m[3] = chart.v_range[1] - v
    return np.array(m) + tol


def _locate_event(system, u0, v0, h, idx, event, f0, f1, iters=40):
    """Fraction s in (0, 1] of the step at which ``event`` crosses zero.

    Illinois-modified regula falsi on the partial RK4 step.
    """
    lo = np.zeros_like(f0)
    hi = np.ones_like(f0)
    flo, fhi = f0.copy(), f1.copy()
    side = np.zeros(f0.shape, dtype=int)
    s = hi.copy()
    for _ in range(iters):
        denom = flo - fhi
        s = np.where(denom != 0, lo + (hi - lo) * flo / np.where(denom != 0, denom, 1), 0.5 * (lo + hi))
        s = np.clip(s, lo, hi)
        uu, vv = _rk4(system, u0, v0, s * h, idx)
        fs = event(uu, vv, idx)
        left = np.sign(fs) == np.sign(flo)
        # keep the bracket [lo, hi] with sign change
        lo = np.where(left, s, lo)
        flo = np.where(left, fs, flo)
        hi = np.where(left, hi, s)
        fhi = np.where(left, fhi, fs)
        # Illinois: halve the stale endpoint value
        fhi = np.where(left & (side == 1), 0.5 * fhi, fhi)
        flo = np.where(~left & (side == -1), 0.5 * flo, flo)
        side = np.where(left, 1, -1)
        if np.all(np.abs(fs) < 1e-14) or np.all(hi - lo < 1e-15):
            break
    return s


def _march(system, seeds_u, seeds_v, levels, step, direction, max_length,
           detect_closure, box_tol, trace_tol):
    """Coarse pass: integrate until each leaf closes or exits.

    Returns (status, length, end_u, end_v) with status 1 = closed, 2 = exited.
    """
    chart = system.chart
    n = seeds_u.size
    u = seeds_u.copy()
    v = seeds_v.copy()
    length = np.zeros(n)
    status = np.zeros(n, dtype=int)
    end_u = np.full(n, np.nan)
    end_v = np.full(n, np.nan)
    all_idx = np.arange(n)
    t_seed = system.tangent(seeds_u, seeds_v, all_idx)
    h_dir = step * direction

    def closure_fn(uu, vv, idx):
        du, dv = chart.periodic_delta(uu - seeds_u[idx], vv - seeds_v[idx])
        return chart.inner(seeds_u[idx], seeds_v[idx], (du, dv),
                           (t_seed[0][idx], t_seed[1][idx]))

    edge = np.zeros(n, dtype=int)

    def exit_fn(uu, vv, idx):
        # exact edge position; box_tol only decides that an exit happened
        m = _edge_margins(chart, uu, vv, 0.0)
        return m[edge[idx], np.arange(m.shape[1])]

    # leaves seeded outside the box are already finished
    outside = _edge_margins(chart, u, v, box_tol).min(axis=0) < 0
    status[outside] = 2
    end_u[outside], end_v[outside] = u[outside], v[outside]
    active = status == 0
    while np.any(active):
        idx = np.flatnonzero(active)
        u0, v0 = u[idx], v[idx]
        u1, v1 = _rk4(system, u0, v0, h_dir, idx)
        u1, v1 = _project(system, u1, v1, levels[idx], idx, trace_tol * 1e-3)
        margins = _edge_margins(chart, u1, v1, box_tol)
        exited = margins.min(axis=0) < 0
        # the event for an exiting leaf is the edge it crossed the most
        edge[idx] = np.argmin(margins, axis=0)
        m1 = exit_fn(u1, v1, idx)
        closed = np.zeros_like(exited)
        if detect_closure:
            c0 = closure_fn(u0, v0, idx)
            c1 = closure_fn(u1, v1, idx)
            du, dv = chart.periodic_delta(u1 - seeds_u[idx], v1 - seeds_v[idx])
            near = np.hypot(du, dv) < 4 * step
            closed = (length[idx] > 3 * step) & (c0 < 0) & (c1 >= 0) & near & ~exited
        if np.any(exited):
            k = idx[exited]
            f0 = exit_fn(u0[exited], v0[exited], k)
            s = np.zeros(k.size)
            ok = f0 > 0
            if np.any(ok):
                s[ok] = _locate_event(system, u0[exited][ok], v0[exited][ok], h_dir, k[ok],
                                      exit_fn, f0[ok], m1[exited][ok])
            eu, ev = _rk4(system, u0[exited], v0[exited], s * h_dir, k)
            eu, ev = _project(system, eu, ev, levels[k], k, trace_tol * 1e-3)
            end_u[k], end_v[k] = eu, ev
            length[k] += s * step
            status[k] = 2
        if np.any(closed):
            k = idx[closed]
            s = _locate_event(system, u0[closed], v0[closed], h_dir, k, closure_fn,
                              c0[closed], c1[closed])
            eu, ev = _rk4(system, u0[closed], v0[closed], s * h_dir, k)
            eu, ev = _project(system, eu, ev, levels[k], k, trace_tol * 1e-3)
            end_u[k], end_v[k] = eu, ev
            length[k] += s * step
            status[k] = 1
        going = ~(exited | closed)
        k = idx[going]
        u[k], v[k] = u1[going], v1[going]
        length[k] += step
        if np.any(length > max_length):
            bad = int(np.argmax(length))
            raise LeafTooLong(
                f"leaf too long: level {levels[bad]:.6g} exceeds max length {max_length:.6g}"
            )
        active = status == 0
    return status, length, end_u, end_v


def trace_level_curves(system: LevelSetSystem, seeds_u, seeds_v, levels, step,
                       max_length, trace_tol=1e-8, coarse_factor=4.0):
    """Trace the level curves through ``seeds`` and return one Curve per seed."""
    chart = system.chart
    seeds_u = np.asarray(seeds_u, dtype=float).ravel()
    seeds_v = np.asarray(seeds_v, dtype=float).ravel()
    levels = np.asarray(levels, dtype=float).ravel()
    n = seeds_u.size
    span = max(chart.u_range[1] - chart.u_range[0], chart.v_range[1] - chart.v_range[0])
    box_tol = 1e-9 * span
    coarse = step * coarse_factor

    status, length, eu, ev = _march(system, seeds_u, seeds_v, levels, coarse, 1.0,
                                    max_length, True, box_tol, trace_tol)
    open_ = status == 2
    start_u, start_v = seeds_u.copy(), seeds_v.copy()
    if np.any(open_):
        k = np.flatnonzero(open_)
        sub = LevelSetSystem(
            chart,
            lambda a, b, i: system.tangent(a, b, k[i]),
            None if system.value is None else (lambda a, b, i: system.value(a, b, k[i])),
            lambda a, b, i: system.newton(a, b, k[i]),
        )
        _, back_len, bu, bv = _march(sub, seeds_u[k], seeds_v[k], levels[k], coarse,
                                     -1.0, max_length, False, box_tol, trace_tol)
        length[k] += back_len
        start_u[k], start_v[k] = bu, bv
        if np.any(length > max_length):
            raise LeafTooLong(f"leaf too long: exceeds max length {max_length:.6g}")

    # fine pass with a step dividing each length exactly; the length is then
    # Newton-corrected on the end condition (closure or edge) and the leaves
    # whose length moved are retraced, so quadrature nodes close up exactly
    nsteps = np.maximum(np.ceil(length / step).astype(int), 8)
    nsteps += nsteps % 2
    nmax = int(nsteps.max()) if n else 0
    U = np.full((nmax + 1, n), np.nan)
    V = np.full((nmax + 1, n), np.nan)
    closed_mask = status == 1
    t_start = system.tangent(start_u, start_v, np.arange(n))
    todo = np.arange(n)
    h = np.zeros(n)
    for _ in range(3):
        h[todo] = length[todo] / nsteps[todo]
        _fine_pass(system, start_u, start_v, levels, length, nsteps, todo, U, V, trace_tol)
        delta = _end_mismatch(system, U, V, nsteps, todo, closed_mask, start_u, start_v,
                              t_start)
        length[todo] -= delta
        moved = np.abs(delta) > 1e-13 * np.maximum(length[todo], 1.0)
        todo = todo[moved]
        if todo.size == 0:
            break

    curves = []
    for i in range(n):
        m = nsteps[i]
        pts = np.column_stack([U[: m + 1, i], V[: m + 1, i]])
        if status[i] == 1:
            pts = pts[:m]
            w = np.full(m, h[i])
            closed = True
        else:
            w = np.full(m + 1, 2.0)
            w[1::2] = 4.0
            w[0] = w[-1] = 1.0
            w *= h[i] / 3
            closed = False
        curves.append(Curve(pts, w, closed=closed, level=float(levels[i])))
    return curves


def _fine_pass(system, start_u, start_v, levels, length, nsteps, todo, U, V, trace_tol):
    h = length[todo] / nsteps[todo]
    u, v = start_u[todo].copy(), start_v[todo].copy()
    U[0, todo], V[0, todo] = u, v
    ns = nsteps[todo]
    for j in range(1, int(ns.max()) + 1):
        live = np.flatnonzero(ns >= j)
        idx = todo[live]
        uu, vv = _rk4(system, u[live], v[live], h[live], idx)
        uu, vv = _project(system, uu, vv, levels[idx], idx, trace_tol * 1e-3)
        u[live], v[live] = uu, vv
        U[j, idx], V[j, idx] = uu, vv


def _end_mismatch(system, U, V, nsteps, todo, closed_mask, start_u, start_v, t_start):
    """Signed arc length by which each traced leaf overshoots its end condition."""
    chart = system.chart
    eu = U[nsteps[todo], todo]
    ev = V[nsteps[todo], todo]
    delta = np.zeros(todo.size)
    c = closed_mask[todo]
    if np.any(c):
        k = todo[c]
        du, dv = chart.periodic_delta(eu[c] - start_u[k], ev[c] - start_v[k])
        delta[c] = chart.inner(start_u[k], start_v[k], (du, dv),
                               (t_start[0][k], t_start[1][k]))
    o = ~c
    if np.any(o):
        k = todo[o]
        m = _edge_margins(chart, eu[o], ev[o], 0.0)
        T = system.tangent(eu[o], ev[o], k)
        rate = np.array([T[0], -T[0], T[1], -T[1]])
        # the exit edge is the nearby one the leaf crosses transversally
        score = np.where(np.abs(rate) > 0.1, np.abs(m), np.inf)
        e = np.argmin(score, axis=0)
        cols = np.arange(k.size)
        mm, rr = m[e, cols], rate[e, cols]
        ok = np.isfinite(score[e, cols])
        delta[o] = np.where(ok, mm / np.where(ok, rr, 1.0), 0.0)
    return delta


def find_seeds(chart: MetricChart, value, newton, levels, samples=201, tol=1e-13):
    """A point on each requested level set, by nearest sample plus Newton."""
    levels = np.asarray(levels, dtype=float)
    uu = np.linspace(*chart.u_range, samples)
    vv = np.linspace(*chart.v_range, samples)
    U, V = np.meshgrid(uu, vv, indexing="ij")
    F = value(U, V).ravel()
    pick = np.argmin(np.abs(F[None, :] - levels[:, None]), axis=1)
    u = U.ravel()[pick].copy()
    v = V.ravel()[pick].copy()
    for _ in range(50):
        r = value(u, v) - levels
        if np.all(np.abs(r) <= tol * (1 + np.abs(levels))):
            break
        nu, nv = newton(u, v)
        u = np.clip(u - r * nu, *chart.u_range) if not chart.periodic_u else u - r * nu
        v = np.clip(v - r * nv, *chart.v_range) if not chart.periodic_v else v - r * nv
    return u, v
