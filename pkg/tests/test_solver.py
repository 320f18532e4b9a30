import cvxpy as cp
import numpy as np
import pytest

from folmod import Curve, MetricChart, SubmersionFoliation, modulus_closed_form
from folmod.foliation import LeafFamily
from folmod.solver import assemble, solve, solver_extremal_vs_closed_form


def _segment(y, n=200, a=1.0):
    x = (np.arange(n) + 0.5) * a / n
    return Curve(np.column_stack([x, np.full(n, y)]), np.full(n, a / n))


def test_single_leaf_row_sums_to_length():
    fam = LeafFamily([_segment(0.5)], np.array([0.5]), np.array([1.0]))
    prob = assemble(MetricChart.rectangle(1, 1), fam, 2, grid=(4, 4))
    assert prob.leaf_rows.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(prob.leaf_rows.data >= 0) and np.all(prob.node_weights > 0)


def test_circle_rows_sum_to_circumference(circles):
    fam = circles.leaf_family(16)
    prob = assemble(circles.chart, fam, 2, grid=(24, 24))
    sums = np.asarray(prob.leaf_rows.sum(axis=1)).ravel()
    assert np.allclose(sums, 2 * np.pi * fam.levels, rtol=1e-6)


def test_empty_family_and_escaping_leaf():
    c = MetricChart.rectangle(1, 1)
    with pytest.raises(ValueError, match="no constraints"):
        assemble(c, LeafFamily([], np.array([]), np.array([])), 2)
    bad = Curve(np.array([[0.5, 0.5], [1.2, 0.5]]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError, match="leaves the grid box"):
        assemble(c, LeafFamily([bad], np.array([0.5]), np.array([1.0])), 2)


def test_single_leaf_matches_qp_closed_form():
    fam = LeafFamily([_segment(0.5 + 1 / 14)], np.array([0.5]), np.array([1.0]))
    prob = assemble(MetricChart.rectangle(1, 1), fam, 2, grid=(7, 7))
    assert prob.shape == (8, 8)
    a = prob.leaf_rows.toarray().ravel()
    w = prob.node_weights
    # min sum w f^2 s.t. a.f >= 1: f = (a/w) / sum(a^2/w)
    best = 1.0 / np.sum(a * a / w)
    res = solve(prob, tol=1e-12)
    assert res.primal_value == pytest.approx(best, rel=1e-6)
    f = res.f.ravel()
    assert np.allclose(f, (a / w) * best, atol=1e-8)


@pytest.mark.parametrize("p", [2.0, 3.0, 1.5])
def test_matches_cvxpy_oracle(p):
    fol = SubmersionFoliation(MetricChart.rectangle(2, 1), "v+0.1*sin(pi*u)*sin(pi*v)")
    prob = assemble(fol.chart, fol.leaf_family(10), p, grid=(12, 10))
    A = prob.leaf_rows.toarray()
    w = prob.node_weights
    f = cp.Variable(w.size, nonneg=True)
    cp.Problem(cp.Minimize(w @ cp.power(f, p)), [A @ f >= 1]).solve(solver=cp.CLARABEL)
    oracle = float(np.dot(w, np.maximum(f.value, 0) ** p))
    res = solve(prob, tol=1e-10)
    assert res.converged
    assert res.primal_value == pytest.approx(oracle, rel=1e-5)


def test_dual_ascent_monotone_and_weak_duality(circles):
    prob = assemble(circles.chart, circles.leaf_family(24), 2.5, grid=(32, 32))
    res = solve(prob, tol=1e-9)
    d = np.array(res.dual_history)
    assert np.all(np.diff(d) >= -1e-12 * np.abs(d[1:]))
    assert np.all(d[1:] <= np.array(res.primal_bound_history) * (1 + 1e-12))
    assert res.dual_value <= res.primal_value * (1 + 1e-12)


def test_termination_invariants(horizontal):
    prob = assemble(horizontal.chart, horizontal.leaf_family(16), 2, grid=(24, 24))
    res = solve(prob, tol=1e-9)
    Af = prob.leaf_rows @ res.f.ravel()
    assert res.converged
    assert np.min(Af) >= 1 - 1e-9
    assert np.all(res.f >= 0) and np.all(res.duals >= 0)
    assert np.max(np.abs(res.duals * (Af - 1))) <= 1e-8


def test_non_convergence_is_flagged(circles):
    prob = assemble(circles.chart, circles.leaf_family(24), 3, grid=(32, 32))
    res = solve(prob, tol=1e-14, max_iter=2)
    assert not res.converged and res.iterations == 2


def test_scale_covariance(wavy):
    prob = assemble(wavy.chart, wavy.leaf_family(12), 2, grid=(16, 16))
    m1 = solve(prob, tol=1e-12).modulus
    m3 = solve(prob.scaled(3.0), tol=1e-12).modulus
    assert m3 == pytest.approx(m1 / 3.0, rel=1e-8)


def test_rejects_p_le_1(horizontal):
    prob = assemble(horizontal.chart, horizontal.leaf_family(4), 2, grid=(4, 4))
    prob.p = 1.0
    with pytest.raises(ValueError):
        solve(prob)


def test_rectangle_example(horizontal):
    prob = assemble(horizontal.chart, horizontal.leaf_family(64), 2, grid=(64, 64))
    assert solve(prob).modulus == pytest.approx(np.sqrt(0.5), rel=5e-3)


def test_extremal_gap_rectangle_p3(horizontal):
    out = solver_extremal_vs_closed_form(horizontal, 3, grid=(48, 48), n_leaves=48)
    assert out["gap"] < 3e-2
    assert out["result"].modulus == pytest.approx(0.25 ** (1 / 3), rel=5e-3)


def test_refinement_reduces_error(circles):
    exact = modulus_closed_form(circles, 2)
    errs = []
    for n in (16, 32, 64):
        prob = assemble(circles.chart, circles.leaf_family(n), 2, grid=(n, n))
        errs.append(abs(solve(prob, tol=1e-10).modulus - exact))
    assert errs[0] > errs[1] > errs[2]
