import numpy as np
import pytest

from folmod import (
    ChartQuadrature,
    GeometryError,
    MetricChart,
    SubmersionFoliation,
    admissibility_diagnostics,
    extremal_closed_form,
    integral_identity_residual,
    integrate_curve,
    modulus_closed_form,
    trace_leaf,
)
from folmod.expr import EvalError
from folmod.foliation import hat, jacobian
from folmod.tracing import LeafTooLong

E = np.e


def test_jacobian_examples(annulus, rect):
    r = np.linspace(1.1, 2.6, 7)
    assert np.allclose(jacobian(SubmersionFoliation(annulus, "u"), r, 0.3), 1.0, atol=1e-10)
    assert np.allclose(jacobian(SubmersionFoliation(annulus, "v"), r, 0.3), 1 / r, rtol=1e-8)
    assert np.allclose(jacobian(SubmersionFoliation(rect, "v"), 0.5, 0.5), 1.0, atol=1e-10)


def test_jacobian_degenerate_point():
    box = MetricChart((-1, 1), (-1, 1), "1", "0", "1")
    fol = SubmersionFoliation(box, "u*v")
    with pytest.raises(GeometryError, match="submersion degenerate"):
        jacobian(fol, 0.0, 0.0)


def test_trace_circle(circles):
    for r in (1.2, 2.0):
        leaf = trace_leaf(circles, (r, 0.0))
        assert leaf.closed
        assert leaf.length == pytest.approx(2 * np.pi * r, rel=1e-6)
        assert np.max(np.abs(circles.phi(leaf.u, leaf.v) - r)) < 1e-8


def test_trace_horizontal_segment(horizontal):
    leaf = trace_leaf(horizontal, (0.0, 0.3))
    assert not leaf.closed
    assert leaf.length == pytest.approx(2.0, rel=1e-12)
    assert np.max(np.abs(leaf.v - 0.3)) < 1e-8


def test_traced_leaves_stay_on_level(wavy):
    fam = wavy.leaf_family(9)
    for leaf, c in zip(fam.leaves, fam.levels):
        assert np.max(np.abs(wavy.phi(leaf.u, leaf.v) - c)) < 1e-8
        assert leaf.u.min() >= 0 - 1e-12 and leaf.u.max() <= 2 + 1e-12


def test_leaf_too_long(annulus):
    fol = SubmersionFoliation(annulus, "u", max_leaf_length=3.0)
    with pytest.raises(LeafTooLong, match="leaf too long"):
        trace_leaf(fol, (2.0, 0.0))


def test_hat_examples(circles):
    assert hat(circles, 1.0, (1.5, 0.2)) == pytest.approx(3 * np.pi, rel=1e-8)
    assert hat(circles, 0.0, (1.5, 0.2)) == 0.0
    f0 = extremal_closed_form(circles, 2)
    assert hat(circles, f0.f0, (1.5, 0.2)) == pytest.approx(1.0, rel=1e-8)


@pytest.mark.parametrize("p", [2, 3, 1.5])
def test_extremal_circles(circles, p):
    r = np.linspace(1.05, 2.65, 9)
    f0 = extremal_closed_form(circles, p)(r, 1.0 + 0 * r)
    assert np.allclose(f0, 1 / (2 * np.pi * r), rtol=1e-8)


def test_extremal_radial(radial):
    r = np.linspace(1.05, 2.65, 9)
    assert np.allclose(extremal_closed_form(radial, 2)(r, 0.7 + 0 * r), 1 / r, rtol=1e-8)


def test_extremal_horizontal(horizontal):
    f0 = extremal_closed_form(horizontal, 3)(np.array([0.1, 1.3]), np.array([0.2, 0.9]))
    assert np.allclose(f0, 0.5, rtol=1e-10)


def test_extremal_rejects_p_le_1(horizontal):
    with pytest.raises(ValueError):
        extremal_closed_form(horizontal, 1.0)


@pytest.mark.parametrize("name", ["circles", "horizontal", "wavy"])
def test_extremal_positive_and_normalised(name, request):
    fol = request.getfixturevalue(name)
    ext = extremal_closed_form(fol, 2)
    quad = ChartQuadrature(fol.chart, (16, 16))
    assert np.all(ext(quad.U, quad.V) > 0)
    for leaf in fol.leaf_family(11).leaves:
        assert integrate_curve(leaf, ext.f0) == pytest.approx(1.0, abs=1e-6)


def test_modulus_golden(circles, radial, horizontal):
    assert modulus_closed_form(circles, 2) == pytest.approx(1 / np.sqrt(2 * np.pi), rel=1e-4)
    assert modulus_closed_form(radial, 2) == pytest.approx(np.sqrt(2 * np.pi), rel=1e-4)
    assert modulus_closed_form(horizontal, 3) == pytest.approx(0.25 ** (1 / 3), rel=1e-5)


def test_modulus_below_admissible_competitors(circles, horizontal):
    quad_a = ChartQuadrature(circles.chart, (64, 64))
    quad_r = ChartQuadrature(horizontal.chart, (64, 64))
    competitors = [
        (circles, quad_a, lambda u, v: (1 + 0.3 * np.sin(v)) / (2 * np.pi * u)),
        (circles, quad_a, lambda u, v: (1 + 0.5 * np.cos(2 * v) ** 2) / (2 * np.pi * u)),
        (horizontal, quad_r, lambda u, v: (1 + 0.5 * np.cos(np.pi * u)) / 2),
        (horizontal, quad_r, lambda u, v: np.exp(u) * (1 + v)),
    ]
    for p in (2, 3):
        for fol, quad, f in competitors:
            # rescale so the smallest sampled leaf integral is exactly 1
            hats = [integrate_curve(leaf, f) for leaf in fol.leaf_family(33).leaves]
            c = 1.0 / min(hats)
            assert min(hats) * c >= 1 - 1e-8
            norm = quad.integrate((c * f(quad.U, quad.V)) ** p) ** (1 / p)
            assert modulus_closed_form(fol, p, (64, 64)) <= norm + 1e-6


def test_conformal_invariance_p2():
    scaled = MetricChart((1.0, E), (0, 2 * np.pi), "9", "0", "9*u^2",
                         boundary_policy="periodic_v")
    base = SubmersionFoliation(MetricChart.annulus(1.0, E), "u")
    m1 = modulus_closed_form(base, 2, (64, 64))
    m2 = modulus_closed_form(SubmersionFoliation(scaled, "u"), 2, (64, 64))
    assert m2 == pytest.approx(m1, rel=1e-6)


def test_identity_examples(circles):
    ext = extremal_closed_form(circles, 2)
    assert integral_identity_residual(circles, 2, ext.f0)["residual"] < 1e-10
    assert integral_identity_residual(circles, 2, "sin(v)/u")["residual"] < 1e-4
    assert integral_identity_residual(circles, 2, "u")["residual"] < 1e-4


def test_identity_rejects_unbounded_test_function(circles):
    with pytest.raises((GeometryError, EvalError)):
        integral_identity_residual(circles, 2, "1/(u-1)")


def test_admissibility_circles(circles):
    rep = admissibility_diagnostics(circles)
    assert rep["ok"]
    assert rep["jacobian_min"] == pytest.approx(1.0, abs=1e-9)
    assert rep["jacobian_max"] == pytest.approx(1.0, abs=1e-9)
    assert rep["max_leaf_length"] == pytest.approx(2 * np.pi * E, rel=1e-6)


def test_admissibility_horizontal(horizontal):
    rep = admissibility_diagnostics(horizontal)
    assert rep["ok"] and np.isfinite(rep["max_leaf_length"]) and np.isfinite(rep["volume"])


def test_admissibility_degenerate():
    box = MetricChart((-1, 1), (-1, 1), "1", "0", "1")
    rep = admissibility_diagnostics(SubmersionFoliation(box, "u*v"))
    assert not rep["ok"]
    assert any("degenerate" in v for v in rep["violations"])
