import numpy as np
import pytest

from finsler.errors import UnsupportedOrder
from finsler.fields import (Bracket, CovariantDerivative, CurvatureField, ExplicitField,
                            FieldContext, covariant_derivative, curvature_field, vertical_bracket)
from finsler.metrics import get_metric, sample_tangents
from finsler.spray import fitted_lambda, fundamental_tensor

E1, E2 = [1.0, 0.0], [0.0, 1.0]


def points(metric, count=20, seed=0):
    spec = get_metric(metric)
    return (spec,) + sample_tangents(spec, count, np.random.default_rng(seed))


def test_euclidean_curvature_field_zero():
    spec, x, y = points("euclidean")
    xi = curvature_field(spec, E1, E2)
    assert np.max(np.abs(xi.components(x, y))) == 0.0
    assert np.max(np.abs(covariant_derivative(spec, xi, 0).components(x, y))) == 0.0


def test_berwald_flat_curvature_field_zero():
    spec, x, y = points("berwald_flat", 50)
    assert np.max(np.abs(curvature_field(spec, E1, E2).components(x, y))) < 1e-8


def test_funk_curvature_field_closed_form():
    spec, x, y = points("funk", 50)
    lam = fitted_lambda(spec)
    g = fundamental_tensor(spec, x, y)
    gy = np.einsum("sjm,sm->sj", g, y)
    expected = lam * np.stack([-gy[:, 1], gy[:, 0]], axis=1)
    np.testing.assert_allclose(curvature_field(spec, E1, E2).components(x, y), expected, atol=1e-8)


def test_curvature_field_bilinear_antisymmetric():
    spec, x, y = points("funk")
    a = curvature_field(spec, [0.3, -1.2], [2.0, 0.5]).components(x, y)
    b = curvature_field(spec, E1, E2).components(x, y)
    det = 0.3 * 0.5 - (-1.2) * 2.0
    np.testing.assert_allclose(a, det * b, atol=1e-12)
    c = curvature_field(spec, E2, E1).components(x, y)
    np.testing.assert_allclose(c, -b, atol=0)


def _tangency(spec, field, x, y):
    comps = field.components(x, y)
    F = spec.F(x, y, 1)
    Fy = np.stack([F.partial((2,)), F.partial((3,))], axis=1)
    return np.max(np.abs(np.einsum("si,si->s", Fy, comps)) / (1.0 + np.linalg.norm(comps, axis=1)))


@pytest.mark.parametrize("metric", ["funk", "klein"])
def test_fields_tangent_to_indicatrix(metric):
    spec, x, y = points(metric)
    xi = curvature_field(spec, E1, E2)
    d1 = covariant_derivative(spec, xi, 0)
    d12 = CovariantDerivative(d1, 1)
    br = vertical_bracket(xi, d1)
    for field in (xi, d1, d12, br, Bracket(d1, CovariantDerivative(xi, 1))):
        assert _tangency(spec, field, x, y) < 1e-8, field


def test_bracket_with_itself_vanishes():
    spec, x, y = points("funk")
    xi = CovariantDerivative(curvature_field(spec, E1, E2), 0)
    assert np.max(np.abs(vertical_bracket(xi, xi).components(x, y))) == 0.0


def test_bracket_antisymmetric():
    spec, x, y = points("funk")
    xi = curvature_field(spec, E1, E2)
    eta = CovariantDerivative(xi, 1)
    np.testing.assert_allclose(Bracket(xi, eta).components(x, y), -Bracket(eta, xi).components(x, y),
                               atol=1e-15)


def test_jacobi_identity():
    spec, x, y = points("funk", 20, seed=5)
    xi = curvature_field(spec, E1, E2)
    a, b = CovariantDerivative(xi, 0), CovariantDerivative(xi, 1)
    c = ExplicitField(spec, lambda xs, ys: [ys[0] * ys[1] + xs[0], ys[0] * ys[0] - 2.0 * ys[1]], "poly")
    ctx = FieldContext(spec, x, y, 3)
    total = (Bracket(Bracket(a, b), c).evaluate(ctx).value
             + Bracket(Bracket(b, c), a).evaluate(ctx).value
             + Bracket(Bracket(c, a), b).evaluate(ctx).value)
    assert np.max(np.abs(total)) < 1e-7


def test_rotation_field_bracket():
    spec, x, y = points("euclidean", 5)
    rot = ExplicitField(spec, lambda xs, ys: [-1.0 * ys[1], ys[0]], "rot")
    euler = ExplicitField(spec, lambda xs, ys: [ys[0], ys[1]], "euler")
    # the Euler field commutes with every linear field
    assert np.max(np.abs(Bracket(rot, euler).components(x, y))) < 1e-15
    np.testing.assert_allclose(rot.components(x, y), np.stack([-y[:, 1], y[:, 0]], 1))


def test_depth_budget_enforced():
    spec, x, y = points("funk", 3)
    xi = curvature_field(spec, E1, E2)
    deep = CovariantDerivative(CovariantDerivative(xi, 0), 1)
    ctx = FieldContext(spec, x, y, 1)
    with pytest.raises(UnsupportedOrder):
        deep.evaluate(ctx)


def test_memoized_context_reuses_subtrees():
    spec, x, y = points("funk", 3)
    xi = curvature_field(spec, E1, E2)
    ctx = FieldContext(spec, x, y, 2)
    assert xi.evaluate(ctx) is xi.evaluate(ctx)


def test_labels_and_depths():
    spec = get_metric("funk")
    xi = CurvatureField(spec, E1, E2)
    d = CovariantDerivative(xi, 1)
    b = Bracket(xi, d)
    assert (xi.depth, d.depth, b.depth) == (0, 1, 2)
    assert d.label == "D2R((1,0),(0,1))"
    assert b.label.startswith("[R(")


def test_covariant_derivative_direction_vector():
    spec, x, y = points("funk", 5)
    xi = curvature_field(spec, E1, E2)
    combo = CovariantDerivative(xi, [2.0, -1.0]).components(x, y)
    parts = 2.0 * CovariantDerivative(xi, 0).components(x, y) - CovariantDerivative(xi, 1).components(x, y)
    np.testing.assert_allclose(combo, parts, atol=1e-13)


def test_foreign_field_rejected():
    xi = curvature_field(get_metric("funk"), E1, E2)
    with pytest.raises(ValueError):
        covariant_derivative(get_metric("klein"), xi, 0)
