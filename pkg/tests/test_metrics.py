import numpy as np
import pytest

from finsler.errors import DomainError, InvalidMetric, SlitViolation
from finsler.jets import dot
from finsler.metrics import (BUILTIN_IDS, MetricSpec, catalog_ids, domain_contains, finsler_value,
                             get_metric, homogeneity_residual, register_metric, renamed,
                             sample_tangents, unregister_metric)
from finsler.spray import flag_curvature_fit, fundamental_tensor


def test_catalog_lists_builtins():
    assert set(BUILTIN_IDS) <= set(catalog_ids())
    assert {"euclidean", "klein", "funk", "berwald_flat"} == set(BUILTIN_IDS)


def test_unknown_metric():
    with pytest.raises(KeyError):
        get_metric("poincare")


@pytest.mark.parametrize("metric", BUILTIN_IDS)
def test_homogeneity(metric):
    spec = get_metric(metric)
    x, y = sample_tangents(spec, 100, np.random.default_rng(1))
    assert homogeneity_residual(spec, x, y) < 1e-12


@pytest.mark.parametrize("metric", BUILTIN_IDS)
def test_fundamental_tensor_positive(metric):
    spec = get_metric(metric)
    x, y = sample_tangents(spec, 100, np.random.default_rng(2))
    g = fundamental_tensor(spec, x, y)
    assert np.min(np.linalg.eigvalsh(g)) > 0


@pytest.mark.parametrize("metric", ["euclidean", "klein", "funk"])
def test_higher_dimension(metric):
    spec = get_metric(metric, dimension=3)
    x, y = sample_tangents(spec, 20, np.random.default_rng(3))
    assert homogeneity_residual(spec, x, y) < 1e-12
    assert np.min(np.linalg.eigvalsh(fundamental_tensor(spec, x, y))) > 0


def test_euclidean_value():
    assert float(finsler_value(get_metric("euclidean"), [5.0, 5.0], [3.0, 4.0]).value) == 5.0


def test_klein_at_origin_is_euclidean():
    assert float(finsler_value(get_metric("klein"), [0.0, 0.0], [3.0, 4.0]).value) == pytest.approx(5.0)


def test_funk_at_origin_is_euclidean():
    assert float(finsler_value(get_metric("funk"), [0.0, 0.0], [0.6, 0.8]).value) == pytest.approx(1.0)


def test_funk_is_not_reversible():
    spec = get_metric("funk")
    x, y = np.array([0.4, 0.0]), np.array([1.0, 0.0])
    fwd = float(finsler_value(spec, x, y).value)
    back = float(finsler_value(spec, x, -y).value)
    # along the radius F = 1/(1 - |x|) outward and 1/(1 + |x|) inward
    assert fwd == pytest.approx(1.0 / 0.6)
    assert back == pytest.approx(1.0 / 1.4)


def test_energy_matches_square():
    spec = get_metric("klein")
    x, y = sample_tangents(spec, 50, np.random.default_rng(4))
    np.testing.assert_allclose(spec.F2(x, y, 0).value, spec.F(x, y, 0).value ** 2, rtol=1e-13)


def test_domain_checks():
    spec = get_metric("funk")
    inside, margin = domain_contains(spec, [0.6, 0.0])
    assert inside and margin == pytest.approx(0.4)
    assert not domain_contains(spec, [0.8, 0.8])[0]
    assert domain_contains(get_metric("euclidean"), [1e6, 0.0])[0]
    with pytest.raises(DomainError):
        finsler_value(spec, [0.8, 0.8], [1.0, 0.0])
    with pytest.raises(SlitViolation):
        finsler_value(spec, [0.1, 0.0], [0.0, 0.0])


def test_sample_tangents_ranges():
    spec = get_metric("klein")
    x, y = sample_tangents(spec, 500, np.random.default_rng(5))
    assert np.all(np.linalg.norm(x, axis=1) <= 0.7 + 1e-12)
    norms = np.linalg.norm(y, axis=1)
    assert np.all((norms >= 0.5 - 1e-12) & (norms <= 2.0 + 1e-12))


def _quadratic(q):
    q = np.asarray(q, dtype=float)

    def F(x, y):
        s = 0.0 * y[0]
        for i in range(2):
            for j in range(2):
                s = s + q[i, j] * y[i] * y[j]
        return s.sqrt()

    return F


def test_register_constant_quadratic_metric_is_flat():
    spec = MetricSpec("test_quadratic", 2, _quadratic([[2.0, 0.5], [0.5, 1.0]]))
    register_metric(spec)
    try:
        assert "test_quadratic" in catalog_ids()
        lam, residual = flag_curvature_fit(get_metric("test_quadratic"))
        assert abs(lam) < 1e-10
        assert residual < 1e-10
        with pytest.raises(InvalidMetric):
            register_metric(spec)
    finally:
        unregister_metric("test_quadratic")
    assert "test_quadratic" not in catalog_ids()


def test_register_rejects_non_homogeneous():
    spec = MetricSpec("test_energy_as_norm", 2, lambda x, y: dot(y, y))
    with pytest.raises(InvalidMetric):
        register_metric(spec)
    assert "test_energy_as_norm" not in catalog_ids()


def test_register_rejects_builtin_id():
    with pytest.raises(InvalidMetric):
        register_metric(renamed(get_metric("funk"), "klein"))
