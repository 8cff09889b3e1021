import itertools

import numpy as np
import pytest

from finsler.errors import ConsistencyFailure, MetricDegenerate, NotConstantCurvature
from finsler.jets import fd_partial
from finsler.metrics import BUILTIN_IDS, MetricSpec, get_metric, renamed, sample_tangents
from finsler.spray import (flag_curvature_fit, fitted_lambda, fundamental_tensor,
                           geodesic_coefficients, homogeneity_ladder, projective_factor,
                           projective_flatness_residual, projective_identity_residuals,
                           quadratic_form_test, rapcsak_residual, riemann_curvature,
                           spray_jets)


def samples(metric, count=50, seed=0):
    spec = get_metric(metric)
    x, y = sample_tangents(spec, count, np.random.default_rng(seed))
    return spec, x, y


def test_euclidean_tensor_is_identity():
    spec, x, y = samples("euclidean")
    np.testing.assert_allclose(fundamental_tensor(spec, x, y), np.broadcast_to(np.eye(2), (50, 2, 2)),
                               atol=1e-14)


def test_klein_origin_is_identity():
    g = fundamental_tensor(get_metric("klein"), [0.0, 0.0], [1.0, 0.0])
    np.testing.assert_allclose(g, np.eye(2), atol=1e-14)


def test_funk_tensor_matches_differences():
    spec = get_metric("funk")
    x, y = np.array([0.3, 0.0]), np.array([0.0, 1.0])
    g = fundamental_tensor(spec, x, y)
    for i, j in itertools.product(range(2), repeat=2):
        fd = 0.5 * fd_partial(spec.F2, x, y, (2 + i, 2 + j), 1e-4)
        assert abs(g[i, j] - fd) / (1 + abs(g[i, j])) < 1e-6


def test_degenerate_metric_raises():
    # the l4 norm is convex but its fundamental tensor degenerates on the axes
    def l4(x, y):
        return (y[0] ** 4 + y[1] ** 4).power(0.25)

    spec = MetricSpec("l4", 2, l4)
    with pytest.raises(MetricDegenerate):
        fundamental_tensor(spec, [0.0, 0.0], [1.0, 0.0])


@pytest.mark.parametrize("metric", BUILTIN_IDS)
def test_inverse_and_symmetry(metric):
    spec, x, y = samples(metric)
    sd = geodesic_coefficients(spec, x, y)
    np.testing.assert_allclose(sd.g @ sd.g_inv, np.broadcast_to(np.eye(2), sd.g.shape), atol=1e-10)
    np.testing.assert_allclose(sd.Gjk, np.swapaxes(sd.Gjk, -1, -2), atol=1e-12)


def test_euclidean_spray_vanishes():
    spec, x, y = samples("euclidean")
    sd = geodesic_coefficients(spec, x, y)
    assert np.max(np.abs(sd.G)) == 0 and np.max(np.abs(sd.Gj)) == 0 and np.max(np.abs(sd.Gjk)) == 0


def test_funk_spray_is_projective():
    spec = get_metric("funk")
    x, y = np.array([0.2, 0.1]), np.array([1.0, 1.0])
    G = geodesic_coefficients(spec, x, y).G
    P = projective_factor(spec, x, y).P
    assert np.linalg.norm(G - P * y) / (1 + np.linalg.norm(G)) < 1e-9


def test_klein_trace_identity():
    spec, x, y = samples("klein")
    sd = geodesic_coefficients(spec, x, y)
    pd = projective_factor(spec, x, y)
    trace = np.einsum("smkm->sk", sd.Gjk)
    assert np.max(np.abs(trace - 3 * pd.P_y)) < 1e-9


@pytest.mark.parametrize("metric", BUILTIN_IDS)
def test_connection_is_y_derivative_of_spray(metric):
    spec, x, y = samples(metric, 10)
    sd = geodesic_coefficients(spec, x, y)
    h = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (geodesic_coefficients(spec, x, y + e).G - geodesic_coefficients(spec, x, y - e).G) / (2 * h)
        np.testing.assert_allclose(sd.Gj[:, :, j], fd, atol=1e-7)


@pytest.mark.parametrize("metric", BUILTIN_IDS)
def test_homogeneity_ladder(metric):
    ladder = homogeneity_ladder(get_metric(metric), 100)
    assert max(ladder.values()) < 1e-10


@pytest.mark.parametrize("metric", BUILTIN_IDS)
def test_projective_factor_euler(metric):
    spec, x, y = samples(metric)
    pd = projective_factor(spec, x, y)
    np.testing.assert_allclose(np.einsum("sk,sk->s", y, pd.P_y), pd.P, atol=1e-10)
    assert np.max(np.abs(np.einsum("skl,sl->sk", pd.P_yy, y))) < 1e-10


def test_euclidean_projective_factor_zero():
    spec, x, y = samples("euclidean")
    assert np.max(np.abs(projective_factor(spec, x, y).P)) == 0


def test_klein_projective_factor_linear():
    spec, x, y = samples("klein")
    assert np.max(np.abs(projective_factor(spec, x, y).P_yy)) < 1e-9


def test_funk_curvature_identity():
    res = projective_identity_residuals(get_metric("funk"), 50)
    assert res["curvature"] < 1e-8


@pytest.mark.parametrize("metric", ["funk", "berwald_flat", "euclidean"])
def test_projective_flatness(metric):
    value = projective_flatness_residual(get_metric(metric), 100)
    assert value < 1e-8
    if metric == "euclidean":
        assert value == 0.0


@pytest.mark.parametrize("metric", ["funk", "klein", "berwald_flat"])
def test_projective_reconstructions(metric):
    res = projective_identity_residuals(get_metric(metric), 100)
    assert res["connection"] < 1e-9
    assert res["berwald"] < 1e-9
    assert res["trace"] < 1e-9


@pytest.mark.parametrize("metric", BUILTIN_IDS)
def test_riemann_antisymmetric(metric):
    spec, x, y = samples(metric, 100)
    R = riemann_curvature(spec, x, y).R
    assert np.max(np.abs(R + np.swapaxes(R, -1, -2))) == 0.0


def test_euclidean_riemann_zero():
    spec, x, y = samples("euclidean")
    assert np.max(np.abs(riemann_curvature(spec, x, y).R)) == 0.0


def test_berwald_flat_riemann_small():
    spec, x, y = samples("berwald_flat")
    assert np.max(np.linalg.norm(riemann_curvature(spec, x, y).R.reshape(50, -1), axis=1)) < 1e-8


def test_funk_riemann_constant_form():
    spec, x, y = samples("funk")
    cd = riemann_curvature(spec, x, y)
    assert cd.lambda_fit == pytest.approx(-0.25, abs=1e-6)
    assert cd.lambda_residual < 1e-7


@pytest.mark.parametrize("metric,expected", [
    ("euclidean", 0.0), ("klein", -1.0), ("funk", -0.25), ("berwald_flat", 0.0),
])
def test_flag_curvature_fit(metric, expected):
    lam, residual = flag_curvature_fit(get_metric(metric))
    assert lam == pytest.approx(expected, abs=1e-6)
    assert residual < 1e-6


def test_euclidean_fit_exact():
    assert flag_curvature_fit(get_metric("euclidean")) == (0.0, 0.0)


def _randers_like(x, y):
    # a non-projectively-flat metric with non-constant curvature
    yy = y[0] * y[0] + y[1] * y[1]
    return yy.sqrt() * (1.0 + 0.5 * x[0] * x[0]) + 0.3 * x[1] * y[0]


def test_nonconstant_curvature_rejected():
    spec = MetricSpec("bumpy", 2, _randers_like)
    with pytest.raises(NotConstantCurvature):
        flag_curvature_fit(spec, 50)


def test_fitted_lambda_checks_catalog_value():
    wrong = MetricSpec("klein_mislabelled", 2, get_metric("klein").finsler, nominal_lambda=-0.5,
                       radius=1.0)
    with pytest.raises(ConsistencyFailure):
        fitted_lambda(wrong)
    assert fitted_lambda(get_metric("klein")) == pytest.approx(-1.0, abs=1e-6)


def test_rapcsak_klein_variants_coincide():
    spec, x, y = samples("klein")
    printed, corrected = rapcsak_residual(spec, x, y)
    np.testing.assert_allclose(printed, corrected, atol=1e-12)
    assert np.max(printed) < 1e-8


def test_rapcsak_funk_adjudication():
    printed, corrected = rapcsak_residual(get_metric("funk"), [0.3, 0.1], [1.0, 2.0])
    assert (printed < 1e-7) != (corrected < 1e-7)
    assert corrected < 1e-7


def test_rapcsak_euclidean_zero():
    spec, x, y = samples("euclidean")
    printed, corrected = rapcsak_residual(spec, x, y)
    assert np.max(printed) == 0 and np.max(corrected) == 0


def test_quadratic_form_test():
    assert quadratic_form_test(get_metric("klein"), [0.4, -0.3]) < 1e-10
    assert quadratic_form_test(get_metric("funk"), [0.3, 0.0]) > 1e-3
    assert quadratic_form_test(get_metric("funk"), [0.0, 0.0]) < 1e-10


def test_linearity_link():
    funk, klein = get_metric("funk"), get_metric("klein")
    rng = np.random.default_rng(9)
    for x in rng.uniform(-0.5, 0.5, (5, 2)):
        if quadratic_form_test(funk, x) > 1e-3:
            y = rng.standard_normal((20, 2))
            assert np.max(np.abs(projective_factor(funk, np.broadcast_to(x, y.shape), y).P_yy)) > 1e-6
    _, x, y = samples("klein")
    assert np.max(np.abs(projective_factor(klein, x, y).P_yy)) < 1e-9


def test_spray_jets_low_orders():
    spec = get_metric("funk")
    s = spray_jets(spec, [0.1, 0.2], [1.0, 0.5], 0)
    assert s.Gj is None and s.Gjk is None
    s = spray_jets(spec, [0.1, 0.2], [1.0, 0.5], 1)
    assert s.Gj is not None and s.Gjk is None


def test_connection_coefficients_match_full_spray():
    from finsler.spray import connection_coefficients

    spec, x, y = samples("funk", 20)
    lean = np.moveaxis(connection_coefficients(spec, x, y), -1, 0)
    full = geodesic_coefficients(spec, x, y).Gj
    np.testing.assert_allclose(lean, full, atol=1e-13)
