"""Spray, nonlinear connection, Berwald coefficients and curvature.

Everything is computed from jets of F^2 (or F for the projective factor), so
each quantity is exact to rounding.  Tensor components come first in the jet
shape, batch axes after; the numeric wrappers move component axes last.

Index conventions: ``Gj[i, j] = dG^i/dy^j``, ``Gjk[i, j, k] = d^2 G^i/dy^j dy^k``,
``R[i, j, k] = R^i_jk``, ``P_xy[j, k] = d^2 P / dx^j dy^k``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyFailure, MetricDegenerate, NotConstantCurvature
from .jets import Jet, matmul, seed, stack
from .metrics import MetricSpec, finsler_value, sample_tangents

DEFAULT_SEED = 20240611
FIT_TOLERANCE = 1e-4
NOMINAL_TOLERANCE = 1e-6


def _components_last(arr: np.ndarray, k: int) -> np.ndarray:
    return np.moveaxis(arr, tuple(range(k)), tuple(range(-k, 0)))


def _inverse(g: Jet) -> Jet:
    """Jet inverse of a matrix via the terminating Neumann series about its value."""
    n = g.shape[0]
    g0 = _components_last(g.value, 2)
    g0_inv = np.moveaxis(np.linalg.inv(g0), (-2, -1), (0, 1))
    base = Jet.constant(g0_inv, g.nvars, g.order)
    nil = g - Jet.constant(g.value, g.nvars, g.order)
    step = -matmul(base, nil)
    term = base
    total = base
    for _ in range(g.order):
        term = matmul(step, term)
        total = total + term
    assert total.shape[:2] == (n, n)
    return total


@dataclass
class SprayJets:
    """Jets of g, g^-1, G^i, G^i_j, G^i_jk at a batch of points.

    ``order`` is the jet order of ``G``; ``Gj`` and ``Gjk`` carry one and two
    fewer orders and are ``None`` when that would be negative.
    """

    n: int
    order: int
    g: Jet
    g_inv: Jet
    G: Jet
    Gj: Jet | None
    Gjk: Jet | None
    y: Jet

    def riemann(self) -> Jet:
        """R^i_jk as a jet of order ``order - 2``."""
        n = self.n
        dGj = stack([self.Gj.d(k) for k in range(n)], axis=2)  # [i, j, k] = d_xk G^i_j
        Gj = self.Gj.truncate(self.order - 2)
        quad = (Gj.swap(0, 1).expand(0).expand(2) * self.Gjk.expand(1)).sum(3)
        half = dGj + quad
        return half - half.swap(1, 2)


def spray_jets(spec: MetricSpec, x, y, order: int) -> SprayJets:
    """Geodesic coefficients from the fundamental tensor, as jets of the given order."""
    n = spec.dimension
    F2 = spec.F2(x, y, order + 3)
    g = stack(
        [stack([0.5 * F2.d(n + i).d(n + j) for j in range(n)]) for i in range(n)]
    )
    dg = stack([g.d(k) for k in range(n)])  # [k, j, l] = d_xk g_jl
    _, ys = seed(x, y, order)
    Y = stack(ys)
    yy = Y.expand(1) * Y.expand(0)
    first = (dg * yy.expand(2)).sum((0, 1))
    second = (dg * yy.expand(0)).sum((1, 2))
    g_inv = _inverse(g.truncate(order))
    G = 0.25 * (g_inv * (2.0 * first - second).expand(0)).sum(1)
    Gj = stack([G.d(n + j) for j in range(n)], axis=1) if order >= 1 else None
    Gjk = stack([Gj.d(n + k) for k in range(n)], axis=2) if order >= 2 else None
    return SprayJets(n, order, g, g_inv, G, Gj, Gjk, Y)


def connection_coefficients(spec: MetricSpec, x, y) -> np.ndarray:
    """Values of G^i_j, shape ``(n, n, *batch)``; the lean path used by transport.

    Uses G^i = 1/4 g^il ([F^2]_x^k y^l y^k - [F^2]_x^l), which needs one
    fewer jet order than the Christoffel form.
    """
    n = spec.dimension
    F2 = spec.F2(x, y, 3)
    F2_y = [F2.d(n + l) for l in range(n)]
    g = stack([stack([0.5 * F2_y[i].d(n + j).truncate(1) for j in range(n)]) for i in range(n)])
    _, ys = seed(x, y, 1)
    rhs = []
    for l in range(n):
        term = -F2.d(l).truncate(1)
        for k in range(n):
            term = term + F2_y[l].d(k) * ys[k]
        rhs.append(term)
    G = 0.25 * (_inverse(g) * stack(rhs).expand(0)).sum(1)
    return np.stack([np.stack([G[i].d(n + j).value for j in range(n)]) for i in range(n)])


@dataclass
class SprayData:
    g: np.ndarray
    g_inv: np.ndarray
    G: np.ndarray
    Gj: np.ndarray
    Gjk: np.ndarray


@dataclass
class ProjectiveData:
    P: np.ndarray
    P_y: np.ndarray
    P_yy: np.ndarray
    P_xy: np.ndarray


@dataclass
class CurvatureData:
    R: np.ndarray
    lambda_fit: float
    lambda_residual: float


def _check_positive(g: np.ndarray) -> None:
    eig = np.linalg.eigvalsh(g)
    if not np.all(eig > 0):
        raise MetricDegenerate(f"fundamental tensor not positive definite (min eig {eig.min():.3e})")


def fundamental_tensor(spec: MetricSpec, x, y) -> np.ndarray:
    """g_ij = 1/2 d^2 F^2 / dy^i dy^j; shape ``(*batch, n, n)``."""
    n = spec.dimension
    F2 = finsler_value(spec, x, y, 2, squared=True)
    g = np.empty(F2.shape + (n, n))
    for i in range(n):
        for j in range(n):
            g[..., i, j] = 0.5 * F2.partial((n + i, n + j))
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    _check_positive(g)
    return g


def geodesic_coefficients(spec: MetricSpec, x, y) -> SprayData:
    finsler_value(spec, x, y, 0)
    s = spray_jets(spec, x, y, 2)
    _check_positive(_components_last(s.g.value, 2))
    return SprayData(
        g=_components_last(s.g.value, 2),
        g_inv=_components_last(s.g_inv.value, 2),
        G=_components_last(s.G.value, 1),
        Gj=_components_last(s.Gj.value, 2),
        Gjk=_components_last(s.Gjk.value, 3),
    )


def projective_jet(spec: MetricSpec, x, y, order: int) -> Jet:
    """P = (dF/dx^i y^i) / (2F) as a jet of the given order."""
    n = spec.dimension
    F = spec.F(x, y, order + 1)
    _, ys = seed(x, y, order)
    flow = sum((F.d(i) * ys[i] for i in range(n)), start=0.0 * ys[0])
    return flow / (2.0 * F.truncate(order))


def projective_factor(spec: MetricSpec, x, y) -> ProjectiveData:
    n = spec.dimension
    finsler_value(spec, x, y, 0)
    P = projective_jet(spec, x, y, 2)
    P_y = np.stack([P.partial((n + k,)) for k in range(n)], axis=-1)
    P_yy = np.empty(P.shape + (n, n))
    P_xy = np.empty(P.shape + (n, n))
    for j in range(n):
        for k in range(n):
            P_yy[..., j, k] = P.partial((n + j, n + k))
            P_xy[..., j, k] = P.partial((j, n + k))
    return ProjectiveData(P.value, P_y, P_yy, P_xy)


def constant_curvature_template(g: np.ndarray, y: np.ndarray) -> np.ndarray:
    """delta^i_k g_jm y^m - delta^i_j g_km y^m, shape ``(*batch, n, n, n)``."""
    n = g.shape[-1]
    gy = np.einsum("...jm,...m->...j", g, y)
    eye = np.eye(n)
    return (np.einsum("ik,...j->...ijk", eye, gy)
            - np.einsum("ij,...k->...ijk", eye, gy))


def riemann_tensor(spec: MetricSpec, x, y) -> np.ndarray:
    """R^i_jk with component axes last, ``(*batch, n, n, n)``."""
    return _components_last(spray_jets(spec, x, y, 2).riemann().value, 3)


def _fit(R: np.ndarray, T: np.ndarray) -> tuple[float, float]:
    tt = float(np.sum(T * T))
    lam = float(np.sum(R * T) / tt) if tt > 0 else 0.0
    dev = (R - lam * T).reshape(-1, R.shape[-3] * R.shape[-2] * R.shape[-1])
    ref = R.reshape(dev.shape)
    residual = float(np.max(np.linalg.norm(dev, axis=1) / (1.0 + np.linalg.norm(ref, axis=1))))
    return lam, residual


def riemann_curvature(spec: MetricSpec, x, y) -> CurvatureData:
    finsler_value(spec, x, y, 0)
    s = spray_jets(spec, x, y, 2)
    R = _components_last(s.riemann().value, 3)
    g = _components_last(s.g.value, 2)
    T = constant_curvature_template(g, np.asarray(y, dtype=float))
    lam, residual = _fit(R, T)
    return CurvatureData(R, lam, residual)


def flag_curvature_fit(spec: MetricSpec, sample_count: int = 200,
                       seed: int = DEFAULT_SEED) -> tuple[float, float]:
    """Least-squares constant flag curvature over random samples and its worst residual."""
    x, y = sample_tangents(spec, sample_count, np.random.default_rng(seed))
    s = spray_jets(spec, x, y, 2)
    R = _components_last(s.riemann().value, 3)
    T = constant_curvature_template(_components_last(s.g.value, 2), y)
    lam, residual = _fit(R, T)
    if residual > FIT_TOLERANCE:
        raise NotConstantCurvature(
            f"{spec.id}: best constant curvature {lam:.6g} leaves residual {residual:.3e}"
        )
    return lam, residual


_LAMBDA_CACHE: dict = {}


def fitted_lambda(spec: MetricSpec) -> float:
    """Flag curvature from :func:`flag_curvature_fit`, memoized per metric."""
    key = (spec.id, spec.dimension, spec.finsler)
    if key not in _LAMBDA_CACHE:
        lam = flag_curvature_fit(spec)[0]
        nominal = spec.nominal_lambda
        if nominal is not None and abs(lam - nominal) > NOMINAL_TOLERANCE:
            raise ConsistencyFailure(
                f"{spec.id}: fitted flag curvature {lam:.9g} disagrees with catalog value {nominal}"
            )
        _LAMBDA_CACHE[key] = lam
    return _LAMBDA_CACHE[key]


def projective_flatness_residual(spec: MetricSpec, sample_count: int = 100,
                                 seed: int = DEFAULT_SEED) -> float:
    """max ||G^i - P y^i|| / (1 + ||G||) over random samples."""
    x, y = sample_tangents(spec, sample_count, np.random.default_rng(seed))
    G = geodesic_coefficients(spec, x, y).G
    P = projective_jet(spec, x, y, 0).value
    dev = np.linalg.norm(G - P[:, None] * y, axis=1)
    return float(np.max(dev / (1.0 + np.linalg.norm(G, axis=1))))


def projective_identity_residuals(spec: MetricSpec, sample_count: int = 100,
                                  seed: int = DEFAULT_SEED, lam: float | None = None) -> dict:
    """Residuals of the projective-flatness relations at random samples.

    ``spray``: G^i = P y^i.  ``connection``/``berwald``: G^i_k and G^i_kl
    rebuilt from P and its y-derivatives.  ``curvature``: P^2 - P_x . y = lam F^2.
    ``trace``: G^m_km = (n + 1) P_k.
    """
    n = spec.dimension
    lam = fitted_lambda(spec) if lam is None else lam
    x, y = sample_tangents(spec, sample_count, np.random.default_rng(seed))
    sd = geodesic_coefficients(spec, x, y)
    pd = projective_factor(spec, x, y)
    eye = np.eye(n)

    def rel(dev, ref):
        dev = dev.reshape(len(x), -1)
        ref = ref.reshape(len(x), -1)
        return float(np.max(np.linalg.norm(dev, axis=1) / (1.0 + np.linalg.norm(ref, axis=1))))

    G_rebuilt = pd.P[:, None] * y
    Gj_rebuilt = (np.einsum("sk,si->sik", pd.P_y, y) + pd.P[:, None, None] * eye)
    Gjk_rebuilt = (np.einsum("skl,si->sikl", pd.P_yy, y)
                   + np.einsum("sk,il->sikl", pd.P_y, eye)
                   + np.einsum("sl,ik->sikl", pd.P_y, eye))
    F2 = spec.F2(x, y, 0).value
    flow = np.einsum("sj,sj->s", _P_x(spec, x, y), y)
    curvature_dev = pd.P ** 2 - flow - lam * F2
    trace = np.einsum("smkm->sk", sd.Gjk)
    return {
        "spray": rel(sd.G - G_rebuilt, sd.G),
        "connection": rel(sd.Gj - Gj_rebuilt, sd.Gj),
        "berwald": rel(sd.Gjk - Gjk_rebuilt, sd.Gjk),
        "curvature": float(np.max(np.abs(curvature_dev) / (1.0 + np.abs(lam * F2)))),
        "trace": rel(trace - (n + 1) * pd.P_y, trace),
    }


def _P_x(spec: MetricSpec, x, y) -> np.ndarray:
    P = projective_jet(spec, x, y, 1)
    return np.stack([P.partial((i,)) for i in range(spec.dimension)], axis=-1)


def rapcsak_residual(spec: MetricSpec, x, y, lam: float | None = None) -> tuple[float, float]:
    """Frobenius residuals of two candidate forms of the mixed-derivative identity.

    printed:   P_xy = P_y (x) P_y + P_yy - lam g
    corrected: P_xy = P_y (x) P_y + P P_yy - lam g
    """
    lam = fitted_lambda(spec) if lam is None else lam
    pd = projective_factor(spec, x, y)
    g = fundamental_tensor(spec, x, y)
    outer = pd.P_y[..., :, None] * pd.P_y[..., None, :]
    printed = pd.P_xy - (outer + pd.P_yy - lam * g)
    corrected = pd.P_xy - (outer + pd.P[..., None, None] * pd.P_yy - lam * g)
    norm = lambda a: np.linalg.norm(a, axis=(-2, -1))
    return norm(printed), norm(corrected)


def quadratic_form_test(spec: MetricSpec, x, sample_count: int = 64) -> float:
    """How far F^2(x, .) is from a quadratic form: max |F^2 - y^T Q y| / F^2."""
    n = spec.dimension
    rng = np.random.default_rng(DEFAULT_SEED)
    y = rng.standard_normal((sample_count, n))
    y /= np.linalg.norm(y, axis=1, keepdims=True)
    x = np.broadcast_to(np.asarray(x, dtype=float), y.shape)
    f2 = finsler_value(spec, x, y, 0, squared=True).value
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    design = np.stack([y[:, i] * y[:, j] for i, j in pairs], axis=1)
    coef, *_ = np.linalg.lstsq(design, f2, rcond=None)
    return float(np.max(np.abs(f2 - design @ coef) / f2))


def homogeneity_ladder(spec: MetricSpec, sample_count: int = 100, t: float = 2.0,
                       seed: int = DEFAULT_SEED) -> dict:
    """Relative violations of G ~ t^2, G^i_j ~ t, G^i_jk ~ 1 under y -> t y."""
    x, y = sample_tangents(spec, sample_count, np.random.default_rng(seed))
    a = geodesic_coefficients(spec, x, y)
    b = geodesic_coefficients(spec, x, t * y)

    def rel(scaled, base, power):
        scaled = scaled.reshape(len(x), -1)
        base = base.reshape(len(x), -1)
        dev = np.linalg.norm(scaled - t ** power * base, axis=1)
        return float(np.max(dev / (1.0 + np.linalg.norm(t ** power * base, axis=1))))

    return {
        "G": rel(b.G, a.G, 2),
        "Gj": rel(b.Gj, a.Gj, 1),
        "Gjk": rel(b.Gjk, a.Gjk, 0),
    }
