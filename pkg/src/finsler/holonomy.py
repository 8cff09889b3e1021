"""Curvature algebra closure and dimension estimates on surface indicatrices.

For a surface the indicatrix at x is a closed curve, so every field tangent to
it is a scalar coefficient times the unit tangent.  Fields generated from the
curvature field by covariant derivatives and brackets are restricted to an
N-point angle grid; the numerical rank of the stacked coefficient rows
estimates the dimension of their span.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IndicatrixSolveError, TangencyError
from .fields import (Bracket, CovariantDerivative, CurvatureField, FieldContext,
                     VerticalField)
from .metrics import MetricSpec
from .spray import fitted_lambda, fundamental_tensor, projective_factor, projective_jet

RANK_RTOL = 1e-8
VANISHING = 1e-9
COLLINEAR = 1e-10
TANGENCY_TOL = 1e-6
NEWTON_MAX_ITER = 50


def spectral_derivative(values: np.ndarray, period: float = 2.0 * math.pi) -> np.ndarray:
    """Derivative of samples of a periodic function on a uniform grid (even N)."""
    values = np.asarray(values, dtype=float)
    N = values.shape[-1]
    if N % 2:
        raise ValueError("spectral differentiation needs an even number of samples")
    k = np.fft.fftfreq(N, d=1.0 / N) * (2.0 * math.pi / period)
    k[N // 2] = 0.0
    return np.real(np.fft.ifft(1j * k * np.fft.fft(values, axis=-1), axis=-1))


def _require_surface(spec: MetricSpec) -> None:
    if spec.dimension != 2:
        raise ValueError(f"{spec.id}: surface (n = 2) operations only, got n = {spec.dimension}")


@dataclass
class IndicatrixSampling:
    x: np.ndarray
    theta: np.ndarray
    radii: np.ndarray
    points: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray
    speed: np.ndarray
    newton_iterations: int

    @property
    def N(self) -> int:
        return len(self.theta)

    def arclength_derivative(self, values: np.ndarray) -> np.ndarray:
        """d/ds along the curve, s its Euclidean arc length."""
        return spectral_derivative(values) / self.speed


def indicatrix_parametrize(spec: MetricSpec, x, N: int = 64, offset: float = 0.0) -> IndicatrixSampling:
    """Points y(theta) = r(theta) (cos theta, sin theta) with F(x, y) = 1."""
    _require_surface(spec)
    if N % 2:
        raise ValueError("N must be even")
    x = np.asarray(x, dtype=float)
    if not spec.domain(x)[0]:
        raise DomainError(f"{spec.id}: base point outside the chart")
    theta = offset + 2.0 * math.pi * np.arange(N) / N
    u = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    u_perp = np.stack([-np.sin(theta), np.cos(theta)], axis=1)
    xb = np.broadcast_to(x, u.shape)

    r = 1.0 / spec.F(xb, u, 0).value
    for it in range(1, NEWTON_MAX_ITER + 1):
        jet = spec.F(xb, r[:, None] * u, 1)
        phi = jet.value - 1.0
        slope = sum(jet.partial((2 + i,)) * u[:, i] for i in range(2))
        r = r - phi / slope
        if np.max(np.abs(phi)) < 1e-14:
            break
    else:
        raise IndicatrixSolveError(f"{spec.id}: radius iteration did not converge at x={x}")

    points = r[:, None] * u
    grad = spec.F(xb, points, 1)
    Fy = np.stack([grad.partial((2,)), grad.partial((3,))], axis=1)
    # r(theta) = 1/F(x, u(theta)) by homogeneity, so r' = -r^2 F_y(u) . u_perp
    dr = -(r ** 2) * np.einsum("ai,ai->a", Fy, u_perp)
    dy = dr[:, None] * u + r[:, None] * u_perp
    speed = np.linalg.norm(dy, axis=1)
    return IndicatrixSampling(
        x=x, theta=theta, radii=r, points=points, tangents=dy / speed[:, None],
        normals=Fy / np.linalg.norm(Fy, axis=1, keepdims=True), speed=speed,
        newton_iterations=it,
    )


def sampling_context(spec: MetricSpec, sampling: IndicatrixSampling, depth: int) -> FieldContext:
    x = np.broadcast_to(sampling.x, sampling.points.shape)
    return FieldContext(spec, x, sampling.points, depth)


def restrict_to_indicatrix(field: VerticalField, sampling: IndicatrixSampling,
                           ctx: FieldContext | None = None) -> np.ndarray:
    """Coefficient of ``field`` along the unit tangent of the indicatrix at each sample."""
    if ctx is None:
        ctx = sampling_context(field.spec, sampling, field.depth)
    comps = field.evaluate(ctx).value.T  # (N, 2)
    normal = np.einsum("ai,ai->a", comps, sampling.normals)
    size = np.linalg.norm(comps, axis=1)
    violation = float(np.max(np.abs(normal) / (1.0 + size)))
    if violation > TANGENCY_TOL:
        raise TangencyError(f"{field.label} leaves the indicatrix (normal part {violation:.3e})")
    return np.einsum("ai,ai->a", comps, sampling.tangents)


def numerical_rank(matrix: np.ndarray, rtol: float = RANK_RTOL) -> tuple[int, np.ndarray]:
    if matrix.size == 0:
        return 0, np.zeros(0)
    sv = np.linalg.svd(matrix, compute_uv=False)
    if sv[0] == 0:
        return 0, sv
    return int(np.sum(sv > rtol * sv[0])), sv


@dataclass
class RoundReport:
    depth: int
    field_count: int
    rank: int
    singular_values: np.ndarray
    labels: list[str]
    coefficients: np.ndarray = field(repr=False)

    def to_dict(self, with_coefficients: bool = False) -> dict:
        out = {
            "round": self.depth,
            "field_count": self.field_count,
            "rank": self.rank,
            "singular_values": [float(s) for s in self.singular_values],
            "labels": list(self.labels),
        }
        if with_coefficients:
            out["coefficients"] = self.coefficients.tolist()
        return out


@dataclass
class RankReport:
    metric: str
    x: np.ndarray
    N: int
    depth_cap: int
    rounds: list[RoundReport]
    truncated: bool = False

    @property
    def ranks(self) -> list[int]:
        return [r.rank for r in self.rounds]

    @property
    def saturated(self) -> bool:
        """Rank unchanged over the last two rounds."""
        ranks = self.ranks
        return len(ranks) >= 2 and ranks[-1] == ranks[-2]

    @property
    def classification(self) -> str:
        return "saturated" if self.saturated else "growing"

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "x": [float(v) for v in self.x],
            "N": self.N,
            "depth_cap": self.depth_cap,
            "ranks": self.ranks,
            "saturated": self.saturated,
            "classification": self.classification,
            "truncated": self.truncated,
            "rank_rtol": RANK_RTOL,
            "rounds": [r.to_dict() for r in self.rounds],
        }

    def csv_rows(self) -> list[dict]:
        return [{"metric": self.metric, "x1": float(self.x[0]), "x2": float(self.x[1]),
                 "round": r.depth, "count": r.field_count, "rank": r.rank,
                 "classification": self.classification} for r in self.rounds]


def generate_algebra(spec: MetricSpec, x, depth_cap: int = 3, field_cap: int = 64,
                     N: int = 64) -> RankReport:
    """Close the curvature fields under covariant derivatives and brackets, round by round.

    Round 0 holds the curvature fields R(d_j, d_k).  Round d+1 adds nabla_k of
    the fields new in round d and brackets of every pair with at least one new
    member.  A candidate is discarded when it vanishes on the indicatrix or is
    collinear with a kept field.
    """
    _require_surface(spec)
    if not 0 <= depth_cap <= 4:
        raise ValueError("depth_cap must lie in [0, 4]")
    sampling = indicatrix_parametrize(spec, x, N)
    ctx = sampling_context(spec, sampling, depth_cap)
    n = spec.dimension
    basis = np.eye(n)

    kept: list[VerticalField] = []
    rows: list[np.ndarray] = []
    truncated = False

    def admit(candidates: list[VerticalField]) -> list[VerticalField]:
        nonlocal truncated
        admitted = []
        for cand in candidates:
            if len(kept) >= field_cap:
                truncated = True
                break
            coef = restrict_to_indicatrix(cand, sampling, ctx)
            size = np.linalg.norm(coef)
            if np.max(np.abs(coef)) < VANISHING:
                continue
            unit = coef / size
            if rows and np.max(np.abs(np.array(rows) @ unit)) > 1.0 - COLLINEAR:
                continue
            kept.append(cand)
            rows.append(unit)
            admitted.append(cand)
        return admitted

    def snapshot(depth: int) -> RoundReport:
        mat = np.array(rows) if rows else np.zeros((0, N))
        rank, sv = numerical_rank(mat)
        return RoundReport(depth, len(kept), rank, sv, [f.label for f in kept], mat)

    seeds = [CurvatureField(spec, basis[j], basis[k])
             for j, k in itertools.combinations(range(n), 2)]
    new = admit(seeds)
    rounds = [snapshot(0)]
    for depth in range(1, depth_cap + 1):
        candidates: list[VerticalField] = []
        for f in new:
            candidates.extend(CovariantDerivative(f, k) for k in range(n))
        fresh = {id(f) for f in new}
        for a, b in itertools.combinations(list(kept), 2):
            if id(a) in fresh or id(b) in fresh:
                candidates.append(Bracket(a, b))
        new = admit(candidates)
        rounds.append(snapshot(depth))
    return RankReport(spec.id, np.asarray(x, dtype=float), N, depth_cap, rounds, truncated)


def surface_identity_check(spec: MetricSpec, x=None, sample_count: int = 50,
                           seed: int = 0, lam: float | None = None) -> tuple[float, float]:
    """Worst relative residuals of nabla_k xi = 3 P_k xi and
    nabla_j nabla_k xi = 3 (4 P_j P_k - lam g_jk) xi for xi = R(d_1, d_2).

    With ``x`` given, tangents are sampled at that point; otherwise base
    points are sampled too.
    """
    from .metrics import sample_tangents

    _require_surface(spec)
    lam = fitted_lambda(spec) if lam is None else lam
    rng = np.random.default_rng(seed)
    xs, ys = sample_tangents(spec, sample_count, rng)
    if x is not None:
        xs = np.broadcast_to(np.asarray(x, dtype=float), ys.shape)
    ctx = FieldContext(spec, xs, ys, 2)
    xi_field = CurvatureField(spec, [1.0, 0.0], [0.0, 1.0])
    xi = xi_field.evaluate(ctx).value.T
    pd = projective_factor(spec, xs, ys)
    g = fundamental_tensor(spec, xs, ys)

    def rel(actual, expected):
        dev = np.linalg.norm(actual - expected, axis=1)
        return float(np.max(dev / (1.0 + np.linalg.norm(expected, axis=1))))

    first = second = 0.0
    for k in range(2):
        dk = CovariantDerivative(xi_field, k)
        first = max(first, rel(dk.evaluate(ctx).value.T, 3.0 * pd.P_y[:, k:k + 1] * xi))
        for j in range(2):
            djk = CovariantDerivative(dk, j).evaluate(ctx).value.T
            factor = 3.0 * (4.0 * pd.P_y[:, j] * pd.P_y[:, k] - lam * g[:, j, k])
            second = max(second, rel(djk, factor[:, None] * xi))
    return first, second


FAMILY_PAIRS = ((0, 0), (0, 1), (1, 1))


@dataclass
class FamilyTest:
    pair: tuple[int, int]
    form: str
    singular_values: np.ndarray
    rank: int
    coefficients: tuple[float, float, float]
    residual: float
    simultaneously_nonvanishing: bool

    def to_dict(self) -> dict:
        j, k = self.pair
        return {
            "jk": f"{j + 1}{k + 1}",
            "form": self.form,
            "rank": self.rank,
            "singular_values": [float(s) for s in self.singular_values],
            "a_b_c": [float(c) for c in self.coefficients],
            "dependence_residual": self.residual,
            "simultaneously_nonvanishing": self.simultaneously_nonvanishing,
        }


@dataclass
class DependenceTestResult:
    metric: str
    x: np.ndarray
    lam: float
    base_rank: int
    base_singular_values: np.ndarray
    families: list[FamilyTest]

    @property
    def rank(self) -> int:
        """Largest rank over the product-form families."""
        return max(f.rank for f in self.families if f.form == "product")

    def family(self, pair: tuple[int, int], form: str = "product") -> FamilyTest:
        return next(f for f in self.families if f.pair == pair and f.form == form)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "x": [float(v) for v in self.x],
            "lambda": self.lam,
            "base_rank": self.base_rank,
            "base_singular_values": [float(s) for s in self.base_singular_values],
            "rank": self.rank,
            "families": [f.to_dict() for f in self.families],
        }


def _column_rank(columns: np.ndarray) -> tuple[int, np.ndarray]:
    norms = np.linalg.norm(columns, axis=0)
    scaled = np.where(norms > 1e-12, columns / np.where(norms > 0, norms, 1.0), 0.0)
    return numerical_rank(scaled)


def function_independence_rank(spec: MetricSpec, x, N: int = 64,
                               lam: float | None = None) -> DependenceTestResult:
    """Rank of {1, P_1, P_2, h_jk} sampled on the indicatrix, for every (j, k).

    ``h_jk`` is taken in two forms: ``product`` = P_j P_k - lam/4 g_jk and
    ``hessian`` = P_jk - lam/4 g_jk.  When h_jk depends on the first three
    functions, the least-squares (a, b, c) with h + a + b P_1 + c P_2 = 0 is
    reported with its worst absolute residual.
    """
    _require_surface(spec)
    lam = fitted_lambda(spec) if lam is None else lam
    sampling = indicatrix_parametrize(spec, x, N)
    xb = np.broadcast_to(sampling.x, sampling.points.shape)
    pd = projective_factor(spec, xb, sampling.points)
    g = fundamental_tensor(spec, xb, sampling.points)
    base = np.column_stack([np.ones(N), pd.P_y[:, 0], pd.P_y[:, 1]])
    base_rank, base_sv = _column_rank(base)

    families = []
    for j, k in FAMILY_PAIRS:
        forms = {
            "product": pd.P_y[:, j] * pd.P_y[:, k] - 0.25 * lam * g[:, j, k],
            "hessian": pd.P_yy[:, j, k] - 0.25 * lam * g[:, j, k],
        }
        for form, h in forms.items():
            rank, sv = _column_rank(np.column_stack([base, h]))
            coef, *_ = np.linalg.lstsq(base, -h, rcond=None)
            residual = float(np.max(np.abs(base @ coef + h)))
            floor = VANISHING
            together = bool(np.any(np.all(np.abs(np.column_stack([base, h])) > floor, axis=1)))
            families.append(FamilyTest((j, k), form, sv, rank, tuple(float(c) for c in coef), residual, together))
    return DependenceTestResult(spec.id, sampling.x, lam, base_rank, base_sv, families)


@dataclass
class AffineTest:
    classification: str
    max_f2: float
    max_f: float
    alpha: float
    beta: float
    implied: dict
    system_residual: float
    t: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "max_abs_f2": self.max_f2,
            "alpha": self.alpha,
            "beta": self.beta,
            "implied_coefficients": self.implied,
            "system_residual": self.system_residual,
        }


def affine_factor_test(spec: MetricSpec, x, t_range=(0.2, 2.0), points: int = 41,
                       v: float = 1.0) -> AffineTest:
    """Profile f(t) = P(x, t v, v) / v and decide whether P is affine along it.

    An affine profile f = alpha t + beta solves the compatibility system with
    c2 = -alpha, b2 = -beta, b1 = 2 c2, c3 = 2 b2 and c1 = b3 = 0; the worst
    residual of that system on the grid is reported either way.
    """
    _require_surface(spec)
    t = np.linspace(t_range[0], t_range[1], points)
    x = np.asarray(x, dtype=float)
    y = np.column_stack([t * v, np.full(points, v)])
    f = projective_jet(spec, np.broadcast_to(x, y.shape), y, 0).value / v
    h = t[1] - t[0]
    f2 = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / h ** 2
    max_f2 = float(np.max(np.abs(f2)))
    max_f = float(np.max(np.abs(f)))
    affine = max_f2 < 1e-8 * (1.0 + max_f)
    alpha, beta = np.polyfit(t, f, 1)
    c2, b2 = -alpha, -beta
    implied = {"a": None, "b1": 2 * c2, "b2": b2, "b3": 0.0, "c1": 0.0, "c2": c2, "c3": 2 * b2}
    eq1 = f + b2 + (implied["b1"] - c2) * t - implied["c1"] * t ** 2
    eq2 = t * f - implied["b3"] + (implied["c3"] - b2) * t + c2 * t ** 2
    residual = float(max(np.max(np.abs(eq1)), np.max(np.abs(eq2))))
    return AffineTest("affine" if affine else "non-affine", max_f2, max_f, float(alpha),
                      float(beta), {k: v for k, v in implied.items() if v is not None},
                      residual, t, f)
