"""Closed-form Finsler functions on charts of R^n.

Every entry is written in jet arithmetic so the same expression yields values
and derivatives of any order.  ``funk``, ``klein`` and ``berwald_flat`` live on
the open unit ball and are projectively flat there; ``euclidean`` is global.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import DomainError, InvalidMetric, SlitViolation
from .jets import Jet, ScalarFunction, check_point, dot

SAMPLE_RADIUS = 0.7
"""Stochastic base points are drawn from the ball of this radius."""

HOMOGENEITY_FACTORS = (0.5, 2.0, 10.0)


@dataclass(frozen=True)
class MetricSpec:
    id: str
    dimension: int
    finsler: Callable[[list[Jet], list[Jet]], Jet]
    energy: Callable[[list[Jet], list[Jet]], Jet] | None = None
    radius: float | None = None
    nominal_lambda: float | None = None
    is_riemannian_nominal: bool = False
    projectively_flat: bool = False
    params: dict = field(default_factory=dict)

    def domain(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if self.radius is None:
            shape = x.shape[:-1]
            return np.ones(shape, dtype=bool), np.full(shape, np.inf)
        margin = self.radius - np.linalg.norm(x, axis=-1)
        return margin > 0, margin

    @property
    def F(self) -> ScalarFunction:
        return ScalarFunction(self.finsler, self.dimension, self.domain)

    @property
    def F2(self) -> ScalarFunction:
        if self.energy is not None:
            return ScalarFunction(self.energy, self.dimension, self.domain)

        def squared(x, y):
            f = self.finsler(x, y)
            return f * f

        return ScalarFunction(squared, self.dimension, self.domain)


def _ball_terms(x, y):
    xx, yy, xy = dot(x, x), dot(y, y), dot(x, y)
    return xx, yy, xy


def _euclidean(x, y):
    return dot(y, y).sqrt()


def _euclidean_energy(x, y):
    return dot(y, y)


def _klein(x, y):
    xx, yy, xy = _ball_terms(x, y)
    return (yy * (1.0 - xx) + xy * xy).sqrt() / (1.0 - xx)


def _klein_energy(x, y):
    xx, yy, xy = _ball_terms(x, y)
    s = 1.0 - xx
    return (yy * s + xy * xy) / (s * s)


def _funk_root(x, y):
    xx, yy, xy = _ball_terms(x, y)
    return (yy - (xx * yy - xy * xy)).sqrt(), xy, xx


def _funk(x, y):
    root, xy, xx = _funk_root(x, y)
    return (root + xy) / (1.0 - xx)


def _berwald(x, y):
    root, xy, xx = _funk_root(x, y)
    s = 1.0 - xx
    num = root + xy
    return num * num / (s * s * root)


def euclidean(dimension: int = 2) -> MetricSpec:
    return MetricSpec(
        "euclidean", dimension, _euclidean, energy=_euclidean_energy,
        nominal_lambda=0.0, is_riemannian_nominal=True, projectively_flat=True,
        params={"dimension": dimension},
    )


def klein(dimension: int = 2) -> MetricSpec:
    return MetricSpec(
        "klein", dimension, _klein, energy=_klein_energy, radius=1.0,
        nominal_lambda=-1.0, is_riemannian_nominal=True, projectively_flat=True,
        params={"dimension": dimension},
    )


def funk(dimension: int = 2) -> MetricSpec:
    return MetricSpec(
        "funk", dimension, _funk, radius=1.0, nominal_lambda=-0.25,
        projectively_flat=True, params={"dimension": dimension},
    )


def berwald_flat(dimension: int = 2) -> MetricSpec:
    return MetricSpec(
        "berwald_flat", dimension, _berwald, radius=1.0, nominal_lambda=0.0,
        projectively_flat=True, params={"dimension": dimension},
    )


_FACTORIES: dict[str, Callable[..., MetricSpec]] = {
    "euclidean": euclidean,
    "klein": klein,
    "funk": funk,
    "berwald_flat": berwald_flat,
}
_REGISTERED: dict[str, MetricSpec] = {}
_LOCK = threading.Lock()

BUILTIN_IDS = tuple(_FACTORIES)


def catalog_ids() -> list[str]:
    return list(_FACTORIES) + sorted(_REGISTERED)


def get_metric(metric_id: str, **params) -> MetricSpec:
    """Look up a catalog entry; builtin entries accept ``dimension``."""
    if metric_id in _FACTORIES:
        return _FACTORIES[metric_id](**params)
    if metric_id in _REGISTERED:
        if params:
            raise InvalidMetric(f"registered metric {metric_id!r} takes no parameters")
        return _REGISTERED[metric_id]
    raise KeyError(f"unknown metric {metric_id!r}; known: {catalog_ids()}")


def domain_contains(spec: MetricSpec, x) -> tuple[bool, float]:
    inside, margin = spec.domain(np.asarray(x, dtype=float))
    return bool(inside), float(margin)


def finsler_value(spec: MetricSpec, x, y, order: int = 0, squared: bool = False) -> Jet:
    """Jet of F (or F^2) at ``(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(np.linalg.norm(y, axis=-1) == 0):
        raise SlitViolation("F is not smooth at y = 0")
    if not np.all(spec.domain(x)[0]):
        raise DomainError(f"{spec.id}: point outside chart domain")
    fn = spec.F2 if squared else spec.F
    return fn(x, y, order)


def sample_tangents(spec: MetricSpec, count: int, rng: np.random.Generator,
                    radius: float = SAMPLE_RADIUS) -> tuple[np.ndarray, np.ndarray]:
    """Random base points with ``|x| <= radius`` and tangents with ``|y|`` in [0.5, 2]."""
    n = spec.dimension
    if spec.radius is not None:
        radius = min(radius, SAMPLE_RADIUS * spec.radius)
    directions = rng.standard_normal((count, n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    x = directions * radius * rng.random((count, 1)) ** (1.0 / n)
    y = rng.standard_normal((count, n))
    y *= rng.uniform(0.5, 2.0, (count, 1)) / np.linalg.norm(y, axis=1, keepdims=True)
    return x, y


def homogeneity_residual(spec: MetricSpec, x: np.ndarray, y: np.ndarray,
                         factors=HOMOGENEITY_FACTORS) -> float:
    """max |F(x, t y) - t F(x, y)| / |t F(x, y)| over the given samples and factors."""
    base = spec.F(x, y, 0).value
    worst = 0.0
    for t in factors:
        scaled = spec.F(x, t * y, 0).value
        worst = max(worst, float(np.max(np.abs(scaled - t * base) / np.abs(t * base))))
    return worst


def register_metric(spec: MetricSpec, samples: int = 100, seed: int = 0,
                    tol: float = 1e-10) -> str:
    """Validate a user metric and add it to the catalog under ``spec.id``."""
    with _LOCK:
        if spec.id in _FACTORIES or spec.id in _REGISTERED:
            raise InvalidMetric(f"metric id {spec.id!r} already in use")
        x, y = sample_tangents(spec, samples, np.random.default_rng(seed))
        check_point(spec.F, x, y)
        try:
            values = spec.F(x, y, 0).value
            residual = homogeneity_residual(spec, x, y)
        except (ArithmeticError, ValueError) as exc:
            raise InvalidMetric(f"{spec.id}: evaluation failed: {exc}") from exc
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise InvalidMetric(f"{spec.id}: F must be finite and positive off y = 0")
        if not residual < tol:
            raise InvalidMetric(
                f"{spec.id}: F(x, ty) != t F(x, y) (relative residual {residual:.3e})"
            )
        _REGISTERED[spec.id] = spec
    return spec.id


def unregister_metric(metric_id: str) -> None:
    with _LOCK:
        _REGISTERED.pop(metric_id, None)


def renamed(spec: MetricSpec, new_id: str) -> MetricSpec:
    return replace(spec, id=new_id)
