"""Nonlinear parallel transport along piecewise-smooth chart curves.

A tangent vector X(t) along c(t) is parallel when
``dX^i/dt = -G^i_j(c(t), X(t)) dc^j/dt``.  The equation is invariant under
reparametrization, so every smooth piece of a curve is integrated in its own
parameter with fixed-step classical RK4; corners always fall on step
boundaries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyFailure, DomainError, IntegrationUnstable
from .fields import curvature_field
from .metrics import MetricSpec
from .spray import connection_coefficients

DRIFT_LIMIT = 1e-4
LOOP_ORIENTATION = "corner -> +eps*X -> +eps*Y -> -eps*X -> -eps*Y"


@dataclass(frozen=True)
class Piece:
    """One smooth piece, parametrized by s in [0, 1]."""

    kind: str
    start: np.ndarray
    end: np.ndarray
    center: np.ndarray | None = None
    radius: float = 0.0
    angles: tuple[float, float] = (0.0, 0.0)
    plane: tuple[np.ndarray, np.ndarray] | None = None

    @classmethod
    def line(cls, a, b) -> "Piece":
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return cls("line", a, b)

    @classmethod
    def arc(cls, center, radius: float, theta0: float, theta1: float, plane=None) -> "Piece":
        center = np.asarray(center, dtype=float)
        n = center.shape[0]
        if plane is None:
            u, v = np.eye(n)[0], np.eye(n)[1]
        else:
            u, v = (np.asarray(p, dtype=float) for p in plane)
        at = lambda th: center + radius * (math.cos(th) * u + math.sin(th) * v)
        return cls("arc", at(theta0), at(theta1), center, float(radius), (theta0, theta1), (u, v))

    def position(self, s: float) -> np.ndarray:
        if self.kind == "line":
            return self.start + s * (self.end - self.start)
        th = self.angles[0] + s * (self.angles[1] - self.angles[0])
        u, v = self.plane
        return self.center + self.radius * (math.cos(th) * u + math.sin(th) * v)

    def velocity(self, s: float) -> np.ndarray:
        if self.kind == "line":
            return self.end - self.start
        sweep = self.angles[1] - self.angles[0]
        th = self.angles[0] + s * sweep
        u, v = self.plane
        return self.radius * sweep * (-math.sin(th) * u + math.cos(th) * v)

    @property
    def length(self) -> float:
        if self.kind == "line":
            return float(np.linalg.norm(self.end - self.start))
        return abs(self.radius * (self.angles[1] - self.angles[0]))

    def reversed(self) -> "Piece":
        if self.kind == "line":
            return Piece.line(self.end, self.start)
        return Piece.arc(self.center, self.radius, self.angles[1], self.angles[0], self.plane)


@dataclass(frozen=True)
class ChartCurve:
    pieces: tuple[Piece, ...]
    description: dict = field(default_factory=dict, compare=False)

    @classmethod
    def polyline(cls, vertices) -> "ChartCurve":
        vertices = np.asarray(vertices, dtype=float)
        pieces = tuple(Piece.line(a, b) for a, b in zip(vertices[:-1], vertices[1:]))
        return cls(pieces, {"type": "polyline", "vertices": vertices.tolist()})

    @classmethod
    def circle(cls, center, radius: float, start_angle: float = 0.0, turns: float = 1.0) -> "ChartCurve":
        piece = Piece.arc(center, radius, start_angle, start_angle + 2.0 * math.pi * turns)
        return cls((piece,), {"type": "circle", "center": list(map(float, center)),
                              "radius": float(radius)})

    @classmethod
    def rectangle(cls, corner, X, Y, eps: float = 1.0) -> "ChartCurve":
        """Closed loop corner -> +eps X -> +eps Y -> -eps X -> -eps Y."""
        c = np.asarray(corner, dtype=float)
        dx = eps * np.asarray(X, dtype=float)
        dy = eps * np.asarray(Y, dtype=float)
        curve = cls.polyline([c, c + dx, c + dx + dy, c + dy, c])
        return cls(curve.pieces, {"type": "rectangle", "corner": c.tolist(),
                                  "X": list(map(float, X)), "Y": list(map(float, Y)),
                                  "eps": float(eps), "orientation": LOOP_ORIENTATION})

    @classmethod
    def square(cls, corner, side: float) -> "ChartCurve":
        n = len(corner)
        return cls.rectangle(corner, np.eye(n)[0], np.eye(n)[1], side)

    @classmethod
    def from_config(cls, cfg: dict) -> "ChartCurve":
        kind = cfg.get("type")
        if kind == "rectangle":
            return cls.rectangle(cfg["corner"], cfg.get("X", [1.0, 0.0]), cfg.get("Y", [0.0, 1.0]),
                                 cfg.get("eps", cfg.get("side", 1.0)))
        if kind == "circle":
            return cls.circle(cfg["center"], cfg["radius"], cfg.get("start_angle", 0.0),
                              cfg.get("turns", 1.0))
        if kind == "polyline":
            return cls.polyline(cfg["vertices"])
        raise ValueError(f"unknown curve type {kind!r}")

    @property
    def start(self) -> np.ndarray:
        return self.pieces[0].start

    @property
    def end(self) -> np.ndarray:
        return self.pieces[-1].end

    @property
    def closed(self) -> bool:
        return bool(np.allclose(self.start, self.end, atol=1e-14))

    @property
    def length(self) -> float:
        return sum(p.length for p in self.pieces)

    def reversed(self) -> "ChartCurve":
        return ChartCurve(tuple(p.reversed() for p in reversed(self.pieces)),
                          {**self.description, "reversed": True})

    def then(self, other: "ChartCurve") -> "ChartCurve":
        if not np.allclose(self.end, other.start, atol=1e-12):
            raise ValueError("curves do not join")
        return ChartCurve(self.pieces + other.pieces, {"type": "concatenation"})

    def step_counts(self, step: float) -> list[int]:
        total = self.length
        if total == 0:
            return [1 for _ in self.pieces]
        return [max(1, math.ceil(p.length / total / step - 1e-9)) for p in self.pieces]


@dataclass
class TransportResult:
    y_final: np.ndarray
    f_drift: float
    steps: int
    length: float
    f_initial: np.ndarray | float = 0.0


def _connection_rhs(spec: MetricSpec, point: np.ndarray, X: np.ndarray, velocity: np.ndarray) -> np.ndarray:
    x = np.broadcast_to(point, X.shape)
    Gj = connection_coefficients(spec, x, X)  # (i, j, *batch)
    return -np.moveaxis(np.tensordot(velocity, Gj, axes=([0], [1])), 0, -1)


def _finsler(spec: MetricSpec, point: np.ndarray, X: np.ndarray) -> np.ndarray:
    return spec.F(np.broadcast_to(point, X.shape), X, 0).value


def transport_along(spec: MetricSpec, curve: ChartCurve, y0, step: float = 1e-3,
                    project: bool = False) -> TransportResult:
    """Parallel-translate ``y0`` (one vector or a batch) along ``curve``.

    ``project`` rescales X onto its initial F-level after every step.  It hides
    integrator error and is meant only for long holonomy-orbit runs.
    """
    y0 = np.asarray(y0, dtype=float)
    if np.any(np.linalg.norm(y0, axis=-1) == 0):
        raise DomainError("cannot transport the zero vector")
    counts = curve.step_counts(step)
    for piece, count in zip(curve.pieces, counts):
        probes = np.array([piece.position(s) for s in np.linspace(0.0, 1.0, 2 * count + 1)])
        inside, _ = spec.domain(probes)
        if not np.all(inside):
            raise DomainError("curve leaves the chart domain")

    X = y0.copy()
    f0 = _finsler(spec, curve.start, X)
    drift = 0.0
    for piece, count in zip(curve.pieces, counts):
        h = 1.0 / count
        for k in range(count):
            s = k * h
            p0, v0 = piece.position(s), piece.velocity(s)
            pm, vm = piece.position(s + 0.5 * h), piece.velocity(s + 0.5 * h)
            p1, v1 = piece.position(s + h), piece.velocity(s + h)
            k1 = _connection_rhs(spec, p0, X, v0)
            k2 = _connection_rhs(spec, pm, X + 0.5 * h * k1, vm)
            k3 = _connection_rhs(spec, pm, X + 0.5 * h * k2, vm)
            k4 = _connection_rhs(spec, p1, X + h * k3, v1)
            X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            f = _finsler(spec, p1, X)
            drift = max(drift, float(np.max(np.abs(f - f0))))
            if project:
                X = X * (f0 / f)[..., None] if np.ndim(f) else X * (f0 / f)
            if drift > DRIFT_LIMIT:
                raise IntegrationUnstable(f"F drifted by {drift:.3e} along the curve")
    return TransportResult(X, drift, int(sum(counts)), curve.length, f0)


@dataclass
class HolonomyTable:
    base_point: np.ndarray
    theta_in: np.ndarray
    y_in: np.ndarray
    y_out: np.ndarray
    theta_out: np.ndarray
    indicatrix_error: float
    f_drift: float

    def displacement(self) -> np.ndarray:
        """theta_out - theta_in, a periodic function of theta_in."""
        return self.theta_out - self.theta_in

    def derivative(self) -> np.ndarray:
        """d theta_out / d theta_in on the sample grid (spectral)."""
        from .holonomy import spectral_derivative

        return 1.0 + spectral_derivative(self.displacement())

    def nonlinearity(self) -> float:
        d = self.derivative()
        return float(d.max() / d.min())

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.theta_out) > 0)
                    and self.theta_out[-1] - self.theta_out[0] < 2.0 * math.pi)

    def max_displacement(self) -> float:
        return float(np.max(np.linalg.norm(self.y_out - self.y_in, axis=1)))


def loop_holonomy(spec: MetricSpec, loop: ChartCurve, indicatrix_samples: int = 64,
                  step: float = 1e-3) -> HolonomyTable:
    """Transport an indicatrix grid around a closed loop based at ``loop.start``."""
    from .holonomy import indicatrix_parametrize

    if not loop.closed:
        raise ValueError("loop is not closed")
    sampling = indicatrix_parametrize(spec, loop.start, indicatrix_samples)
    result = transport_along(spec, loop, sampling.points, step)
    y_out = result.y_final
    f_out = _finsler(spec, loop.start, y_out)
    raw = np.arctan2(y_out[:, 1], y_out[:, 0])
    theta_out = sampling.theta + np.angle(np.exp(1j * (raw - sampling.theta)))
    return HolonomyTable(
        base_point=np.asarray(loop.start, dtype=float),
        theta_in=sampling.theta,
        y_in=sampling.points,
        y_out=y_out,
        theta_out=theta_out,
        indicatrix_error=float(np.max(np.abs(f_out - 1.0))),
        f_drift=result.f_drift,
    )


@dataclass
class LoopCurvatureFit:
    epsilons: np.ndarray
    estimates: np.ndarray
    reference: np.ndarray
    errors: np.ndarray
    slope: float
    orientation: str = LOOP_ORIENTATION

    @property
    def relative_errors(self) -> np.ndarray:
        return self.errors / np.linalg.norm(self.reference)


def default_probe_direction(spec: MetricSpec, x) -> np.ndarray:
    n = spec.dimension
    y = np.zeros(n)
    y[0], y[1] = math.cos(0.7), math.sin(0.7)
    return y / float(spec.F(x, y, 0).value)


def curvature_from_loops(spec: MetricSpec, x, X, Y, epsilons=(0.04, 0.02, 0.01), y=None,
                         step: float = 1e-3, slope_range=(0.8, 1.3)) -> LoopCurvatureFit:
    """Compare (tau_loop(y) - y)/eps^2 around shrinking rectangles with R(X, Y) y."""
    x = np.asarray(x, dtype=float)
    y = default_probe_direction(spec, x) if y is None else np.asarray(y, dtype=float)
    reference = curvature_field(spec, X, Y).components(x, y)
    eps = np.asarray(sorted(epsilons, reverse=True), dtype=float)
    estimates = []
    for e in eps:
        loop = ChartCurve.rectangle(x, X, Y, e)
        final = transport_along(spec, loop, y, step).y_final
        estimates.append((final - y) / e ** 2)
    estimates = np.array(estimates)
    errors = np.linalg.norm(estimates - reference, axis=1)
    if np.all(errors == 0):
        slope = float("nan")
    else:
        slope = float(np.polyfit(np.log(eps), np.log(errors), 1)[0])
        if not slope_range[0] <= slope <= slope_range[1]:
            raise ConsistencyFailure(
                f"loop estimate converges with order {slope:.3f}, expected ~1 "
                f"(errors {errors.tolist()})"
            )
    return LoopCurvatureFit(eps, estimates, reference, errors, slope)
