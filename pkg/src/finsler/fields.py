"""Vertical vector fields on the slit tangent bundle.

A field is an expression tree over curvature fields, horizontal Berwald
covariant derivatives and vertical brackets.  Evaluating a field at a batch of
points goes through a :class:`FieldContext`, which holds the spray jets once
and memoizes every subtree.  Each covariant derivative or bracket consumes one
jet order, so a context built for depth ``d`` serves every field of depth at
most ``d``.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import UnsupportedOrder
from .jets import Jet, seed, stack
from .metrics import MetricSpec
from .spray import SprayJets, spray_jets


class FieldContext:
    """Spray jets at fixed sample points, sized for fields up to ``depth``."""

    def __init__(self, spec: MetricSpec, x, y, depth: int):
        self.spec = spec
        self.n = spec.dimension
        self.depth = depth
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.spray: SprayJets = spray_jets(spec, x, y, depth + 2)
        self._riemann: Jet | None = None
        self._memo: dict[int, tuple[VerticalField, Jet]] = {}

    @property
    def riemann(self) -> Jet:
        if self._riemann is None:
            self._riemann = self.spray.riemann()
        return self._riemann

    def evaluate(self, field: "VerticalField") -> Jet:
        key = id(field)
        hit = self._memo.get(key)
        if hit is not None and hit[0] is field:
            return hit[1]
        if field.depth > self.depth:
            raise UnsupportedOrder(
                f"field of depth {field.depth} needs a context built for that depth "
                f"(this one serves depth {self.depth})"
            )
        jet = field._evaluate(self)
        self._memo[key] = (field, jet)
        return jet


class VerticalField:
    """Base class: ``xi^i(x, y) d/dy^i`` given by an expression tree."""

    kind = "field"
    depth = 0
    spec: MetricSpec

    def _evaluate(self, ctx: FieldContext) -> Jet:
        raise NotImplementedError

    def evaluate(self, ctx: FieldContext) -> Jet:
        """Components as a jet of shape ``(n, *batch)`` and order ``ctx.depth - depth``."""
        return ctx.evaluate(self)

    def components(self, x, y) -> np.ndarray:
        """Plain component values, shape ``(*batch, n)``."""
        ctx = FieldContext(self.spec, x, y, self.depth)
        return np.moveaxis(self.evaluate(ctx).value, 0, -1)

    @property
    def label(self) -> str:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<{self.kind} depth={self.depth} {self.label}>"


class CurvatureField(VerticalField):
    """xi^i = R^i_jk X^j Y^k for constant coordinate vectors X, Y."""

    kind = "curvature"

    def __init__(self, spec: MetricSpec, X: Sequence[float], Y: Sequence[float]):
        self.spec = spec
        self.X = np.asarray(X, dtype=float)
        self.Y = np.asarray(Y, dtype=float)

    def _evaluate(self, ctx):
        R = ctx.riemann
        XY = np.multiply.outer(self.X, self.Y)
        XY = XY.reshape(XY.shape + (1,) * (len(R.shape) - 3))
        return (R * XY).sum((1, 2)).truncate(ctx.depth)

    @property
    def label(self) -> str:
        fmt = lambda v: "(" + ",".join(f"{c:g}" for c in v) + ")"
        return f"R({fmt(self.X)},{fmt(self.Y)})"


class ExplicitField(VerticalField):
    """A field given directly in jet arithmetic: ``func(xs, ys) -> [xi^1, ..., xi^n]``."""

    kind = "explicit"

    def __init__(self, spec: MetricSpec, func: Callable, name: str = "explicit"):
        self.spec = spec
        self.func = func
        self.name = name

    def _evaluate(self, ctx):
        xs, ys = seed(ctx.x, ctx.y, ctx.depth)
        comps = self.func(xs, ys)
        comps = [c if isinstance(c, Jet) else Jet.constant(np.broadcast_to(c, xs[0].shape), xs[0].nvars, ctx.depth)
                 for c in comps]
        return stack(comps)

    @property
    def label(self) -> str:
        return self.name


class CovariantDerivative(VerticalField):
    """(nabla_X xi)^i = X^k (d_xk xi^i - G^m_k d_ym xi^i + G^i_km xi^m)."""

    kind = "covariant"

    def __init__(self, field: VerticalField, direction):
        self.field = field
        self.spec = field.spec
        n = field.spec.dimension
        if isinstance(direction, (int, np.integer)):
            vec = np.zeros(n)
            vec[int(direction)] = 1.0
            self.index = int(direction)
        else:
            vec = np.asarray(direction, dtype=float)
            self.index = None
        self.direction = vec
        self.depth = field.depth + 1

    def _evaluate(self, ctx):
        xi = ctx.evaluate(self.field)
        if xi.order == 0:
            raise UnsupportedOrder("jet budget exhausted for covariant derivative")
        n = ctx.n
        order = xi.order - 1
        Gj = ctx.spray.Gj.truncate(order)
        Gjk = ctx.spray.Gjk.truncate(order)
        xi0 = xi.truncate(order)
        out = None
        for k in range(n):
            w = self.direction[k]
            if w == 0.0:
                continue
            term = xi.d(k)
            for m in range(n):
                term = term - Gj[m, k] * xi.d(n + m)
            term = term + (Gjk[:, k] * xi0.expand(0)).sum(1)
            term = w * term
            out = term if out is None else out + term
        if out is None:
            out = 0.0 * xi0
        return out

    @property
    def label(self) -> str:
        if self.index is not None:
            return f"D{self.index + 1}{self.field.label}"
        return f"D[{','.join(f'{c:g}' for c in self.direction)}]{self.field.label}"


class Bracket(VerticalField):
    """[xi, eta]^i = xi^j d_yj eta^i - eta^j d_yj xi^i."""

    kind = "bracket"

    def __init__(self, a: VerticalField, b: VerticalField):
        self.a = a
        self.b = b
        self.spec = a.spec
        self.depth = 1 + max(a.depth, b.depth)

    def _evaluate(self, ctx):
        xi = ctx.evaluate(self.a)
        eta = ctx.evaluate(self.b)
        order = min(xi.order, eta.order) - 1
        if order < 0:
            raise UnsupportedOrder("jet budget exhausted for bracket")
        n = ctx.n
        xi0, eta0 = xi.truncate(order), eta.truncate(order)
        out = 0.0 * xi0
        for j in range(n):
            out = out + xi0[j] * eta.d(n + j) - eta0[j] * xi.d(n + j)
        return out

    @property
    def label(self) -> str:
        return f"[{self.a.label},{self.b.label}]"


def curvature_field(spec: MetricSpec, X, Y) -> CurvatureField:
    return CurvatureField(spec, X, Y)


def covariant_derivative(spec: MetricSpec, xi: VerticalField, k) -> CovariantDerivative:
    if xi.spec is not spec and xi.spec != spec:
        raise ValueError("field belongs to a different metric")
    return CovariantDerivative(xi, k)


def vertical_bracket(xi: VerticalField, eta: VerticalField) -> Bracket:
    return Bracket(xi, eta)
