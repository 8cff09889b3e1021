"""Truncated multivariate Taylor arithmetic.

A :class:`Jet` stores the Taylor coefficients ``f^(a) / a!`` of a scalar
function of ``m`` variables for every multi-index ``a`` of total degree at most
``order``.  Monomials are listed degree by degree, so the coefficients of a
lower-order truncation are a prefix of the full array and truncation is a slice.

Coefficient arrays have shape ``(ncoef, *shape)``: the coefficient axis comes
first and the trailing axes broadcast like numpy arrays, which lets one jet
hold a tensor of components evaluated at a batch of points.  Tensor axes go
before batch axes by convention.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.sparse

from .errors import DomainError, SlitViolation, UnsupportedOrder

MAX_ORDER = 4
"""Largest order served by :func:`jet_eval`."""

INTERNAL_MAX_ORDER = 10
"""Largest order the arithmetic supports; geometric pipelines need more than 4."""

DENSE_REDUCE_LIMIT = 200_000

FD_STEPS = {0: 1e-4, 1: 1e-4, 2: 1e-3, 3: 5e-3, 4: 1e-2}


@lru_cache(maxsize=None)
def monomials(nvars: int, order: int) -> np.ndarray:
    """Exponent table of shape (ncoef, nvars), graded by total degree."""
    rows = []
    for degree in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), degree):
            exps = [0] * nvars
            for v in combo:
                exps[v] += 1
            rows.append(exps)
    table = np.array(rows, dtype=np.int64).reshape(-1, nvars)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def ncoef(nvars: int, order: int) -> int:
    return math.comb(nvars + order, order)


def _keys(exps: np.ndarray, base: int) -> np.ndarray:
    weights = base ** np.arange(exps.shape[-1], dtype=np.int64)
    return exps @ weights


@dataclass(frozen=True)
class _Table:
    nvars: int
    order: int
    exps: np.ndarray
    factorials: np.ndarray
    mul_left: np.ndarray
    mul_right: np.ndarray
    mul_reduce: np.ndarray | scipy.sparse.csr_matrix
    lookup: dict

    def index(self, exps: tuple[int, ...]) -> int:
        return self.lookup[tuple(int(e) for e in exps)]


@lru_cache(maxsize=None)
def _table(nvars: int, order: int) -> _Table:
    exps = monomials(nvars, order)
    size = exps.shape[0]
    base = order + 1
    keys = _keys(exps, base)
    sort = np.argsort(keys)
    sorted_keys = keys[sort]

    deg = exps.sum(axis=1)
    left, right = np.nonzero(deg[:, None] + deg[None, :] <= order)
    target_keys = _keys(exps[left] + exps[right], base)
    target = sort[np.searchsorted(sorted_keys, target_keys)]
    perm = np.argsort(target, kind="stable")
    left, right, target = left[perm], right[perm], target[perm]
    reduce = scipy.sparse.csr_matrix(
        (np.ones(len(target)), (target, np.arange(len(target)))), shape=(size, len(target))
    )
    if size * len(target) <= DENSE_REDUCE_LIMIT:
        reduce = reduce.toarray()

    factorials = np.array(
        [math.prod(math.factorial(int(e)) for e in row) for row in exps], dtype=float
    )
    lookup = {tuple(int(e) for e in row): i for i, row in enumerate(exps)}
    return _Table(nvars, order, exps, factorials, left, right, reduce, lookup)


@lru_cache(maxsize=None)
def _derivative_map(nvars: int, order: int, var: int) -> tuple[np.ndarray, np.ndarray]:
    """Source indices and factors turning an order-``order`` jet into its ``var`` partial."""
    full = _table(nvars, order)
    exps = monomials(nvars, order - 1)
    shifted = exps.copy()
    shifted[:, var] += 1
    src = np.array([full.index(row) for row in shifted], dtype=np.int64)
    return src, (exps[:, var] + 1).astype(float)


def _pad(coeffs: np.ndarray, ndim: int) -> np.ndarray:
    """Insert unit axes after the coefficient axis up to ``ndim`` total axes."""
    if coeffs.ndim >= ndim:
        return coeffs
    return coeffs.reshape((coeffs.shape[0],) + (1,) * (ndim - coeffs.ndim) + coeffs.shape[1:])


def _aligned(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pad trailing shapes so coefficient axes line up under broadcasting."""
    ndim = max(a.ndim, b.ndim)
    return _pad(a, ndim), _pad(b, ndim)


class Jet:
    """Truncated Taylor expansion of a (tensor of) scalar function(s)."""

    __slots__ = ("coeffs", "nvars", "order")
    __array_priority__ = 1000

    def __init__(self, coeffs: np.ndarray, nvars: int, order: int):
        if order > INTERNAL_MAX_ORDER:
            raise UnsupportedOrder(f"jet order {order} exceeds {INTERNAL_MAX_ORDER}")
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[0] != ncoef(nvars, order):
            raise ValueError(
                f"expected {ncoef(nvars, order)} coefficients, got {coeffs.shape[0]}"
            )
        self.coeffs = coeffs
        self.nvars = nvars
        self.order = order

    # construction -----------------------------------------------------------

    @classmethod
    def constant(cls, value, nvars: int, order: int) -> "Jet":
        value = np.asarray(value, dtype=float)
        coeffs = np.zeros((ncoef(nvars, order),) + value.shape)
        coeffs[0] = value
        return cls(coeffs, nvars, order)

    @classmethod
    def variable(cls, value, var: int, nvars: int, order: int) -> "Jet":
        jet = cls.constant(value, nvars, order)
        if order >= 1:
            jet.coeffs[1 + var] = 1.0
        return jet

    # inspection -------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[1:]

    @property
    def value(self) -> np.ndarray:
        return self.coeffs[0]

    def partial(self, multi_index: Sequence[int]) -> np.ndarray:
        """Partial derivative along the listed variables, e.g. ``(2, 2, 3)``.

        Repeated entries mean repeated differentiation; order does not matter.
        """
        exps = [0] * self.nvars
        for v in multi_index:
            exps[v] += 1
        if len(multi_index) > self.order:
            raise UnsupportedOrder(
                f"partial of order {len(multi_index)} from a jet of order {self.order}"
            )
        table = _table(self.nvars, self.order)
        i = table.index(tuple(exps))
        return self.coeffs[i] * table.factorials[i]

    def partials(self) -> dict[tuple[int, ...], np.ndarray]:
        """All partials keyed by exponent tuple."""
        table = _table(self.nvars, self.order)
        return {
            key: self.coeffs[i] * table.factorials[i]
            for key, i in table.lookup.items()
        }

    def __repr__(self) -> str:
        return f"Jet(order={self.order}, nvars={self.nvars}, shape={self.shape})"

    # structural -------------------------------------------------------------

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise UnsupportedOrder(f"cannot raise jet order {self.order} to {order}")
        if order == self.order:
            return self
        return Jet(self.coeffs[: ncoef(self.nvars, order)], self.nvars, order)

    def __getitem__(self, key) -> "Jet":
        if not isinstance(key, tuple):
            key = (key,)
        if any(k is Ellipsis for k in key):
            raise IndexError("ellipsis indexing is ambiguous for jets")
        return Jet(self.coeffs[(slice(None),) + key], self.nvars, self.order)

    def sum(self, axis: int | tuple[int, ...] = 0) -> "Jet":
        axes = (axis,) if isinstance(axis, int) else axis
        ndim = len(self.shape)
        axes = tuple(a % ndim + 1 for a in axes)
        return Jet(self.coeffs.sum(axis=axes), self.nvars, self.order)

    def expand(self, axis: int) -> "Jet":
        if axis < 0:
            axis += len(self.shape) + 1
        return Jet(np.expand_dims(self.coeffs, axis + 1), self.nvars, self.order)

    def swap(self, a: int, b: int) -> "Jet":
        """Exchange two component axes."""
        return Jet(np.swapaxes(self.coeffs, a + 1, b + 1), self.nvars, self.order)

    # arithmetic -------------------------------------------------------------

    def _lift(self, other) -> "Jet":
        if isinstance(other, Jet):
            if other.nvars != self.nvars:
                raise ValueError("jets over different variable sets")
            return other
        return Jet.constant(other, self.nvars, self.order)

    def __add__(self, other) -> "Jet":
        other = self._lift(other)
        order = min(self.order, other.order)
        a, b = _aligned(self.truncate(order).coeffs, other.truncate(order).coeffs)
        return Jet(a + b, self.nvars, order)

    __radd__ = __add__

    def __neg__(self) -> "Jet":
        return Jet(-self.coeffs, self.nvars, self.order)

    def __sub__(self, other) -> "Jet":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "Jet":
        return self._lift(other) + (-self)

    def __mul__(self, other) -> "Jet":
        if not isinstance(other, Jet):
            scale = np.asarray(other, dtype=float)
            return Jet(_pad(self.coeffs, scale.ndim + 1) * scale, self.nvars, self.order)
        if other.nvars != self.nvars:
            raise ValueError("jets over different variable sets")
        order = min(self.order, other.order)
        a, b = _aligned(self.truncate(order).coeffs, other.truncate(order).coeffs)
        if order == 0:
            return Jet(a * b, self.nvars, 0)
        shape = np.broadcast_shapes(a.shape[1:], b.shape[1:])
        t = _table(self.nvars, order)
        prod = (a[t.mul_left] * b[t.mul_right]).reshape(len(t.mul_left), -1)
        out = t.mul_reduce @ prod
        return Jet(out.reshape((out.shape[0],) + shape), self.nvars, order)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Jet":
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other) -> "Jet":
        return self.reciprocal() * other

    def __pow__(self, exponent) -> "Jet":
        if isinstance(exponent, (int, np.integer)) and exponent >= 0:
            result = Jet.constant(np.ones(self.shape), self.nvars, self.order)
            base = self
            k = int(exponent)
            while k:
                if k & 1:
                    result = result * base
                k >>= 1
                if k:
                    base = base * base
            return result
        return self.power(float(exponent))

    def compose(self, derivatives: Sequence[np.ndarray]) -> "Jet":
        """Apply a univariate function given its derivatives at ``self.value``.

        ``derivatives[m]`` is the m-th derivative; at least ``order + 1`` are needed.
        """
        order = self.order
        h = Jet(self.coeffs.copy(), self.nvars, order)
        h.coeffs[0] = 0.0
        result = Jet.constant(derivatives[order] / math.factorial(order), self.nvars, order)
        for m in range(order - 1, -1, -1):
            result = result * h + derivatives[m] / math.factorial(m)
        return result

    def power(self, p: float) -> "Jet":
        a0 = self.value
        if np.any(a0 <= 0) and not float(p).is_integer():
            raise DomainError("non-integer power of a non-positive jet value")
        if np.any(a0 == 0) and p < 0:
            raise ZeroDivisionError("negative power of a jet with zero value")
        derivs = []
        falling = 1.0
        for m in range(self.order + 1):
            derivs.append(falling * a0 ** (p - m))
            falling *= p - m
        return self.compose(derivs)

    def sqrt(self) -> "Jet":
        return self.power(0.5)

    def reciprocal(self) -> "Jet":
        return self.power(-1.0)

    # calculus ---------------------------------------------------------------

    def d(self, var: int) -> "Jet":
        """Partial derivative with respect to variable ``var``; order drops by one."""
        if self.order == 0:
            raise UnsupportedOrder("cannot differentiate an order-0 jet")
        src, factor = _derivative_map(self.nvars, self.order, var)
        factor = factor.reshape((-1,) + (1,) * len(self.shape))
        return Jet(self.coeffs[src] * factor, self.nvars, self.order - 1)


def stack(jets: Sequence[Jet], axis: int = 0) -> Jet:
    order = min(j.order for j in jets)
    jets = [j.truncate(order) for j in jets]
    shape = np.broadcast_shapes(*(j.shape for j in jets))
    coeffs = [
        np.broadcast_to(_pad(j.coeffs, len(shape) + 1), (j.coeffs.shape[0],) + shape)
        for j in jets
    ]
    if axis < 0:
        axis += len(shape) + 1
    return Jet(np.stack(coeffs, axis=axis + 1), jets[0].nvars, order)


def matmul(a: Jet, b: Jet) -> Jet:
    """Matrix product over the first two component axes of each operand."""
    return (a.expand(2) * b.expand(0)).sum(1)


def dot(a: Sequence[Jet], b: Sequence[Jet]) -> Jet:
    return sum((u * v for u, v in zip(a, b)), start=0.0 * a[0])


def seed(x, y, order: int) -> tuple[list[Jet], list[Jet]]:
    """Independent variables ``x^1..x^n, y^1..y^n`` as jets at the given points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[-1]
    if y.shape[-1] != n:
        raise ValueError("point and tangent dimensions differ")
    batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
    x = np.broadcast_to(x, batch + (n,))
    y = np.broadcast_to(y, batch + (n,))
    xs = [Jet.variable(x[..., i], i, 2 * n, order) for i in range(n)]
    ys = [Jet.variable(y[..., i], n + i, 2 * n, order) for i in range(n)]
    return xs, ys


def var_index(name: str, n: int) -> int:
    """Map ``"x1"``, ``"y2"``... (1-based) to a jet variable index."""
    kind, idx = name[0], int(name[1:]) - 1
    if kind not in "xy" or not 0 <= idx < n:
        raise ValueError(f"bad variable name {name!r} for dimension {n}")
    return idx if kind == "x" else n + idx


@dataclass(frozen=True)
class ScalarFunction:
    """A scalar of ``(x, y)`` written once in jet arithmetic.

    ``expr`` receives the seeded variable lists and returns a :class:`Jet`.
    ``domain`` maps a point (or batch of points) to ``(inside, margin)``.
    """

    expr: Callable[[list[Jet], list[Jet]], Jet]
    dimension: int
    domain: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None

    def __call__(self, x, y, order: int = 0) -> Jet:
        xs, ys = seed(x, y, order)
        out = self.expr(xs, ys)
        if not isinstance(out, Jet):
            out = Jet.constant(np.broadcast_to(out, xs[0].shape), 2 * self.dimension, order)
        return out

    def margin(self, x) -> np.ndarray:
        if self.domain is None:
            return np.full(np.shape(x)[:-1], np.inf)
        return self.domain(np.asarray(x, dtype=float))[1]


def check_point(f: ScalarFunction, x, y) -> None:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != f.dimension or y.shape[-1] != f.dimension:
        raise ValueError(f"expected {f.dimension}-dimensional point and tangent")
    if np.any(np.linalg.norm(y, axis=-1) == 0):
        raise SlitViolation("tangent vector y = 0 is outside the slit tangent bundle")
    if f.domain is not None and not np.all(f.domain(x)[0]):
        raise DomainError(f"point {x.tolist()} outside the chart domain")


def jet_eval(f: ScalarFunction, x, y, order: int) -> Jet:
    """All partials of ``f`` at ``(x, y)`` up to total order ``order`` (at most 4)."""
    if not isinstance(order, (int, np.integer)) or order < 0:
        raise ValueError("order must be a non-negative integer")
    if order > MAX_ORDER:
        raise UnsupportedOrder(f"jet_eval supports order <= {MAX_ORDER}, got {order}")
    check_point(f, x, y)
    return f(x, y, int(order))


def fd_partial(f: ScalarFunction, x, y, multi_index: Sequence[int], step: float) -> float:
    """Central-difference estimate of a mixed partial (error O(step^2))."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.shape[-1]
    z = np.concatenate([x, y])
    m = len(multi_index)
    if m == 0:
        return float(f(x, y, 0).value)
    signs = np.array(list(itertools.product((-1.0, 1.0), repeat=m)))
    basis = np.eye(2 * n)[list(multi_index)]
    points = z + step * signs @ basis
    values = f(points[:, :n], points[:, n:], 0).value
    weights = signs.prod(axis=1)
    return float(weights @ values / (2.0 * step) ** m)


def fd_check(f: ScalarFunction, x, y, multi_index: Sequence[int], step: float | None = None) -> float:
    """Relative disagreement between a jet partial and its finite-difference estimate.

    One Richardson level combines steps ``h`` and ``h/2``.  The default ``h``
    grows with the derivative order (see ``FD_STEPS``) so that rounding error
    stays below truncation error.
    """
    m = len(multi_index)
    if m > MAX_ORDER:
        raise UnsupportedOrder(f"fd_check supports order <= {MAX_ORDER}")
    h = FD_STEPS[m] if step is None else step
    check_point(f, x, y)
    if np.any(f.margin(x) < 10 * h) or np.linalg.norm(y) < 10 * h:
        raise DomainError("insufficient domain margin for the difference stencil")
    exact = float(jet_eval(f, x, y, m).partial(multi_index))
    coarse = fd_partial(f, x, y, multi_index, h)
    fine = fd_partial(f, x, y, multi_index, h / 2)
    estimate = (4.0 * fine - coarse) / 3.0
    return abs(exact - estimate) / (1.0 + abs(exact))
