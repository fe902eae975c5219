"""Periodic grids, fields and model parameters on the unit torus [0, 1)^n.

Everything downstream works with two conventions fixed here:

* the torus has period 1 in every coordinate, so its volume is 1;
* discrete measures are probability vectors (they sum to 1), so an
  integral ``int f theta dx`` becomes ``sum_i f_i theta_i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, NumericError, ShapeError, UsageError

_TWO_PI = 2.0 * np.pi


def wrap(x) -> np.ndarray:
    """Reduce coordinates modulo 1 into [0, 1).

    Works elementwise on scalars or arrays of any shape.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("wrap: non-finite coordinate")
    y = np.mod(x, 1.0)
    # np.mod(-tiny, 1.0) rounds to exactly 1.0
    y = np.where(y >= 1.0, 0.0, y)
    return y


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid with ``m`` points per axis on the n-torus.

    Flat indices use C order (last axis varies fastest).
    """

    n: int
    m: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError(f"grid dimension n must be an integer >= 1, got {self.n}")
        if int(self.m) != self.m or self.m < 1:
            raise ConfigurationError(f"grid points per axis m must be an integer >= 1, got {self.m}")

    @property
    def size(self) -> int:
        return self.m ** self.n

    N = size

    @property
    def spacing(self) -> float:
        return 1.0 / self.m

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.n

    def to_multi(self, flat) -> np.ndarray:
        flat = np.asarray(flat)
        if np.any(flat < 0) or np.any(flat >= self.size):
            raise ShapeError("flat index out of range")
        return np.stack(np.unravel_index(flat, self.shape), axis=-1)

    def to_flat(self, multi) -> np.ndarray:
        multi = np.asarray(multi)
        if multi.shape[-1] != self.n:
            raise ShapeError(f"multi-index must have {self.n} components")
        return np.ravel_multi_index(tuple(np.moveaxis(multi, -1, 0)), self.shape)

    def multi_indices(self) -> np.ndarray:
        """(N, n) integer array of multi-indices in flat order."""
        return self.to_multi(np.arange(self.size))

    def points(self) -> np.ndarray:
        """(N, n) array of point coordinates i/m."""
        return self.multi_indices() / self.m

    def field(self, values) -> "ScalarField":
        return ScalarField(self, values)

    def from_function(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ScalarField":
        """Tabulate ``fn`` (called on the (N, n) point array) on the grid."""
        return ScalarField(self, fn(self.points()))

    def constant(self, c: float = 1.0) -> "ScalarField":
        return ScalarField(self, np.full(self.size, float(c)))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real values on the points of a :class:`TorusGrid`."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size != self.grid.size:
            raise ShapeError(f"field has {vals.size} values, grid has {self.grid.size} points")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)


def _values(f, grid: TorusGrid | None = None) -> np.ndarray:
    if isinstance(f, ScalarField):
        if grid is not None and f.grid != grid:
            raise ShapeError("fields live on different grids")
        return f.values
    return np.asarray(f, dtype=float)


def integrate(f: ScalarField) -> float:
    """Uniform-weight quadrature of ``f`` over the unit torus (the mean value)."""
    vals = _values(f)
    if not np.all(np.isfinite(vals)):
        raise NumericError("integrate: non-finite field values")
    return float(np.mean(vals))


def weighted_inner(f: ScalarField, g: ScalarField, theta: ScalarField) -> float:
    """Inner product ``sum_i f_i g_i theta_i`` for a probability vector theta."""
    grid = theta.grid if isinstance(theta, ScalarField) else None
    if grid is None:
        for x in (f, g):
            if isinstance(x, ScalarField):
                grid = x.grid
    fv, gv, tv = _values(f, grid), _values(g, grid), _values(theta, grid)
    if not (fv.shape == gv.shape == tv.shape):
        raise ShapeError("weighted_inner: field shapes differ")
    if np.any(tv < 0):
        raise DomainError("weighted_inner: theta must be nonnegative")
    # f*g is commutative in IEEE arithmetic, so the result is exactly symmetric
    return float(np.dot(fv * gv, tv))


@dataclass(frozen=True)
class TrigTerm:
    k: tuple
    cos: float = 0.0
    sin: float = 0.0


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """A smooth 1-periodic potential U on the n-torus.

    Either a finite trigonometric sum
    ``U(x) = sum a_k cos(2 pi k.x) + b_k sin(2 pi k.x)`` or a table of grid values.
    """

    n: int
    terms: tuple = ()
    table: ScalarField | None = None
    const: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigurationError("potential dimension must be >= 1")
        terms = []
        for t in self.terms:
            if not isinstance(t, TrigTerm):
                t = TrigTerm(**t) if isinstance(t, dict) else TrigTerm(*t)
            k = tuple(int(c) for c in np.atleast_1d(t.k))
            if len(k) != self.n:
                raise ShapeError(f"frequency vector {k} does not have {self.n} entries")
            terms.append(TrigTerm(k, float(t.cos), float(t.sin)))
        object.__setattr__(self, "terms", tuple(terms))
        if self.table is not None:
            if self.terms:
                raise ConfigurationError("potential is either trigonometric or tabulated, not both")
            if self.table.grid.n != self.n:
                raise ShapeError("tabulated potential grid dimension mismatch")
            if not np.all(np.isfinite(self.table.values)):
                raise DomainError("tabulated potential has non-finite values")

    @classmethod
    def zero(cls, n: int = 1) -> "PotentialSpec":
        return cls(n)

    @classmethod
    def cosine(cls, n: int = 1, amplitude: float = 1.0, axis: int = 0) -> "PotentialSpec":
        """``amplitude * cos(2 pi x_axis)``."""
        k = [0] * n
        k[axis] = 1
        return cls(n, (TrigTerm(tuple(k), amplitude, 0.0),))

    @classmethod
    def tabulated(cls, values: ScalarField) -> "PotentialSpec":
        return cls(values.grid.n, table=values)

    def shifted(self, c: float) -> "PotentialSpec":
        """The same potential plus a constant."""
        if self.table is not None:
            return PotentialSpec(self.n, table=self.table.with_values(self.table.values + c))
        return PotentialSpec(self.n, self.terms, const=self.const + c)

    @property
    def is_tabulated(self) -> bool:
        return self.table is not None

    def evaluate(self, x) -> np.ndarray:
        """Evaluate at points ``x`` of shape (..., n) after wrapping."""
        x = np.asarray(x, dtype=float)
        if self.n == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if x.shape[-1] != self.n:
            raise ShapeError(f"points must have {self.n} coordinates")
        x = wrap(x)
        if self.table is not None:
            g = self.table.grid
            scaled = x * g.m
            idx = np.rint(scaled)
            if np.any(np.abs(scaled - idx) > 1e-9 * g.m):
                raise UsageError("tabulated potential queried off its grid")
            idx = idx.astype(np.int64) % g.m
            return self.table.values[g.to_flat(idx)] + self.const
        out = np.full(x.shape[:-1], self.const, dtype=float)
        for t in self.terms:
            phase = _TWO_PI * (x @ np.asarray(t.k, dtype=float))
            if t.cos:
                out = out + t.cos * np.cos(phase)
            if t.sin:
                out = out + t.sin * np.sin(phase)
        return out

    def on_grid(self, grid: TorusGrid) -> ScalarField:
        if grid.n != self.n:
            raise ShapeError("potential and grid dimensions differ")
        if self.table is not None and self.table.grid == grid:
            return self.table.with_values(self.table.values + self.const)
        return ScalarField(grid, self.evaluate(grid.points()))

    def max_abs(self) -> float:
        if self.table is not None:
            return float(np.max(np.abs(self.table.values + self.const)))
        return abs(self.const) + sum(abs(t.cos) + abs(t.sin) for t in self.terms)


def eval_U(spec: PotentialSpec, x) -> float:
    """Potential value at a single point (wrapped into the torus)."""
    val = spec.evaluate(np.atleast_1d(np.asarray(x, dtype=float)))
    return float(np.asarray(val).reshape(-1)[0])


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Parameters of the entropy-penalized problem.

    The Lagrangian is ``L(x, v) = |v|^2 / 2 - U(x) + <P, v>``.
    """

    epsilon: float
    h: float
    P: tuple
    potential: PotentialSpec = field(default=None)

    def __post_init__(self):
        for name in ("epsilon", "h"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0:
                raise ConfigurationError(f"{name} must be a positive finite number, got {val}")
        P = tuple(float(p) for p in np.atleast_1d(np.asarray(self.P, dtype=float)))
        if not all(np.isfinite(P)):
            raise ConfigurationError("P must be finite")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "h", float(self.h))
        pot = self.potential if self.potential is not None else PotentialSpec.zero(len(P))
        if pot.n != len(P):
            raise ShapeError(f"P has {len(P)} entries but the potential lives in dimension {pot.n}")
        object.__setattr__(self, "potential", pot)

    @property
    def n(self) -> int:
        return len(self.P)

    @property
    def sigma(self) -> float:
        """Standard deviation h*sqrt(eps) of one step's landing displacement."""
        return self.h * np.sqrt(self.epsilon)

    def replace(self, **changes) -> "ModelParams":
        kw = dict(epsilon=self.epsilon, h=self.h, P=self.P, potential=self.potential)
        kw.update(changes)
        return ModelParams(**kw)

    def check_resolution(self, grid: TorusGrid, cells: float = 3.0) -> None:
        """Require at least ``cells`` grid spacings per kernel standard deviation."""
        if self.sigma < cells * grid.spacing * (1 - 1e-12):
            raise ConfigurationError(
                f"under-resolved kernel: h*sqrt(epsilon) = {self.sigma:.6g} < {cells}/m = "
                f"{cells * grid.spacing:.6g}; increase m to at least {int(np.ceil(cells / self.sigma))}"
            )


def as_values(f, grid: TorusGrid) -> np.ndarray:
    """Field values as an array, accepting a ScalarField, an array or a callable."""
    if callable(f) and not isinstance(f, (ScalarField, np.ndarray)):
        return np.asarray(f(grid.points()), dtype=float).reshape(-1)
    vals = _values(f, grid).reshape(-1)
    if vals.size != grid.size:
        raise ShapeError(f"field has {vals.size} values, grid has {grid.size} points")
    return vals


def trig_field(grid: TorusGrid, k: Sequence[int], kind: str = "cos") -> ScalarField:
    """``cos(2 pi k.x)`` or ``sin(2 pi k.x)`` on the grid."""
    phase = _TWO_PI * (grid.points() @ np.asarray(k, dtype=float))
    return ScalarField(grid, np.cos(phase) if kind == "cos" else np.sin(phase))


def trig_basis(grid: TorusGrid) -> list:
    """The 2n+1 test functions 1, cos(2 pi x_a), sin(2 pi x_a)."""
    out = [grid.constant(1.0)]
    for a in range(grid.n):
        k = [0] * grid.n
        k[a] = 1
        out.append(trig_field(grid, k, "cos"))
        out.append(trig_field(grid, k, "sin"))
    return out
