"""Stationary Markov chains on the grid, driven by a discretized kernel.

States are flat grid indices. Each transition consumes two uniforms from a
``numpy.random.Generator`` (PCG64 by default): one picks an alias column,
one accepts it or takes its alias. Trajectories are therefore a pure
function of (kernel, theta, T, seed) and identical across backends.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ConfigurationError, ShapeError, UsageError
from .torus import ScalarField, TorusGrid, as_values

TRAJ_MAGIC = b"EPMTRAJ1"
_CHUNK = 1 << 20


@dataclass(frozen=True, eq=False)
class SamplerTable:
    """Vose alias tables, one per row of a probability matrix."""

    prob: np.ndarray
    alias: np.ndarray

    @classmethod
    def from_rows(cls, rows) -> "SamplerTable":
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if np.any(rows < 0) or np.any(rows.sum(axis=1) <= 0):
            raise ConfigurationError("sampling weights must be nonnegative with positive total")
        prob, alias = _backend.alias_build(rows)
        prob.setflags(write=False)
        alias.setflags(write=False)
        return cls(prob, alias)

    @classmethod
    def from_kernel(cls, kernel) -> "SamplerTable":
        return cls.from_rows(kernel.matrix)

    @property
    def size(self) -> int:
        return self.prob.shape[1]

    def draw(self, row: int, u1: float, u2: float) -> int:
        n = self.size
        c = min(int(u1 * n), n - 1)
        return c if u2 < self.prob[row, c] else int(self.alias[row, c])


def sample_initial(theta, rng: np.random.Generator, table: SamplerTable | None = None) -> int:
    """Draw a grid index with probability ``theta_i``."""
    table = table or SamplerTable.from_rows(as_values(theta, theta.grid) if isinstance(theta, ScalarField) else theta)
    u1, u2 = rng.random(2)
    return table.draw(0, u1, u2)


def step(kernel, i: int, rng: np.random.Generator) -> int:
    """One transition from state ``i``."""
    if not 0 <= i < kernel.size:
        raise ShapeError(f"state {i} outside [0, {kernel.size})")
    u1, u2 = rng.random(2)
    return kernel.sampler.draw(i, u1, u2)


@dataclass(frozen=True, eq=False)
class Trajectory:
    direction: str
    seed: int
    states: np.ndarray
    grid: TorusGrid
    params: object = None

    def __len__(self):
        return self.states.size

    @property
    def T(self) -> int:
        return self.states.size - 1

    def coordinates(self) -> np.ndarray:
        return self.grid.to_multi(self.states) / self.grid.m

    def displacements(self) -> np.ndarray:
        """Minimal-image single-step displacements, shape (T, n)."""
        return minimal_image(self.grid, self.states[:-1], self.states[1:])

    def occupation(self) -> np.ndarray:
        """Empirical occupation frequencies of the grid cells."""
        return np.bincount(self.states, minlength=self.grid.size) / self.states.size

    def write_csv(self, path) -> None:
        coords = self.coordinates()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "flat_index"] + [f"x{a}" for a in range(self.grid.n)])
            for t, (s, x) in enumerate(zip(self.states.tolist(), coords.tolist())):
                w.writerow([t, s] + [format(c, ".17g") for c in x])

    def write_binary(self, path) -> None:
        """8-byte magic, uint32 N, then uint32 states; all little-endian."""
        with open(path, "wb") as fh:
            fh.write(TRAJ_MAGIC)
            fh.write(struct.pack("<I", self.grid.size))
            fh.write(self.states.astype("<u4").tobytes())


def read_binary(path, grid: TorusGrid, direction: str = "unknown", seed: int = -1) -> Trajectory:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != TRAJ_MAGIC:
        raise UsageError(f"{path}: not an EPMTRAJ1 trajectory file")
    (N,) = struct.unpack("<I", data[8:12])
    if N != grid.size:
        raise ShapeError(f"{path}: trajectory has N={N}, grid has {grid.size}")
    states = np.frombuffer(data[12:], dtype="<u4").astype(np.int64)
    return Trajectory(direction, seed, states, grid)


def minimal_image(grid: TorusGrid, i, j) -> np.ndarray:
    """Displacement from cell i to cell j, wrapped per axis into [-1/2, 1/2)."""
    m = grid.m
    di = grid.to_multi(np.asarray(j)) - grid.to_multi(np.asarray(i))
    di = (di + m // 2) % m - m // 2
    return di / m


def simulate(kernel, theta, T: int, seed: int) -> Trajectory:
    """Stationary chain of ``T`` steps: X_0 ~ theta, X_{t+1} ~ kernel[X_t]."""
    if int(T) != T or T < 0:
        raise ConfigurationError(f"trajectory length must be a nonnegative integer, got {T}")
    theta_v = as_values(theta if theta is not None else kernel.stationary, kernel.grid)
    init = SamplerTable.from_rows(theta_v)
    table = kernel.sampler
    rng = np.random.default_rng(seed)
    out = np.empty(T + 1, dtype=np.int64)
    first = min(T + 1, _CHUNK)
    out[:first] = _backend.alias_walk(table.prob, table.alias, init.prob[0], init.alias[0],
                                      rng.random((first, 2)))
    pos = first
    while pos < T + 1:
        n = min(_CHUNK, T + 1 - pos)
        out[pos:pos + n] = _backend.alias_walk(table.prob, table.alias, init.prob[0], init.alias[0],
                                               rng.random((n, 2)), start=out[pos - 1])
        pos += n
    return Trajectory(kernel.direction, int(seed), out, kernel.grid)
