"""Dense discretizations of the forward and backward Perron operators.

The velocity integral is turned into an integral over landing points
``y = x + h v`` (forward) or ``y = x - h v`` (backward), and then periodized
over integer image shifts ``k``::

    A[i, j] = 1 / (N h^n) * sum_k exp(-L(x_i, (y_j + k - x_i) / h) / eps)

Only images whose landing displacement lies within ``cutoff_sigmas``
standard deviations (``h sqrt(eps)``) of the Gaussian centre are included.
The Gaussian factor depends on ``j - i`` alone, so it is tabulated once per
grid displacement and then broadcast; the potential enters as a row (forward)
or column (backward) factor ``exp(U / eps)``.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ConfigurationError, DomainError, LinearDomainOverflow, ShapeError
from .torus import ModelParams, ScalarField, TorusGrid, wrap

DEFAULT_CUTOFF = 12.0
MIN_CUTOFF = 6.0
# exponent spread (natural log units) beyond which linear entries are not kept
LOG_DOMAIN_SPREAD = 500.0
_EXP_LIMIT = 700.0


def eval_L(params: ModelParams, x, v) -> float:
    """Lagrangian ``|v|^2 / 2 - U(x) + <P, v>``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if x.shape != (params.n,) or v.shape != (params.n,):
        raise ShapeError(f"x and v must have {params.n} components")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise DomainError("eval_L: non-finite input")
    U = float(params.potential.evaluate(wrap(x)[None, :])[0])
    return 0.5 * float(v @ v) - U + float(np.dot(params.P, v))


@dataclass(frozen=True, eq=False)
class DisplacementTable:
    """Periodized Gaussian factor for every grid displacement ``delta = j - i mod m``."""

    log_weight: np.ndarray  # (N,) log sum_k exp(-kinetic_k / eps)
    mean_kinetic: np.ndarray  # (N,) weighted mean of |v|^2/2 + <P, v> over images
    n_images: np.ndarray  # (N,) images included per displacement


def _image_box(center: np.ndarray, radius: float) -> np.ndarray:
    """All integer shifts k (lexicographic order) that can reach the cutoff ball."""
    ranges = [range(int(np.ceil(c - radius - 1.0)), int(np.floor(c + radius)) + 1) for c in center]
    return np.array(list(itertools.product(*ranges)), dtype=np.int64).reshape(-1, len(center))


def displacement_table(params: ModelParams, grid: TorusGrid, cutoff_sigmas: float,
                       direction: str = "forward") -> DisplacementTable:
    """Sum the Gaussian factor over periodic images for each grid displacement.

    For displacement ``d = (delta + k m) / m`` of the landing point from the
    source point, the velocity is ``d / h`` (forward) or ``-d / h`` (backward).
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction {direction!r}")
    sign = 1.0 if direction == "forward" else -1.0
    eps, h, m = params.epsilon, params.h, grid.m
    P = np.asarray(params.P)
    radius = cutoff_sigmas * params.sigma
    # Gaussian centre in d: v = -P, i.e. d = -sign * h * P
    center = -sign * h * P
    images = _image_box(center, radius)
    delta = grid.multi_indices()
    d_int = delta[:, None, :] + images[None, :, :] * m
    d = d_int / m
    inside = np.sum((d - center) ** 2, axis=-1) <= radius * radius
    v = sign * d / h
    kinetic = 0.5 * np.sum(v * v, axis=-1) + v @ P
    expo = np.where(inside, -kinetic / eps, -np.inf)
    top = np.max(expo, axis=1)
    has = np.isfinite(top)
    w = np.zeros_like(expo)
    w[has] = np.exp(expo[has] - top[has, None])
    s = np.sum(w, axis=1)
    log_weight = np.full(grid.size, -np.inf)
    log_weight[has] = top[has] + np.log(s[has])
    mean_kin = np.full(grid.size, np.nan)
    kin_masked = np.where(inside, kinetic, 0.0)
    mean_kin[has] = np.sum(w[has] * kin_masked[has], axis=1) / s[has]
    return DisplacementTable(log_weight, mean_kin, np.sum(inside, axis=1))


def displacement_index(grid: TorusGrid) -> np.ndarray:
    """(N, N) flat index of the displacement ``j - i mod m`` (per axis)."""
    m, n = grid.m, grid.n
    mi = grid.multi_indices()
    D = np.zeros((grid.size, grid.size), dtype=np.int32 if grid.size < 2**31 else np.int64)
    for a in range(n):
        col = mi[:, a]
        D += ((col[None, :] - col[:, None]) % m).astype(D.dtype) * (m ** (n - 1 - a))
    return D


class OperatorMatrix:
    """Dense N x N discretization of the forward or backward Perron operator.

    Rows index source points, columns index landing points.

    Attributes
    ----------
    log_entries : ndarray
        ``ln A[i, j]`` (``-inf`` where no image is within the cutoff).
    mean_L : ndarray
        Weighted mean of the Lagrangian over the images lumped into (i, j),
        with weights ``exp(-L / eps)``; NaN where the entry is zero.
    entries : ndarray
        Linear-domain ``A``. Raises :class:`LinearDomainOverflow` when the
        exponents do not fit comfortably in double precision.
    """

    def __init__(self, grid, params, direction, log_entries, mean_L, cutoff_sigmas):
        self.grid = grid
        self.params = params
        self.direction = direction
        self.cutoff_sigmas = float(cutoff_sigmas)
        log_entries.setflags(write=False)
        mean_L.setflags(write=False)
        self.log_entries = log_entries
        self.mean_L = mean_L
        finite = np.isfinite(log_entries)
        row_max = np.max(np.where(finite, log_entries, -np.inf), axis=1)
        row_min = np.min(np.where(finite, log_entries, np.inf), axis=1)
        self.exponent_spread = float(np.max(row_max - row_min))
        self.exponent_range = (float(np.min(row_min)), float(np.max(row_max)))
        self.domain = "linear"
        if (self.exponent_spread > LOG_DOMAIN_SPREAD or self.exponent_range[1] > _EXP_LIMIT
                or self.exponent_range[0] < -_EXP_LIMIT):
            self.domain = "log"
        self._entries = None

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def entries(self) -> np.ndarray:
        if self.domain == "log":
            raise LinearDomainOverflow(
                f"kernel exponents span [{self.exponent_range[0]:.1f}, {self.exponent_range[1]:.1f}] "
                f"(row spread {self.exponent_spread:.1f}); use the log-domain path "
                "(log_entries / apply_G) for these parameters")
        if self._entries is None:
            a = np.exp(self.log_entries)
            a.setflags(write=False)
            self._entries = a
        return self._entries

    @property
    def T(self) -> np.ndarray:
        return self.entries.T

    def row_sums(self) -> np.ndarray:
        """Row sums, computed stably from the log entries."""
        return np.exp(_backend.row_logsumexp(self.log_entries, np.zeros(self.size)))


def _check(params: ModelParams, grid: TorusGrid, cutoff_sigmas: float) -> None:
    if grid.n != params.n:
        raise ShapeError(f"grid dimension {grid.n} differs from model dimension {params.n}")
    if not cutoff_sigmas >= MIN_CUTOFF:
        raise ConfigurationError(f"cutoff_sigmas must be >= {MIN_CUTOFF}, got {cutoff_sigmas}")


def _assemble(params, grid, cutoff_sigmas, direction):
    _check(params, grid, cutoff_sigmas)
    table = displacement_table(params, grid, cutoff_sigmas, direction)
    if not np.any(np.isfinite(table.log_weight)):
        raise ConfigurationError(
            f"cutoff_sigmas={cutoff_sigmas} includes no periodic image; increase the cutoff")
    D = displacement_index(grid)
    U = params.potential.on_grid(grid).values
    eps, h = params.epsilon, params.h
    log_norm = -np.log(grid.size) - grid.n * np.log(h)
    if direction == "forward":
        pot = U[:, None]  # potential at the source point x_i
    else:
        pot = U[None, :]  # potential at the landing point y_j = x_i - h v
    log_entries = log_norm + pot / eps + table.log_weight[D]
    mean_L = table.mean_kinetic[D] - pot
    return OperatorMatrix(grid, params, direction, np.ascontiguousarray(log_entries),
                          np.ascontiguousarray(mean_L), cutoff_sigmas)


def assemble_forward(params: ModelParams, grid: TorusGrid,
                     cutoff_sigmas: float = DEFAULT_CUTOFF) -> OperatorMatrix:
    """Discretize ``phi -> int exp(-L(x, v) / eps) phi(x + h v) dv``."""
    return _assemble(params, grid, cutoff_sigmas, "forward")


def assemble_backward(params: ModelParams, grid: TorusGrid,
                      cutoff_sigmas: float = DEFAULT_CUTOFF) -> OperatorMatrix:
    """Discretize ``phi -> int exp(-L(x - h v, v) / eps) phi(x - h v) dv``.

    Assembled directly at the landing point ``x - h v``; it coincides with the
    transpose of :func:`assemble_forward` up to rounding.
    """
    return _assemble(params, grid, cutoff_sigmas, "backward")


def apply_G(params: ModelParams, A: OperatorMatrix, phi) -> ScalarField:
    """Nonlinear operator ``-eps h ln sum_j A[i, j] exp(-phi_j / (eps h))``.

    Evaluated by a max-shifted log-sum-exp over each row, so it stays finite
    where the linear-domain product would overflow.
    """
    vals = phi.values if isinstance(phi, ScalarField) else np.asarray(phi, dtype=float)
    if vals.shape != (A.size,):
        raise ShapeError(f"phi has shape {vals.shape}, operator acts on {A.size} points")
    if not np.all(np.isfinite(vals)):
        raise DomainError("apply_G: phi must be finite")
    eh = params.epsilon * params.h
    lse = _backend.row_logsumexp(A.log_entries, -vals / eh)
    if not np.all(np.isfinite(lse)):
        raise ConfigurationError("apply_G: operator has an empty row")
    return ScalarField(A.grid, -eh * lse)


def write_kernel_csv(A: OperatorMatrix, path) -> None:
    """Dump ``i, j, A_ij, meanL_ij`` for every entry, 17 significant digits."""
    lin = np.exp(A.log_entries)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "A_ij", "meanL_ij"])
        N = A.size
        for i in range(N):
            for j in range(N):
                w.writerow([i, j, format(lin[i, j], ".17g"), format(A.mean_L[i, j], ".17g")])
