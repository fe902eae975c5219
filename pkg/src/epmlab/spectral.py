"""Eigen-potentials, stationary density, Markov kernels and spectral gap.

Sign conventions: ``u = exp(-phi / (eps h))`` is the positive eigenvector and
``Lambda = exp(-lam / (eps h))`` its eigenvalue, so ``lam = -eps h ln Lambda``.
Raising U by a constant c multiplies the kernel by ``exp(c / eps)`` and
therefore *lowers* ``lam`` by ``h c``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _backend
from .errors import (ConfigurationError, InternalInvariantError, NonConvergenceError,
                     ShapeError, UnderflowError)
from .kernels import DEFAULT_CUTOFF, OperatorMatrix, apply_G, assemble_backward, assemble_forward
from .torus import ModelParams, ScalarField, TorusGrid, as_values

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 200_000


@dataclass(frozen=True, eq=False)
class EigenSolution:
    """Principal eigenpair of a forward or backward operator.

    ``phi`` is the forward potential for a forward solve and the backward
    potential (phi-bar) for a backward solve; either way ``min phi = 0``.
    """

    lam: float
    Lambda: float
    phi: ScalarField
    residual: float
    iterations: int
    direction: str
    eh: float
    tol: float

    @property
    def u(self) -> np.ndarray:
        """Eigenvector ``exp(-phi / (eps h))`` scaled so that ``max u = 1``."""
        return np.exp(-self.phi.values / self.eh)

    @property
    def grid(self) -> TorusGrid:
        return self.phi.grid


def _linear_residual(A: OperatorMatrix, phi: np.ndarray, lam: float, eh: float) -> float:
    """sup_i |(A u)_i - Lambda u_i| / Lambda for u = exp(-phi / eh)."""
    G = apply_G(A.params, A, phi).values
    u = np.exp(-phi / eh)
    return float(np.max(u * np.abs(np.expm1(-(G - phi - lam) / eh))))


def _solve(A: OperatorMatrix, params: ModelParams | None, tol: float, max_iter: int,
           method: str, phi0) -> EigenSolution:
    params = params or A.params
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    eh = params.epsilon * params.h
    N = A.size
    if method == "log":
        phi = np.zeros(N) if phi0 is None else as_values(phi0, A.grid).copy()
        phi -= phi.min()
        res = np.inf
        lam = np.nan
        for it in range(1, max_iter + 1):
            G = apply_G(params, A, phi).values
            d = G - phi
            lam = float(np.mean(d))
            res = float(np.max(np.abs(d - lam)))
            phi = G - G.min()
            if res < tol * eh:
                break
        else:
            raise NonConvergenceError(
                f"log-domain eigen-iteration did not converge in {max_iter} iterations "
                f"(residual {res / eh:.3e})", residual=res / eh, iterations=max_iter,
                partial=(lam, phi))
    elif method == "linear":
        K = A.entries
        u = np.ones(N) if phi0 is None else np.exp(-as_values(phi0, A.grid) / eh)
        u /= u.max()
        res = np.inf
        for it in range(1, max_iter + 1):
            Au = _backend.matvec(K, u)
            Lam = float(Au.max())
            res = float(np.max(np.abs(Au - Lam * u))) / Lam
            u = Au / Lam
            if res < tol:
                break
        else:
            raise NonConvergenceError(
                f"power iteration did not converge in {max_iter} iterations (residual {res:.3e})",
                residual=res, iterations=max_iter, partial=u)
        if np.any(u <= 0):
            raise InternalInvariantError("power iterate lost positivity: assembly bug")
        lam = -eh * np.log(Lam)
        phi = -eh * np.log(u)
        phi -= phi.min()
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(phi)):
        raise InternalInvariantError("non-finite potential: eigenvector lost positivity")
    residual = _linear_residual(A, phi, lam, eh)
    return EigenSolution(lam=float(lam), Lambda=float(np.exp(-lam / eh)),
                         phi=ScalarField(A.grid, phi), residual=residual, iterations=it,
                         direction=A.direction, eh=eh, tol=tol)


def solve_forward(A: OperatorMatrix, params: ModelParams | None = None, tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER, method: str = "log", phi0=None) -> EigenSolution:
    """Principal eigenpair of the forward operator.

    The default ``method="log"`` iterates ``phi <- G[phi] - min G[phi]`` and
    reads the effective value off as ``mean(G[phi] - phi)``; it stops once
    ``sup |G[phi] - phi - lam| < tol * eps * h``. ``method="linear"`` runs plain
    power iteration on the linear entries.
    """
    return _solve(A, params, tol, max_iter, method, phi0)


def solve_backward(B: OperatorMatrix, params: ModelParams | None = None, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER, method: str = "log", phi0=None) -> EigenSolution:
    """Principal eigenpair of the backward operator (yields phi-bar)."""
    return _solve(B, params, tol, max_iter, method, phi0)


def build_theta(sol_fwd: EigenSolution, sol_bwd: EigenSolution, params: ModelParams | None = None) -> ScalarField:
    """Stationary density ``exp(-(phi + phibar) / (eps h))``, normalized to sum 1."""
    if sol_fwd.grid != sol_bwd.grid:
        raise ShapeError("forward and backward solutions live on different grids")
    eh = sol_fwd.eh if params is None else params.epsilon * params.h
    t = -(sol_fwd.phi.values + sol_bwd.phi.values) / eh
    w = np.exp(t - t.max())
    return ScalarField(sol_fwd.grid, w / w.sum())


class StochasticKernel:
    """Row-stochastic transition matrix on the grid with its stationary law.

    Attributes
    ----------
    matrix : ndarray (N, N)
    direction : {"forward", "backward", "custom"}
    stationary : ScalarField or None
    defect : float
        Largest row-sum deviation from 1 before renormalization.
    """

    def __init__(self, grid: TorusGrid, matrix, direction: str = "custom",
                 stationary: ScalarField | None = None, defect: float = 0.0,
                 diagnostics: dict | None = None):
        matrix = np.ascontiguousarray(matrix, dtype=float)
        if matrix.shape != (grid.size, grid.size):
            raise ShapeError(f"kernel must be {grid.size} x {grid.size}")
        if np.any(matrix < 0) or not np.all(np.isfinite(matrix)):
            raise ConfigurationError("kernel entries must be finite and nonnegative")
        matrix.setflags(write=False)
        self.grid = grid
        self.matrix = matrix
        self.direction = direction
        self.stationary = stationary
        self.defect = float(defect)
        self.diagnostics = dict(diagnostics or {})

    @property
    def size(self) -> int:
        return self.grid.size

    def apply(self, g) -> np.ndarray:
        return _backend.matvec(self.matrix, as_values(g, self.grid))

    def apply_left(self, w) -> np.ndarray:
        return _backend.rmatvec(self.matrix, as_values(w, self.grid))

    def row_sum_defect(self) -> float:
        return float(np.max(np.abs(self.matrix.sum(axis=1) - 1.0)))

    def stationary_defect(self, theta=None) -> float:
        """l1 norm of ``theta K - theta``."""
        th = self.stationary if theta is None else theta
        if th is None:
            raise ConfigurationError("kernel has no stationary density attached")
        tv = as_values(th, self.grid)
        return float(np.sum(np.abs(self.apply_left(tv) - tv)))

    @cached_property
    def sampler(self):
        from .chain import SamplerTable

        return SamplerTable.from_kernel(self)

    def with_stationary(self, theta: ScalarField) -> "StochasticKernel":
        return StochasticKernel(self.grid, self.matrix, self.direction, theta, self.defect,
                                self.diagnostics)


def stationary_vector(K: StochasticKernel, theta0=None, tol: float = 1e-14,
                      max_iter: int = DEFAULT_MAX_ITER) -> ScalarField:
    """Left power iteration ``theta <- theta K`` until the l1 change is below ``tol``.

    The l1 change stalls at a rounding floor of a few ulps times N; the
    iteration stops there too rather than spinning to ``max_iter``.
    """
    N = K.size
    th = np.full(N, 1.0 / N) if theta0 is None else as_values(theta0, K.grid).copy()
    th /= th.sum()
    best = np.inf
    stall = 0
    for it in range(max_iter):
        nxt = K.apply_left(th)
        nxt /= nxt.sum()
        change = float(np.sum(np.abs(nxt - th)))
        th = nxt
        if change < tol:
            break
        if change < best * 0.999:
            best = change
            stall = 0
        else:
            stall += 1
            if stall > 50 and best < 1e-12:
                break
    else:
        raise NonConvergenceError("stationary vector iteration did not converge", residual=change,
                                  iterations=max_iter)
    return ScalarField(K.grid, th)


def build_forward_kernel(A: OperatorMatrix, sol_fwd: EigenSolution, sol_bwd: EigenSolution | None = None,
                         theta: ScalarField | None = None) -> StochasticKernel:
    """Normalized forward operator ``K[i, j] = A[i, j] u_j / (Lambda u_i)``.

    Rows are renormalized to sum to one; the pre-normalization defect is kept
    on the kernel. The attached stationary density comes from left power
    iteration, started from ``theta`` or from the closed form built from
    ``sol_bwd`` when given.
    """
    if sol_fwd.grid != A.grid:
        raise ShapeError("solution and operator grids differ")
    eh = sol_fwd.eh
    phi = sol_fwd.phi.values
    logK = A.log_entries + (phi[:, None] - phi[None, :] + sol_fwd.lam) / eh
    K = np.exp(logK)
    sums = K.sum(axis=1)
    defect = float(np.max(np.abs(sums - 1.0)))
    if defect > max(100.0 * sol_fwd.tol, 1e-12):
        raise NonConvergenceError(
            f"kernel row sums deviate from 1 by {defect:.3e} before renormalization; "
            "the eigen-solve is not converged", residual=defect)
    K = K / sums[:, None]
    diagnostics = {}
    theta_formula = None
    if sol_bwd is not None:
        theta_formula = build_theta(sol_fwd, sol_bwd)
    start = theta if theta is not None else theta_formula
    kern = StochasticKernel(A.grid, K, "forward", defect=defect)
    stat = stationary_vector(kern, start)
    if theta_formula is not None:
        diagnostics["theta_formula_l1_discrepancy"] = float(
            np.sum(np.abs(theta_formula.values - stat.values)))
    return StochasticKernel(A.grid, K, "forward", stat, defect, diagnostics)


def build_backward_kernel(K: StochasticKernel, max_defect: float = 1e-10) -> StochasticKernel:
    """Time reversal ``Q[i, j] = theta_j K[j, i] / theta_i`` (not renormalized)."""
    if K.stationary is None:
        raise ConfigurationError("forward kernel has no stationary density attached")
    th = K.stationary.values
    if np.min(th) < 1e-300:
        raise UnderflowError(
            f"stationary weight {np.min(th):.3e} underflows; epsilon is too small for this grid")
    sdef = K.stationary_defect()
    if sdef > max_defect:
        raise ConfigurationError(f"theta is not stationary for K (l1 defect {sdef:.3e})")
    Q = K.matrix.T * th[None, :] / th[:, None]
    direction = "backward" if K.direction == "forward" else "reversed"
    return StochasticKernel(K.grid, Q, direction, K.stationary, float(np.max(np.abs(Q.sum(axis=1) - 1.0))))


def apply_F(K: StochasticKernel, g) -> ScalarField:
    """``(F g)_i = sum_j K[i, j] g_j``."""
    return ScalarField(K.grid, K.apply(g))


def apply_F_star(Q: StochasticKernel, f) -> ScalarField:
    """``(F* f)_i = sum_j Q[i, j] f_j``."""
    return ScalarField(Q.grid, Q.apply(f))


@dataclass(frozen=True)
class SpectrumEstimate:
    lambda2_modulus: float
    gap: float
    window_dispersion: float
    iterations: int
    converged: bool
    method: str = "ratio"


def _recurrence_modulus(y0, y1, y2, th) -> float:
    """Largest root modulus of z^2 = a z + b fitted to ``y2 ~ a y1 + b y0``.

    Exact when the iterates span a two-dimensional invariant subspace,
    e.g. a complex-conjugate pair.
    """
    g00 = np.dot(y0 * y0, th)
    g01 = np.dot(y0 * y1, th)
    g11 = np.dot(y1 * y1, th)
    r0 = np.dot(y0 * y2, th)
    r1 = np.dot(y1 * y2, th)
    det = g11 * g00 - g01 * g01
    if not det > 1e-14 * g00 * g11:
        return np.nan
    a = (r1 * g00 - r0 * g01) / det
    b = (r0 * g11 - r1 * g01) / det
    return float(np.max(np.abs(np.roots([1.0, -a, -b]))))


def estimate_gap(K: StochasticKernel, theta=None, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER, window: int = 20, seed: int = 0) -> SpectrumEstimate:
    """Modulus of the second eigenvalue by deflated power iteration.

    A random start is projected onto ``{g : <g, 1>_theta = 0}`` after every
    application of K; the estimate is the geometric mean of the last
    ``window`` norm ratios ``|g_{k+1}|_theta / |g_k|_theta``, converged when
    those ratios span less than ``tol``.

    Under a complex pair the ratios keep oscillating. The same iterates are
    then also fitted with a two-term recurrence whose largest root modulus
    is the pair's modulus; if those estimates settle within ``tol`` over the
    window the result is returned with ``method="recurrence"``. Otherwise
    the ratio estimate is returned flagged ``converged=False``.
    """
    th = as_values(theta if theta is not None else K.stationary, K.grid)
    rng = np.random.default_rng(seed)

    def project(x):
        x = x - np.dot(x, th)
        return x, np.sqrt(np.dot(x * x, th))

    g, nrm = project(rng.standard_normal(K.size))
    g /= nrm
    ratios, fits = [], []
    prev, prev_r = None, np.nan
    dispersion = np.inf
    lam2 = np.nan
    it = 0
    for it in range(1, max_iter + 1):
        nxt, r = project(K.apply(g))
        if r == 0.0:
            return SpectrumEstimate(0.0, 1.0, 0.0, it, True)
        ratios.append(r)
        if prev is not None:
            fits.append(_recurrence_modulus(prev, prev_r * g, prev_r * nxt, th))
        prev, prev_r = g, r
        g = nxt / r
        if len(ratios) >= window:
            w = np.asarray(ratios[-window:])
            lam2 = float(np.exp(np.mean(np.log(w))))
            dispersion = float(w.max() - w.min())
            if dispersion < tol:
                return SpectrumEstimate(lam2, 1.0 - lam2, dispersion, it, True)
            if len(fits) >= window:
                fw = np.asarray(fits[-window:])
                if np.all(np.isfinite(fw)) and fw.max() - fw.min() < tol:
                    est = float(fw[-1])
                    return SpectrumEstimate(est, 1.0 - est, float(fw.max() - fw.min()), it, True,
                                            "recurrence")
            if len(ratios) > 4 * window:
                del ratios[: len(ratios) - window]
                del fits[: len(fits) - window]
    return SpectrumEstimate(lam2, 1.0 - lam2, dispersion, it, False)


@dataclass(eq=False)
class ModelSolution:
    """Everything derived from one (params, grid) solve."""

    params: ModelParams
    grid: TorusGrid
    A: OperatorMatrix
    B: OperatorMatrix
    forward: EigenSolution
    backward: EigenSolution
    theta_formula: ScalarField
    K: StochasticKernel
    Q: StochasticKernel = field(default=None)

    @property
    def theta(self) -> ScalarField:
        return self.K.stationary

    @property
    def lam(self) -> float:
        return self.forward.lam

    def summary(self, gap: SpectrumEstimate | None = None) -> dict:
        out = {
            "lambda": self.forward.lam,
            "Lambda": self.forward.Lambda,
            "lambda_backward": self.backward.lam,
            "residual": max(self.forward.residual, self.backward.residual),
            "iterations": self.forward.iterations + self.backward.iterations,
            "theta_l1_defect": self.K.stationary_defect(),
            "q_rowsum_defect": self.Q.row_sum_defect(),
            "k_rowsum_defect_before_renormalization": self.K.defect,
            "theta_formula_l1_discrepancy": self.K.diagnostics.get("theta_formula_l1_discrepancy"),
        }
        if gap is not None:
            out.update(lambda2_modulus=gap.lambda2_modulus, gap=gap.gap,
                       gap_window_dispersion=gap.window_dispersion, gap_converged=gap.converged)
        return out


def solve(params: ModelParams, grid: TorusGrid, cutoff_sigmas: float = DEFAULT_CUTOFF,
          tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> ModelSolution:
    """Assemble both operators, solve both eigenproblems and build K, theta and Q."""
    A = assemble_forward(params, grid, cutoff_sigmas)
    B = assemble_backward(params, grid, cutoff_sigmas)
    fwd = solve_forward(A, params, tol, max_iter)
    bwd = solve_backward(B, params, tol, max_iter)
    theta_formula = build_theta(fwd, bwd, params)
    K = build_forward_kernel(A, fwd, bwd)
    Q = build_backward_kernel(K)
    return ModelSolution(params, grid, A, B, fwd, bwd, theta_formula, K, Q)
