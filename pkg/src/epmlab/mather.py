"""Action, entropy and objective of discrete holonomic measures.

A discrete measure puts mass ``mu_ij = theta_i K[i, j]`` on moving from cell
i to cell j. Inside a cell pair the mass is spread over the periodic images
k with the operator's Gibbs weights ``exp(-L_k / eps)``; the per-entry mean
Lagrangian and log-density below follow from that convention, for the
solved measure and for competitors alike. With it, the log-density of an
entry is ``ln K_ij - ln A_ij - meanL_ij / eps`` and the objective of the
solved measure equals ``lam / h`` up to rounding.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import ConfigurationError, EPMError, NumericError, UsageError
from .kernels import DEFAULT_CUTOFF, OperatorMatrix, assemble_forward
from .spectral import (DEFAULT_MAX_ITER, DEFAULT_TOL, StochasticKernel, estimate_gap, solve,
                       stationary_vector)
from .torus import ModelParams, PotentialSpec, ScalarField, TorusGrid, as_values


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    theta: ScalarField
    kernel: StochasticKernel
    operator: OperatorMatrix

    @property
    def params(self) -> ModelParams:
        return self.operator.params

    @property
    def mean_L(self) -> np.ndarray:
        return self.operator.mean_L

    @property
    def joint(self) -> np.ndarray:
        """``mu_ij = theta_i K[i, j]``."""
        return self.theta.values[:, None] * self.kernel.matrix

    def support(self) -> np.ndarray:
        return self.joint > 0


def measure_from_solution(sol) -> DiscreteMeasure:
    """The entropy-penalized measure of a :class:`~epmlab.spectral.ModelSolution`."""
    return DiscreteMeasure(sol.K.stationary, sol.K, sol.A)


def _support_values(mu: DiscreteMeasure, arr: np.ndarray, what: str) -> tuple:
    joint = mu.joint
    supp = joint > 0
    vals = arr[supp]
    if not np.all(np.isfinite(vals)):
        raise NumericError(f"{what} undefined on part of the measure's support "
                           "(mass on a cell pair the operator gives zero weight)")
    return joint[supp], vals


def action(mu: DiscreteMeasure) -> float:
    """``sum_ij mu_ij meanL_ij``."""
    if mu.operator is None or mu.operator.mean_L is None:
        raise UsageError("measure carries no mean-Lagrangian metadata")
    w, L = _support_values(mu, mu.mean_L, "mean Lagrangian")
    return float(np.dot(w, L))


def log_density(mu: DiscreteMeasure, params: ModelParams | None = None) -> np.ndarray:
    """Velocity-space log-density of each entry.

    ``ln(K_ij N h^n)`` plus the lumping correction
    ``-meanL_ij / eps - ln(N h^n A_ij)``.
    """
    params = params or mu.params
    with np.errstate(divide="ignore", invalid="ignore"):
        lnK = np.log(mu.kernel.matrix)
        return lnK - mu.operator.log_entries - mu.operator.mean_L / params.epsilon


def entropy(mu: DiscreteMeasure, params: ModelParams | None = None) -> float:
    """``sum_ij mu_ij ln gamma_ij``: the conditional entropy of velocity given position."""
    w, lg = _support_values(mu, log_density(mu, params), "log-density")
    return float(np.dot(w, lg))


def objective(mu: DiscreteMeasure, params: ModelParams | None = None) -> float:
    params = params or mu.params
    return action(mu) + params.epsilon * entropy(mu, params)


def holonomy_residual(mu: DiscreteMeasure, psi, h: float | None = None) -> float:
    """``|sum_ij mu_ij (psi_j - psi_i)| / h``."""
    h = mu.params.h if h is None else h
    pv = as_values(psi, mu.theta.grid)
    th = mu.theta.values
    if pv.max() == pv.min():
        return 0.0
    return abs(float(np.dot(th, mu.kernel.apply(pv)) - np.dot(th, pv))) / h


def _is_irreducible(P: np.ndarray) -> bool:
    ncomp, _ = connected_components(P > 0, directed=True, connection="strong")
    return ncomp == 1


def competitor(spec, grid: TorusGrid, params: ModelParams, operator: OperatorMatrix | None = None,
               cutoff_sigmas: float = DEFAULT_CUTOFF, width: int = 1) -> DiscreteMeasure:
    """A holonomic competitor ``theta' K'`` with ``theta'`` stationary for ``K'``.

    ``spec`` is an integer seed (Dirichlet(1, ..., 1) rows), ``"uniform"``
    (every row uniform over the grid), ``"uniform-step"`` (uniform over the
    ``2 width + 1`` neighbouring cells along each axis), or a
    :class:`StochasticKernel` / array to use as is.
    """
    N = grid.size
    if isinstance(spec, StochasticKernel):
        P = spec.matrix
    elif isinstance(spec, str):
        if spec == "uniform":
            P = np.full((N, N), 1.0 / N)
        elif spec == "uniform-step":
            mi = grid.multi_indices()
            P = np.zeros((N, N))
            offsets = np.array(np.meshgrid(*[np.arange(-width, width + 1)] * grid.n,
                                           indexing="ij")).reshape(grid.n, -1).T
            for off in offsets:
                j = grid.to_flat((mi + off) % grid.m)
                P[np.arange(N), j] += 1.0
            P /= P.sum(axis=1, keepdims=True)
        else:
            raise ConfigurationError(f"unknown competitor kind {spec!r}")
    elif isinstance(spec, (int, np.integer)):
        rng = np.random.default_rng(int(spec))
        P = rng.dirichlet(np.ones(N), size=N)
    else:
        P = np.asarray(spec, dtype=float)
    if P.shape != (N, N):
        raise ConfigurationError(f"competitor kernel must be {N} x {N}")
    P = P / P.sum(axis=1, keepdims=True)
    if not _is_irreducible(P):
        raise ConfigurationError("competitor kernel is reducible: stationary law not unique")
    # the lazy chain (I + P) / 2 has the same stationary law and is aperiodic
    lazy = StochasticKernel(grid, 0.5 * (P + np.eye(N)))
    th = stationary_vector(lazy, tol=1e-15)
    K = StochasticKernel(grid, P, "competitor", th)
    A = operator if operator is not None else assemble_forward(params, grid, cutoff_sigmas)
    return DiscreteMeasure(th, K, A)


@dataclass
class SweepRow:
    epsilon: float
    h: float
    lam: float = float("nan")
    lambda_over_h: float = float("nan")
    gap: float = float("nan")
    theta_argmax_x: tuple = ()
    action: float = float("nan")
    entropy: float = float("nan")
    objective: float = float("nan")
    m: int = 0
    status: str = "ok"

    CSV_COLUMNS = ("epsilon", "h", "lambda", "lambda_over_h", "gap", "action", "entropy",
                   "objective", "theta_argmax_x", "m", "status")

    def csv_row(self) -> list:
        f = lambda x: format(float(x), ".17g")  # noqa: E731
        return [f(self.epsilon), f(self.h), f(self.lam), f(self.lambda_over_h), f(self.gap),
                f(self.action), f(self.entropy), f(self.objective),
                ";".join(f(c) for c in self.theta_argmax_x), self.m, self.status]


def _resolved_m(params: ModelParams, m: int, refine: bool) -> int:
    if not refine:
        return m
    while params.sigma < 3.0 / m * (1 - 1e-12):
        m *= 2
    return m


def sweep(pairs, m: int, P=(0.0,), potential: PotentialSpec | None = None,
          cutoff_sigmas: float = DEFAULT_CUTOFF, tol: float = DEFAULT_TOL,
          max_iter: int = DEFAULT_MAX_ITER, refine: bool = False) -> list:
    """Solve each ``(epsilon, h)`` configuration and tabulate the results.

    Rows that fail (under-resolution, non-convergence) are kept with their
    error in ``status``. With ``refine=True`` the grid is doubled per row
    until ``h sqrt(eps) >= 3 / m`` holds.
    """
    rows = []
    for eps, h in pairs:
        row = SweepRow(float(eps), float(h))
        try:
            params = ModelParams(eps, h, P, potential)
            mm = _resolved_m(params, m, refine)
            row.m = mm
            grid = TorusGrid(params.n, mm)
            params.check_resolution(grid)
            sol = solve(params, grid, cutoff_sigmas, tol, max_iter)
            mu = measure_from_solution(sol)
            gp = estimate_gap(sol.K, tol=tol, max_iter=max_iter)
            row.lam = sol.lam
            row.lambda_over_h = sol.lam / h
            row.gap = gp.gap
            row.theta_argmax_x = tuple(grid.points()[int(np.argmax(sol.theta.values))])
            row.action = action(mu)
            row.entropy = entropy(mu, params)
            row.objective = row.action + params.epsilon * row.entropy
            if not gp.converged:
                row.status = "gap-not-converged"
        except EPMError as exc:
            row.status = f"error: {exc}"
        rows.append(row)
    return rows


def write_sweep_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SweepRow.CSV_COLUMNS)
        for r in rows:
            w.writerow(r.csv_row())


def sweep_row_dict(row: SweepRow) -> dict:
    d = asdict(row)
    d["lambda"] = d.pop("lam")
    d["theta_argmax_x"] = list(row.theta_argmax_x)
    return d
