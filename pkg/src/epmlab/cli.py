"""Command-line entry point: ``epmlab <command> --config run.json --out DIR``.

Exit codes: 0 success, 1 usage/config error, 2 numerical non-convergence,
3 internal invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from . import __version__, _backend
from .chain import simulate
from .correlation import empirical_correlation, exact_correlation, fit_decay, write_fit_json
from .errors import (DomainError, EPMError, InsufficientDataError, InternalInvariantError,
                     NonConvergenceError, ShapeError, UsageError, ConfigurationError)
from .kernels import DEFAULT_CUTOFF, assemble_backward, assemble_forward, write_kernel_csv
from .mather import (action, competitor, entropy, holonomy_residual, measure_from_solution,
                     sweep, write_sweep_csv)
from .spectral import (DEFAULT_MAX_ITER, DEFAULT_TOL, EigenSolution, ModelSolution,
                       build_backward_kernel, build_forward_kernel, build_theta, estimate_gap,
                       solve)
from .torus import ModelParams, PotentialSpec, ScalarField, TorusGrid, trig_basis

COMMANDS = ("solve", "gap", "simulate", "correlate", "objective", "sweep", "kernel-dump")


class CLIError(Exception):
    def __init__(self, message, code=1):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    """Validated run configuration (one JSON document)."""

    m: int
    epsilon: float = 1.0
    h: float = 1.0
    n: int = 0
    P: list = field(default_factory=list)
    potential: object = "zero"
    cutoff_sigmas: float = DEFAULT_CUTOFF
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    seed: int = 0
    T: int = 100_000
    n_max: int = 60
    direction: str = "forward"
    observables: dict = field(default_factory=dict)
    trajectory_format: str = "csv"
    competitors: int = 200
    sweep: dict = field(default_factory=dict)
    fit_skip: int = 5
    output: str = "out"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise CLIError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise CLIError(f"unknown config keys: {', '.join(unknown)}")
        if "m" not in raw:
            raise CLIError("config is missing required key 'm'")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(ok, name, what):
            if not ok:
                raise CLIError(f"invalid config field '{name}': {what} (got {getattr(self, name)!r})")

        for name in ("epsilon", "h", "cutoff_sigmas", "tol"):
            v = getattr(self, name)
            need(isinstance(v, (int, float)) and math.isfinite(v) and v > 0, name, "must be a positive number")
        for name in ("m", "max_iter", "n_max", "competitors", "fit_skip"):
            v = getattr(self, name)
            need(isinstance(v, int) and v >= (0 if name in ("competitors", "fit_skip") else 1), name,
                 "must be a positive integer")
        need(isinstance(self.T, int) and self.T >= 0, "T", "must be a nonnegative integer")
        need(isinstance(self.seed, int) and self.seed >= 0, "seed", "must be a nonnegative integer")
        need(self.direction in ("forward", "backward"), "direction", "must be 'forward' or 'backward'")
        need(self.trajectory_format in ("csv", "binary", "both"), "trajectory_format",
             "must be 'csv', 'binary' or 'both'")
        P = self.P if isinstance(self.P, list) else [self.P]
        need(all(isinstance(p, (int, float)) and math.isfinite(p) for p in P), "P", "must be finite numbers")
        if not P:
            P = [0.0] * (self.n or 1)
        if not self.n:
            self.n = len(P)
        need(isinstance(self.n, int) and self.n >= 1, "n", "must be an integer >= 1")
        need(len(P) == self.n, "P", f"must have n = {self.n} entries")
        self.P = [float(p) for p in P]
        need(self.cutoff_sigmas >= 6, "cutoff_sigmas", "must be >= 6")
        self.params()  # potential spec errors surface here
        if self.h * math.sqrt(self.epsilon) < 3.0 / self.m * (1 - 1e-12):
            raise CLIError(f"invalid config field 'm': resolution rule h*sqrt(epsilon) >= 3/m fails "
                           f"(h*sqrt(epsilon) = {self.h * math.sqrt(self.epsilon):.6g}, 3/m = {3.0 / self.m:.6g})")

    def grid(self) -> TorusGrid:
        return TorusGrid(self.n, self.m)

    def _field_spec(self, spec, name) -> PotentialSpec:
        n = self.n
        if spec in ("zero", None):
            return PotentialSpec.zero(n)
        if spec == "cosine":
            return PotentialSpec.cosine(n)
        if isinstance(spec, dict):
            if "table" in spec:
                vals = np.asarray(spec["table"], dtype=float)
                if vals.size != self.m ** n:
                    raise CLIError(f"invalid config field '{name}': table needs m^n = {self.m ** n} values")
                return PotentialSpec.tabulated(ScalarField(self.grid(), vals))
            try:
                return PotentialSpec(n, tuple(spec.get("terms", ())), const=float(spec.get("const", 0.0)))
            except (TypeError, EPMError) as exc:
                raise CLIError(f"invalid config field '{name}': {exc}") from None
        raise CLIError(f"invalid config field '{name}': expected 'zero', 'cosine' or an object")

    def params(self) -> ModelParams:
        return ModelParams(self.epsilon, self.h, tuple(self.P), self._field_spec(self.potential, "potential"))

    def observable(self, which: str) -> np.ndarray:
        spec = self.observables.get(which)
        grid = self.grid()
        if spec is None:
            # default: cos + sin of the first coordinate, which overlaps both
            # the even and the odd slow modes
            x = grid.points()[:, 0]
            return np.cos(2 * np.pi * x) + np.sin(2 * np.pi * x)
        return self._field_spec(spec, f"observables.{which}").on_grid(grid).values

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.pop("output")
        return d


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_fields_csv(sol: ModelSolution, path) -> None:
    grid = sol.grid
    mi = grid.multi_indices()
    pts = grid.points()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"i{a}" for a in range(grid.n)] + [f"x{a}" for a in range(grid.n)]
                   + ["phi", "phibar", "theta"])
        for k in range(grid.size):
            w.writerow([int(c) for c in mi[k]] + [_fmt(c) for c in pts[k]]
                       + [_fmt(sol.forward.phi.values[k]), _fmt(sol.backward.phi.values[k]),
                          _fmt(sol.theta.values[k])])


def _read_fields(path, grid: TorusGrid) -> tuple:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != grid.size:
        raise CLIError(f"{path}: has {len(rows)} rows, grid has {grid.size} points")
    phi = np.array([float(r["phi"]) for r in rows])
    phibar = np.array([float(r["phibar"]) for r in rows])
    return phi, phibar


class Runner:
    def __init__(self, cfg: RunConfig, out: str, reuse: str | None = None):
        self.cfg = cfg
        self.out = out
        self.reuse = reuse
        self.written = []

    def path(self, name) -> str:
        self.written.append(name)
        return os.path.join(self.out, name)

    def model(self) -> ModelSolution:
        cfg = self.cfg
        params, grid = cfg.params(), cfg.grid()
        if self.reuse is None:
            return solve(params, grid, cfg.cutoff_sigmas, cfg.tol, cfg.max_iter)
        fpath = os.path.join(self.reuse, "fields.csv")
        spath = os.path.join(self.reuse, "summary.json")
        for p in (fpath, spath):
            if not os.path.exists(p):
                raise CLIError(f"missing upstream artifact: {p} (run 'solve' first)")
        with open(spath) as fh:
            summary = json.load(fh)
        phi, phibar = _read_fields(fpath, grid)
        A = assemble_forward(params, grid, cfg.cutoff_sigmas)
        B = assemble_backward(params, grid, cfg.cutoff_sigmas)
        eh = params.epsilon * params.h
        lam = float(summary["lambda"])
        mk = lambda direction, ph: EigenSolution(  # noqa: E731
            lam, math.exp(-lam / eh), ScalarField(grid, ph), float(summary.get("residual") or 0.0),
            0, direction, eh, cfg.tol)
        fwd, bwd = mk("forward", phi), mk("backward", phibar)
        K = build_forward_kernel(A, fwd, bwd)
        return ModelSolution(params, grid, A, B, fwd, bwd, build_theta(fwd, bwd), K, build_backward_kernel(K))

    def cmd_solve(self):
        cfg = self.cfg
        try:
            sol = self.model()
        except NonConvergenceError as exc:
            _write_json(self.path("summary.json"), {"converged": False, "residual": exc.residual,
                                                    "iterations": exc.iterations, "message": str(exc)})
            raise
        gap = estimate_gap(sol.K, tol=cfg.tol, max_iter=cfg.max_iter, seed=cfg.seed)
        summary = sol.summary(gap)
        summary["converged"] = True
        _write_json(self.path("summary.json"), summary)
        write_fields_csv(sol, self.path("fields.csv"))

    def cmd_gap(self):
        cfg = self.cfg
        sol = self.model()
        gap = estimate_gap(sol.K, tol=cfg.tol, max_iter=cfg.max_iter, seed=cfg.seed)
        data = sol.summary(gap)
        data["method"] = gap.method
        data["iterations_gap"] = gap.iterations
        _write_json(self.path("gap.json"), data)
        if not gap.converged:
            raise NonConvergenceError("gap estimator did not converge (see gap.json)")

    def _kernel(self, sol):
        return sol.K if self.cfg.direction == "forward" else sol.Q

    def cmd_simulate(self):
        cfg = self.cfg
        sol = self.model()
        kern = self._kernel(sol)
        traj = simulate(kern, sol.theta, cfg.T, cfg.seed)
        if cfg.trajectory_format in ("csv", "both"):
            traj.write_csv(self.path("trajectory.csv"))
        if cfg.trajectory_format in ("binary", "both"):
            traj.write_binary(self.path("trajectory.bin"))
        stats = {"T": cfg.T, "seed": cfg.seed, "direction": cfg.direction,
                 "occupation_tv": 0.5 * float(np.sum(np.abs(traj.occupation() - sol.theta.values)))}
        if cfg.T >= 1:
            disp = traj.displacements()
            stats["mean_displacement"] = disp.mean(axis=0).tolist()
            stats["displacement_stderr"] = (disp.std(axis=0, ddof=1) / math.sqrt(disp.shape[0])).tolist() \
                if cfg.T > 1 else None
            stats["displacement_variance"] = disp.var(axis=0).tolist()
        sigma = sol.params.sigma
        stats["sigma"] = sigma
        if sigma >= 0.15:
            stats["warning"] = "h*sqrt(epsilon) >= 0.15: minimal-image displacement statistics are biased"
            print(f"warning: {stats['warning']}", file=sys.stderr)
        _write_json(self.path("simulate.json"), stats)

    def cmd_correlate(self):
        cfg = self.cfg
        sol = self.model()
        kern = self._kernel(sol)
        f, g = cfg.observable("f"), cfg.observable("g")
        ex = exact_correlation(kern, sol.theta, f, g, cfg.n_max)
        emp = None
        if cfg.T > 0:
            traj = simulate(kern, sol.theta, cfg.T, cfg.seed)
            emp = empirical_correlation(traj, f, g, cfg.n_max, theta=sol.theta)
        from .correlation import CorrelationSeries

        series = CorrelationSeries(ex.lags, ex.exact, None if emp is None else emp.empirical,
                                   None if emp is None else emp.stderr, ex.meta)
        series.write_csv(self.path("correlation.csv"))
        gap = estimate_gap(kern, sol.theta, tol=cfg.tol, max_iter=cfg.max_iter, seed=cfg.seed)
        try:
            fit = fit_decay(ex, skip=cfg.fit_skip)
            write_fit_json(fit, self.path("fit.json"), gap.lambda2_modulus)
        except InsufficientDataError as exc:
            _write_json(self.path("fit.json"), {"error": str(exc), "lambda2_modulus_reference": gap.lambda2_modulus})

    def cmd_objective(self):
        cfg = self.cfg
        sol = self.model()
        params = sol.params
        mu = measure_from_solution(sol)
        act, ent = action(mu), entropy(mu, params)
        obj = act + params.epsilon * ent
        margins = []
        for k in range(cfg.competitors):
            comp = competitor(cfg.seed + k, sol.grid, params, sol.A)
            cact, cent = action(comp), entropy(comp, params)
            margins.append(cact + params.epsilon * cent - obj)
        report = {
            "epsilon": params.epsilon, "h": params.h, "lambda": sol.lam,
            "lambda_over_h": sol.lam / params.h, "action": act, "entropy": ent, "objective": obj,
            "identity_defect": obj - sol.lam / params.h,
            "holonomy_residuals": [holonomy_residual(mu, psi) for psi in trig_basis(sol.grid)],
            "competitors": {"count": cfg.competitors, "seed_base": cfg.seed,
                            "min_margin": min(margins) if margins else None,
                            "all_above": all(mg >= -1e-6 for mg in margins)},
        }
        _write_json(self.path("objective.json"), report)

    def cmd_sweep(self):
        cfg = self.cfg
        sw = cfg.sweep or {}
        pairs = sw.get("pairs") or [[cfg.epsilon, cfg.h]]
        rows = sweep(pairs, cfg.m, tuple(cfg.P), cfg.params().potential, cfg.cutoff_sigmas, cfg.tol,
                     cfg.max_iter, refine=bool(sw.get("refine", False)))
        write_sweep_csv(rows, self.path("sweep.csv"))

    def cmd_kernel_dump(self):
        cfg = self.cfg
        params, grid = cfg.params(), cfg.grid()
        A = (assemble_forward if cfg.direction == "forward" else assemble_backward)(params, grid, cfg.cutoff_sigmas)
        write_kernel_csv(A, self.path("kernel.csv"))

    def manifest(self, command: str, status: int):
        cfg_dict = self.cfg.to_dict()
        blob = json.dumps(_jsonable(cfg_dict), sort_keys=True).encode()
        _write_json(os.path.join(self.out, "manifest.json"), {
            "command": command,
            "config": cfg_dict,
            "config_sha256": hashlib.sha256(blob).hexdigest(),
            "seed": self.cfg.seed,
            "reuse": self.reuse,
            "exit_code": status,
            "outputs": sorted(set(self.written)),
            "versions": {"epmlab": __version__, "numpy": np.__version__,
                         "python": platform.python_version(), "backend": _backend.BACKEND},
        })


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="epmlab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", default=None, help="output directory (overrides config 'output')")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name in ("gap", "simulate", "correlate", "objective"):
            sp.add_argument("--reuse", default=None, metavar="DIR",
                            help="load phi/phibar/lambda from a previous 'solve' output directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise CLIError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise CLIError(f"config is not valid JSON: {exc}") from None
        if args.seed is not None:
            raw["seed"] = args.seed
        try:
            cfg = RunConfig.from_dict(raw)
        except (TypeError, EPMError) as exc:
            raise CLIError(f"invalid config: {exc}") from None
        if args.threads < 1:
            raise CLIError("--threads must be >= 1")
        _backend.set_threads(args.threads)
        out = args.out or cfg.output
        os.makedirs(out, exist_ok=True)
        runner = Runner(cfg, out, getattr(args, "reuse", None))
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code

    status = 0
    try:
        getattr(runner, "cmd_" + args.command.replace("-", "_"))()
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = exc.code
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        status = 2
    except InternalInvariantError as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        status = 3
    except (ConfigurationError, UsageError, ShapeError, DomainError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = 1
    except EPMError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        status = 2
    runner.manifest(args.command, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
