"""Correlation functions of the stationary chains and their exponential decay.

For a stationary chain Z with transition matrix P and invariant law theta,

    C_n = E[g(Z_0) f(Z_n)] = <g_c, P^n f_c>_theta,

with ``f_c = f - <f, 1>_theta`` (observables are always centred). Passing
the backward kernel Q gives the backward process; by adjointness this is
``<f_c, K^n g_c>_theta``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, UsageError
from .torus import as_values

N_BATCHES = 50


@dataclass(frozen=True, eq=False)
class CorrelationSeries:
    lags: np.ndarray
    exact: np.ndarray | None = None
    empirical: np.ndarray | None = None
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return self.exact if self.exact is not None else self.empirical

    def write_csv(self, path) -> None:
        cols = {"exact": self.exact, "empirical": self.empirical, "stderr": self.stderr}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lag", "exact", "empirical", "stderr"])
            for k, lag in enumerate(self.lags.tolist()):
                row = [lag]
                for name in ("exact", "empirical", "stderr"):
                    arr = cols[name]
                    row.append("" if arr is None else format(float(arr[k]), ".17g"))
                w.writerow(row)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    window: tuple
    r2: float
    oscillation: bool

    def to_json(self, lambda2_reference: float | None = None) -> dict:
        return {"rate": self.rate, "r2": self.r2, "window": list(self.window),
                "oscillation": self.oscillation, "intercept": self.intercept,
                "lambda2_modulus_reference": lambda2_reference}


def _centred(vals: np.ndarray, weights: np.ndarray | None) -> np.ndarray:
    if vals.max() == vals.min():
        return np.zeros_like(vals)
    mean = np.dot(vals, weights) if weights is not None else np.mean(vals)
    return vals - mean


def exact_correlation(kernel, theta, f, g, n_max: int) -> CorrelationSeries:
    """``C_n = <g_c, P^n f_c>_theta`` for n = 0..n_max via repeated kernel application."""
    if int(n_max) != n_max or n_max < 1:
        raise UsageError(f"n_max must be an integer >= 1, got {n_max}")
    grid = kernel.grid
    th = as_values(theta if theta is not None else kernel.stationary, grid)
    fc = _centred(as_values(f, grid), th)
    gc = _centred(as_values(g, grid), th)
    w = gc * th
    out = np.empty(n_max + 1)
    x = fc
    out[0] = np.dot(w, x)
    for n in range(1, n_max + 1):
        x = kernel.apply(x)
        out[n] = np.dot(w, x)
    norm = float(np.sqrt(np.dot(fc * fc, th) * np.dot(gc * gc, th)))
    meta = {"kernel": kernel.direction, "f_mean": float(np.dot(as_values(f, grid), th)),
            "g_mean": float(np.dot(as_values(g, grid), th)), "norm": norm}
    return CorrelationSeries(np.arange(n_max + 1), exact=out, meta=meta)


def empirical_correlation(traj, f, g, n_max: int, theta=None, n_batches: int = N_BATCHES) -> CorrelationSeries:
    """``(1/(T-n)) sum_t g_c(X_t) f_c(X_{t+n})`` with batch-means standard errors.

    Observables are centred by their theta-means when ``theta`` is given,
    otherwise by their trajectory means.
    """
    if int(n_max) != n_max or n_max < 1:
        raise UsageError(f"n_max must be an integer >= 1, got {n_max}")
    T = traj.states.size
    if T < 100 * n_max:
        raise UsageError(f"trajectory of length {T} too short for {n_max} lags (need >= {100 * n_max})")
    grid = traj.grid
    fv, gv = as_values(f, grid), as_values(g, grid)
    if theta is not None:
        th = as_values(theta, grid)
        fc, gc = _centred(fv, th), _centred(gv, th)
        fs, gs = fc[traj.states], gc[traj.states]
    else:
        fs, gs = _centred(fv[traj.states], None), _centred(gv[traj.states], None)
    est = np.empty(n_max + 1)
    err = np.empty(n_max + 1)
    for n in range(n_max + 1):
        prod = gs[: T - n] * fs[n:]
        est[n] = prod.mean()
        L = prod.size // n_batches
        bm = prod[: L * n_batches].reshape(n_batches, L).mean(axis=1)
        err[n] = bm.std(ddof=1) / np.sqrt(n_batches)
    meta = {"kernel": traj.direction, "T": int(T - 1), "n_batches": n_batches,
            "centring": "theta" if theta is not None else "sample"}
    return CorrelationSeries(np.arange(n_max + 1), empirical=est, stderr=err, meta=meta)


def fit_decay(series, floor: float = 1e-13, skip: int = 5, n_hi: int | None = None) -> DecayFit:
    """Least-squares line through ``(n, ln|C_n|)``; the decay rate is ``exp(slope)``.

    The window starts at lag ``skip`` and runs while ``|C_n| > floor``
    (up to ``n_hi``). The oscillation flag is raised when more than a quarter
    of consecutive pairs in the window change sign.
    """
    vals = np.asarray(series.values if isinstance(series, CorrelationSeries) else series, dtype=float)
    lags = np.arange(vals.size)
    hi = vals.size - 1 if n_hi is None else min(n_hi, vals.size - 1)
    end = skip
    while end <= hi and abs(vals[end]) > floor:
        end += 1
    window = np.arange(skip, end)
    if window.size < 5:
        raise InsufficientDataError(
            f"only {window.size} lags from {skip} have |C_n| > {floor}; need at least 5")
    x = lags[window].astype(float)
    y = np.log(np.abs(vals[window]))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - float(np.sum(resid ** 2)) / ss_tot)
    signs = np.sign(vals[window])
    changes = int(np.sum(signs[1:] != signs[:-1]))
    return DecayFit(rate=float(np.exp(slope)), intercept=float(intercept),
                    window=(int(window[0]), int(window[-1])), r2=min(r2, 1.0),
                    oscillation=changes > 0.25 * window.size)


def write_fit_json(fit: DecayFit, path, lambda2_reference: float | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(fit.to_json(lambda2_reference), fh, indent=2, sort_keys=True)
        fh.write("\n")
