"""Replica ensembles and convergence tables for the heavy-point limit laws.

Work is split into independent (n, replica) tasks.  Replica r always walks the
stream ``(seed, r, "walk")``, so the walk for a smaller n is a prefix of the
walk for a larger one, and results never depend on the worker count.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .green import lambda_of, reference_gamma
from .heavy import HeavyCounts, ThresholdParams, _walk_to_horizon, heavy_counts, mu_of_t, psi_threshold
from .parallel import ordered_map

KINDS = ("slln", "limits", "gamma", "identities", "oracle", "variance")
FAMILIES = ("Q", "U", "R", "V")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "slln"
    d: int = 3
    grid: tuple[int, ...] = (10**4, 10**5, 10**6)
    replicas: int = 20
    seed: int = 0
    B: float = 3.0
    epsilon: float = 1.0
    c: float = 4.0
    out: str | None = None
    fmt: str = "csv"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(n) for n in self.grid))
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("the n-grid must be strictly increasing")
        if not self.grid or self.grid[0] < 1:
            raise ValueError("the n-grid must hold positive step counts")
        if not self.B > 2:
            raise ValueError("B must exceed 2")
        if self.c < 1:
            raise ValueError("horizon factor c must be >= 1")
        if self.replicas < 1 or self.workers < 1:
            raise ValueError("replicas and workers must be >= 1")
        if self.fmt not in ("csv", "json"):
            raise ValueError("format must be csv or json")

    def horizon(self, n: int) -> int:
        return max(n, int(math.ceil(self.c * n)))

    def manifest(self) -> dict:
        """Everything that determines the results (the worker count does not)."""
        cfg = asdict(self)
        cfg.pop("workers")
        cfg.pop("out")
        cfg["grid"] = list(self.grid)
        return cfg


def _check_grid(config: ExperimentConfig) -> None:
    if config.grid[0] < 16:
        raise ValueError("psi(n, B) is undefined for n < 16")


def _task_counts(config: ExperimentConfig, params: ThresholdParams, n: int, replica: int) -> HeavyCounts:
    hist_n, first, totals = _walk_to_horizon(config.d, n, config.horizon(n), config.seed, replica)
    return heavy_counts(hist_n, first, totals, n, config.horizon(n), config.d, params.t_n(n) + 5)


@dataclass
class ConvergenceTable:
    """Per-replica normalized ratios, their sup-deviations over t <= t_n, and aggregates."""

    constants: dict
    rows: list[dict] = field(default_factory=list)
    sups: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)

    def median_sup(self, family: str) -> dict[int, float]:
        out = {}
        for n in sorted({r["n"] for r in self.sups}):
            out[n] = statistics.median(r[f"sup_{family}"] for r in self.sups if r["n"] == n)
        return out

    def tables(self) -> dict[str, list[dict]]:
        return {"replicas": self.rows, "sup": self.sups, "summary": self.summary}


def run_slln(config: ExperimentConfig, gamma: float | None = None) -> ConvergenceTable:
    """Uniform strong-law check: sup over t <= t_n of |ratio - 1| for Q, U, R, V."""
    _check_grid(config)
    gamma = reference_gamma(config.d) if gamma is None else gamma
    params = ThresholdParams(gamma, config.B, config.epsilon)
    tasks = [(n, r) for n in config.grid for r in range(config.replicas)]
    counts = ordered_map(lambda task: _task_counts(config, params, *task), tasks, config.workers)

    table = ConvergenceTable(constants={"gamma": gamma, "lambda": params.lam, "B": config.B})
    for (n, r), hc in zip(tasks, counts):
        t_n = params.t_n(n)
        ratios = hc.ratios(gamma)
        for i, t in enumerate(hc.levels):
            row = {"n": n, "N": hc.N, "replica": r, "t": int(t), "t_n": t_n, "in_sup": int(t <= t_n),
                   "mu": mu_of_t(gamma, int(t)), "Q": int(hc.Q[i]), "U": int(hc.U[i]),
                   "R": int(hc.R[i]), "V": int(hc.V[i]), "M": int(hc.M[i])}
            for f in FAMILIES:
                row[f"{f}_ratio"] = float(ratios[f][i])
            table.rows.append(row)
        sup = {"n": n, "replica": r, "t_n": t_n}
        for f in FAMILIES:
            sup[f"sup_{f}"] = float(np.max(np.abs(ratios[f][:t_n] - 1.0)))
        table.sups.append(sup)

    for n in config.grid:
        t_n = params.t_n(n)
        for t in range(1, t_n + 1):
            sel = [row for row in table.rows if row["n"] == n and row["t"] == t]
            entry = {"n": n, "t": t, "t_n": t_n}
            for f in FAMILIES:
                vals = [row[f"{f}_ratio"] for row in sel]
                entry[f"{f}_mean"] = float(np.mean(vals))
                entry[f"{f}_min"] = float(np.min(vals))
                entry[f"{f}_max"] = float(np.max(vals))
            for f in FAMILIES:
                entry[f"median_sup_{f}"] = table.median_sup(f)[n]
            table.summary.append(entry)
    return table


def run_limits(config: ExperimentConfig, gamma: float | None = None) -> dict[str, list[dict]]:
    """xi(n)/log n, eta(n)/log n and the lower-bound indicator per replica."""
    gamma = reference_gamma(config.d) if gamma is None else gamma
    params = ThresholdParams(gamma, config.B, config.epsilon)
    tasks = [(n, r) for n in config.grid for r in range(config.replicas)]

    def one(task):
        n, r = task
        hist_n, first, totals = _walk_to_horizon(config.d, n, config.horizon(n), config.seed, r)
        early = totals[first <= n]
        return len(hist_n) - 1, int(early.max())

    results = ordered_map(one, tasks, config.workers)
    rows = []
    for (n, r), (xi, eta) in zip(tasks, results):
        bound = params.xi_lower_bound(n)
        rows.append({
            "n": n, "N": config.horizon(n), "replica": r, "xi": xi, "eta": eta,
            "xi_over_log_n": xi / math.log(n), "eta_over_log_n": eta / math.log(n),
            "lower_bound": bound, "bound_holds": int(xi >= bound),
            "in_band": int(0.4 <= xi / math.log(n) <= 1.6),
        })
    summary = []
    for n in config.grid:
        sel = [row for row in rows if row["n"] == n]
        summary.append({
            "n": n, "lambda": params.lam,
            "bound_pass_rate": sum(r["bound_holds"] for r in sel) / len(sel),
            "band_pass_rate": sum(r["in_band"] for r in sel) / len(sel),
            "eta_dominates_rate": sum(r["eta"] >= r["xi"] for r in sel) / len(sel),
            "median_xi_over_log_n": statistics.median(r["xi_over_log_n"] for r in sel),
            "median_eta_over_log_n": statistics.median(r["eta_over_log_n"] for r in sel),
        })
    return {"replicas": rows, "summary": summary}


MIN_VARIANCE_REPLICAS = 30


def variance_bound(n: int, mu: float) -> float:
    return n * mu + mu * mu * n ** 1.8


def run_variance(config: ExperimentConfig, gamma: float | None = None,
                 levels: tuple[int, ...] | None = None) -> list[dict]:
    """Across-replica variance of V(t, n) against the shape n mu + mu^2 n^1.8.

    The per-row ``constant`` is variance / shape; levels above t_n are skipped.
    """
    _check_grid(config)
    if config.replicas < MIN_VARIANCE_REPLICAS:
        raise ValueError(f"variance diagnostic needs at least {MIN_VARIANCE_REPLICAS} replicas")
    gamma = reference_gamma(config.d) if gamma is None else gamma
    params = ThresholdParams(gamma, config.B, config.epsilon)
    tasks = [(n, r) for n in config.grid for r in range(config.replicas)]
    counts = ordered_map(lambda task: _task_counts(config, params, *task), tasks, config.workers)
    by_n: dict[int, list[HeavyCounts]] = {}
    for (n, _), hc in zip(tasks, counts):
        by_n.setdefault(n, []).append(hc)
    rows = []
    for n in config.grid:
        t_n = params.t_n(n)
        wanted = range(1, t_n + 1) if levels is None else [t for t in levels if t <= t_n]
        for t in wanted:
            v = np.array([hc.V[t - 1] for hc in by_n[n]], dtype=float)
            mu = mu_of_t(gamma, t)
            var = float(np.var(v, ddof=1))
            bound = variance_bound(n, mu)
            rows.append({"d": config.d, "n": n, "t": t, "t_n": t_n, "mean_V": float(v.mean()),
                         "var_V": var, "var_V_over_n": float(np.var(v / n, ddof=1)),
                         "bound": bound, "constant": var / bound})
    return rows


def constant_spread(rows: list[dict], t: int) -> float:
    """max/min of the fitted constant across the grid at level t."""
    c = [r["constant"] for r in rows if r["t"] == t]
    return max(c) / min(c)


def manifest(config: ExperimentConfig, extra: dict | None = None) -> dict:
    gamma = reference_gamma(config.d)
    out = {
        "code_version": __version__,
        "command": config.kind,
        "config": config.manifest(),
        "seeds": {"master": config.seed,
                  "derivation": "Philox key=(seed, blake2b-64(purpose)), counter=(0, 0, replica, 0)"},
        "oracle": {"gamma": gamma, "lambda": lambda_of(gamma)},
    }
    if extra:
        out.update(extra)
    return out


def t_n_for(config: ExperimentConfig, gamma: float) -> dict[int, int]:
    lam = lambda_of(gamma)
    return {n: psi_threshold(n, config.B, lam)[1] for n in config.grid}
