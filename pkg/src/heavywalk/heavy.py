"""Heavy-point counting statistics.

For a walk observed up to time n and continued to a horizon N standing in for
infinity:

* ``Q(t, n)``: sites with local time exactly t at time n; ``R`` its suffix sum.
* ``U(t, n)``: sites first visited by time n whose total (time-N) local time is
  exactly t; ``V`` its suffix sum.
* ``M(t, n) = V(t, n) - R(t, n) >= 0``.

The normalizing constants are ``mu(t) = gamma (1 - gamma)^(t-1)``,
``lambda = -1/log(1 - gamma)`` and the threshold ``psi(n, B)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .green import lambda_of
from .streams import stream
from .walk import LatticePoint, LocalTimeLedger, WalkConfig, Walker, step_increments

__all__ = [
    "HeavyCounts", "ThresholdParams", "q_counts", "uv_counts", "heavy_counts", "rho",
    "mu_of_t", "lambda_of", "psi_threshold", "eta", "heavy_counts_along", "default_horizon", "Rho",
    "short_walk_q_counts",
]


def default_horizon(n: int) -> int:
    return max(4 * n, n + 10**6)


def mu_of_t(gamma: float, t: int) -> float:
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if t < 1 or int(t) != t:
        raise ValueError("t must be a positive integer")
    return gamma * (1.0 - gamma) ** (t - 1)


def psi_threshold(n: int, B: float, lam: float) -> tuple[float, int]:
    """psi(n, B) = lam log n - lam B log log n and t_n = max(1, floor(psi))."""
    if n < 16:
        raise ValueError("psi needs n >= 16")
    if not B > 2:
        raise ValueError("B must exceed 2")
    log_n = math.log(n)
    psi = lam * log_n - lam * B * math.log(log_n)
    return psi, max(1, math.floor(psi))


@dataclass(frozen=True)
class ThresholdParams:
    gamma: float
    B: float = 3.0
    epsilon: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.B > 2:
            raise ValueError("B must exceed 2")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def lam(self) -> float:
        return lambda_of(self.gamma)

    def mu(self, t: int) -> float:
        return mu_of_t(self.gamma, t)

    def t_n(self, n: int) -> int:
        return psi_threshold(n, self.B, self.lam)[1]

    def xi_lower_bound(self, n: int) -> float:
        """lam log n - (2 + epsilon) log log n."""
        return self.lam * math.log(n) - (2.0 + self.epsilon) * math.log(math.log(n))


def q_counts(ledger: LocalTimeLedger) -> np.ndarray:
    """``out[k-1] = Q(k, n)`` for k = 1 .. max local time."""
    return ledger.histogram_array()[1:]


SHORT_WALK_BLOCK = 1 << 16


def short_walk_q_counts(d: int, n: int, replicas: int, seed: int, purpose: str = "short-walks") -> np.ndarray:
    """Q(k, n) for many independent short walks, vectorized over replicas.

    Row r holds Q(1..n, n) of replica r.  Replicas come in fixed blocks of
    ``SHORT_WALK_BLOCK``; block b draws from ``stream(seed, b, purpose)``.
    """
    if d < 1 or not 1 <= n <= 64 or replicas < 1:
        raise ValueError("need d >= 1, 1 <= n <= 64 and replicas >= 1")
    base = 2 * n + 1
    if base ** d >= 2**62:
        raise ValueError("walk too long to encode sites in 64 bits")
    inc = step_increments(d)
    weights = base ** np.arange(d, dtype=np.int64)
    out = np.zeros((replicas, n), dtype=np.int64)
    for start in range(0, replicas, SHORT_WALK_BLOCK):
        stop = min(start + SHORT_WALK_BLOCK, replicas)
        codes = stream(seed, start // SHORT_WALK_BLOCK, purpose).integers(0, 2 * d, size=(stop - start, n))
        pos = np.cumsum(inc[codes], axis=1) + n
        keys = np.sort(pos @ weights, axis=1)
        # run lengths of equal keys along each sorted row
        edge = np.ones((stop - start, n + 1), dtype=bool)
        edge[:, 1:n] = keys[:, 1:] != keys[:, :-1]
        rows, cols = np.nonzero(edge)
        lengths = np.diff(cols)
        keep = np.diff(rows) == 0
        np.add.at(out, (start + rows[:-1][keep], lengths[keep] - 1), 1)
    return out


def _suffix(a: np.ndarray) -> np.ndarray:
    return np.cumsum(a[::-1])[::-1]


@dataclass(frozen=True)
class HeavyCounts:
    """Q, U, R, V, M at levels t = 1 .. t_max (array index t - 1)."""

    n: int
    N: int
    d: int
    Q: np.ndarray = field(repr=False)
    U: np.ndarray = field(repr=False)
    R: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)
    M: np.ndarray = field(repr=False)
    xi: int = 0
    eta: int = 0

    @property
    def t_max(self) -> int:
        return len(self.Q)

    @property
    def levels(self) -> np.ndarray:
        return np.arange(1, self.t_max + 1)

    @property
    def proxy_exponent(self) -> float:
        """Per-site chance that the horizon misjudges a total count is O((N - n) ** exponent)."""
        return 1.0 - self.d / 2.0

    def invariant_violations(self) -> list[str]:
        out = []
        t = self.levels
        if not np.array_equal(self.R, _suffix(self.Q)):
            out.append("R is not the suffix sum of Q")
        if not np.array_equal(self.V, _suffix(self.U)):
            out.append("V is not the suffix sum of U")
        if not np.array_equal(self.M, self.V - self.R):
            out.append("M != V - R")
        if np.any(self.M < 0) or np.any(self.R > self.V):
            out.append("M is negative somewhere")
        if int(np.sum(t * self.Q)) != self.n:
            out.append("sum_t t Q(t, n) != n")
        if self.R[0] != self.V[0]:
            out.append("R(1, n) != V(1, n)")
        return out

    def ratios(self, gamma: float) -> dict[str, np.ndarray]:
        """The four normalized families, indexed like the level arrays."""
        mu = np.array([mu_of_t(gamma, int(t)) for t in self.levels])
        scale = self.n * mu
        return {
            "Q": self.Q / (gamma * scale),
            "U": self.U / (gamma * scale),
            "R": self.R / scale,
            "V": self.V / scale,
        }

    def rows(self, gamma: float | None = None) -> list[dict]:
        ratios = self.ratios(gamma) if gamma is not None else None
        out = []
        for i, t in enumerate(self.levels):
            row = {"n": self.n, "N": self.N, "N_minus_n": self.N - self.n,
                   "proxy_exponent": self.proxy_exponent, "t": int(t), "Q": int(self.Q[i]),
                   "U": int(self.U[i]), "R": int(self.R[i]), "V": int(self.V[i]), "M": int(self.M[i])}
            if ratios is not None:
                for k, v in ratios.items():
                    row[f"{k}_ratio"] = float(v[i])
            out.append(row)
        return out


def heavy_counts(hist_at_n: np.ndarray, first: np.ndarray, totals: np.ndarray, n: int, N: int,
                 d: int, t_floor: int = 1) -> HeavyCounts:
    """Assemble HeavyCounts from the histogram at time n and per-site (first visit, total count)."""
    early = totals[first <= n]
    eta_n = int(early.max()) if early.size else 0
    xi_n = len(hist_at_n) - 1
    t_max = max(t_floor, eta_n, xi_n, 1)
    Q = np.zeros(t_max, dtype=np.int64)
    Q[: xi_n] = hist_at_n[1:]
    U = np.bincount(early, minlength=t_max + 1)[1:].astype(np.int64)
    R, V = _suffix(Q), _suffix(U)
    return HeavyCounts(n, N, d, Q, U, R, V, V - R, xi_n, eta_n)


def _walk_to_horizon(d: int, n: int, N: int, seed: int, replica: int = 0, purpose: str = "walk"):
    if N < n:
        raise ValueError(f"horizon N = {N} must be at least n = {n}")
    walker = Walker(WalkConfig(d, n, seed, horizon=N, replica=replica, purpose=purpose))
    ledger = walker.advance(n)
    hist_n = ledger.histogram_array()
    walker.advance(N - n)
    _, totals, first = ledger.site_arrays()
    return hist_n, first, totals


def uv_counts(d: int, n: int, N: int | None, seed: int, *, B: float = 3.0, lam: float | None = None,
              replica: int = 0, purpose: str = "walk") -> HeavyCounts:
    """Run one walk to N and compute all counting statistics at time n.

    Levels are tracked up to ``max(t_n + 5, eta(n))`` when ``lam`` is given
    and n >= 16, otherwise up to ``eta(n)``.
    """
    N = default_horizon(n) if N is None else N
    hist_n, first, totals = _walk_to_horizon(d, n, N, seed, replica, purpose)
    floor = psi_threshold(n, B, lam)[1] + 5 if (lam is not None and n >= 16) else 1
    return heavy_counts(hist_n, first, totals, n, N, d, floor)


def heavy_counts_along(d: int, ns, N: int, seed: int, replica: int = 0,
                       purpose: str = "walk") -> list[HeavyCounts]:
    """HeavyCounts at several times n <= N of a single walk (shared horizon)."""
    ns = sorted(ns)
    if N < ns[-1]:
        raise ValueError("horizon must cover every n")
    walker = Walker(WalkConfig(d, ns[-1], seed, horizon=N, replica=replica, purpose=purpose))
    snapshots = []
    for n in ns:
        snapshots.append(walker.advance(n - walker.time).histogram_array())
    walker.advance(N - walker.time)
    _, totals, first = walker.ledger.site_arrays()
    return [heavy_counts(h, first, totals, n, N, d) for h, n in zip(snapshots, ns)]


def eta(d: int, n: int, N: int, seed: int, replica: int = 0, purpose: str = "walk") -> int:
    """max over k <= n of xi(S_k, N), the horizon-N stand-in for eta(n)."""
    hist_n, first, totals = _walk_to_horizon(d, n, N, seed, replica, purpose)
    early = totals[first <= n]
    return int(early.max()) if early.size else 0


class Rho(NamedTuple):
    """``value`` is rho_i(t) when ``status == "ok"``; otherwise None."""

    value: int | None
    status: str  # "ok" | "not-new" | "censored"


def rho(d: int, i: int, t: int, horizon: int, seed: int, replica: int = 0,
        purpose: str = "walk") -> Rho:
    """Waiting time from i until S_i has been visited t times, gated on S_i being new at i."""
    if not 1 <= i <= horizon or t < 1:
        raise ValueError("need 1 <= i <= horizon and t >= 1")
    walker = Walker(WalkConfig(d, i, seed, horizon=horizon, replica=replica, purpose=purpose))
    walker.advance(i - 1)
    pos, cnt = walker.advance_captured(1)
    if cnt[0] != 1:
        return Rho(None, "not-new")
    if t == 1:
        return Rho(0, "ok")
    site = LatticePoint(pos[0])
    target = np.asarray(site)
    chunk = 1 << 16
    while walker.time < horizon:
        start = walker.time
        pos, cnt = walker.advance_captured(min(chunk, horizon - start))
        hit = np.nonzero(np.all(pos == target, axis=1) & (cnt >= t))[0]
        if hit.size:
            return Rho(int(start + hit[0] + 1 - i), "ok")
    return Rho(None, "censored")
