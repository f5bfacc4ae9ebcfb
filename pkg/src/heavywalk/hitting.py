"""Monte Carlo return, escape and hitting probabilities for the origin and
two-point sets {0, x}, plus the exact identities linking them.

"Infinite time" is always a finite censoring horizon.  Each replica stops as
soon as its outcome is decided, and long stretches far from every target are
crossed in one exactly sampled jump (see ``_kernels.excursion``), so the
estimand is exactly the truncated probability at the stated horizon.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels
from .green import gamma_x_exact, qs_exact, reference_gamma, reference_table
from .parallel import ordered_map
from .streams import check_seed, stream
from .walk import LatticePoint

BLOCK = 4096
MIN_INFINITE_HORIZON = 100


class Outcome(enum.IntEnum):
    RETURNED_FIRST = 0
    HIT_TARGET_FIRST = 1
    CENSORED = 2


@dataclass(frozen=True)
class HittingOutcome:
    kind: Outcome
    time: int
    target: LatticePoint


@dataclass
class ExcursionBatch:
    """Raw per-replica results: first hitting times (-1 if none), visit counts, stop times."""

    targets: np.ndarray
    horizon: int
    first_hit: np.ndarray
    visits: np.ndarray
    end: np.ndarray

    @property
    def replicas(self) -> int:
        return self.end.shape[0]


def run_excursions(d: int, targets, stop_on, horizon: int, replicas: int, seed: int,
                   purpose: str, workers: int = 1) -> ExcursionBatch:
    """One excursion per replica.

    Replicas are grouped in fixed blocks of ``BLOCK``; block b draws, in replica
    order, from ``stream(seed, b, purpose)``.  Block boundaries do not depend on
    the worker count, so neither do the results.
    """
    if d < 1 or replicas < 1 or horizon < 0:
        raise ValueError("need d >= 1, replicas >= 1, horizon >= 0")
    check_seed(seed)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1, d)
    stop_on = np.asarray(stop_on, dtype=np.bool_)
    k = targets.shape[0]

    def block(start):
        stop = min(start + BLOCK, replicas)
        first = np.empty((stop - start, k), dtype=np.int64)
        visits = np.empty((stop - start, k), dtype=np.int64)
        end = np.empty(stop - start, dtype=np.int64)
        rng = stream(seed, start // BLOCK, purpose)
        _kernels.excursion_batch(rng, targets, stop_on, horizon, first, visits, end)
        return first, visits, end

    parts = ordered_map(block, range(0, replicas, BLOCK), workers)
    return ExcursionBatch(
        targets, horizon,
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
    )


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def wilson_interval(p: float, n: int, z: float = 1.96) -> tuple[float, float]:
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return centre - half, centre + half


@dataclass
class EscapeEstimate:
    quantity: str
    d: int
    value: float
    replicas: int
    horizon: int
    std_error: float
    censored_fraction: float
    x: tuple = ()

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0 or self.std_error < 0:
            raise ValueError("invalid estimate")

    @property
    def bias_bound_exponent(self) -> float:
        """Truncation bias is O(horizon ** exponent)."""
        return 1.0 - self.d / 2.0

    def row(self) -> dict:
        return {
            "quantity": self.quantity, "d": self.d, "x": " ".join(map(str, self.x)),
            "horizon": self.horizon, "replicas": self.replicas, "value": self.value,
            "std_error": self.std_error, "censored_fraction": self.censored_fraction,
        }


def _origin(d):
    return np.zeros((1, d), dtype=np.int64)


def first_return_times(d: int, horizon: int, replicas: int, seed: int,
                       workers: int = 1) -> np.ndarray:
    """First return time T to the origin per replica; -1 when T > horizon."""
    batch = run_excursions(d, _origin(d), [True], horizon, replicas, seed, "return", workers)
    return batch.first_hit[:, 0]


def gamma_curve(times: np.ndarray, ns) -> np.ndarray:
    """gamma_hat(n) for each n from one set of return times (coupled, hence monotone)."""
    t = np.where(times < 0, np.iinfo(np.int64).max, times)
    return np.array([np.mean(t >= n) for n in ns])


def _check_d(d):
    if d < 3:
        raise ValueError("the hitting laboratory requires d >= 3")


def gamma_n(d: int, n: int, replicas: int, seed: int, workers: int = 1) -> EscapeEstimate:
    """Estimate gamma(n) = P(no return to 0 during steps 1..n-1)."""
    _check_d(d)
    if n < 1 or replicas < 1:
        raise ValueError("need n >= 1 and replicas >= 1")
    times = first_return_times(d, n - 1, replicas, seed, workers)
    p = float(np.mean(times < 0))
    return EscapeEstimate("gamma_n", d, p, replicas, n, _binomial_se(p, replicas), p)


def gamma_infinity(d: int, horizon: int, replicas: int, seed: int, workers: int = 1) -> EscapeEstimate:
    """Escape probability censored at ``horizon``; biased upwards by O(horizon^(1-d/2))."""
    _check_d(d)
    if horizon < MIN_INFINITE_HORIZON:
        raise ValueError(f"horizon {horizon} < {MIN_INFINITE_HORIZON} is meaninglessly biased")
    times = first_return_times(d, horizon, replicas, seed, workers)
    p = float(np.mean(times < 0))
    return EscapeEstimate("gamma", d, p, replicas, horizon, _binomial_se(p, replicas), p)


def _target(d, x) -> LatticePoint:
    x = LatticePoint(x)
    if x.dim != d:
        raise ValueError(f"target {x} is not a point of Z^{d}")
    if x.l1() == 0:
        raise ValueError("target x must differ from the origin")
    return x


def gamma_x(d: int, x, horizon: int, replicas: int, seed: int, workers: int = 1) -> EscapeEstimate:
    """Estimate gamma_x = P(T_x = inf), censored at ``horizon``."""
    _check_d(d)
    x = _target(d, x)
    batch = run_excursions(d, [x], [True], horizon, replicas, seed, f"avoid:{tuple(x)}", workers)
    p = float(np.mean(batch.first_hit[:, 0] < 0))
    return EscapeEstimate("gamma_x", d, p, replicas, horizon, _binomial_se(p, replicas), p, tuple(x))


# -- occupation laws ----------------------------------------------------------

@dataclass
class ChiSquare:
    statistic: float
    dof: int
    p_value: float
    bins: int


def pooled_chi_square(observed: np.ndarray, probs: np.ndarray, total: int,
                      min_expected: float = 5.0) -> ChiSquare:
    """Pearson test; the last entry of ``observed``/``probs`` is the tail bin.

    Leading bins are kept while their expected count is at least
    ``min_expected``; everything after is pooled into the tail.
    """
    observed = np.asarray(observed, dtype=float)
    probs = np.asarray(probs, dtype=float)
    expected = probs * total
    obs_bins, exp_bins = [], []
    i = 0
    while i < len(expected) - 1 and expected[i] >= min_expected:
        obs_bins.append(observed[i])
        exp_bins.append(expected[i])
        i += 1
    tail_obs, tail_exp = observed[i:].sum(), expected[i:].sum()
    if tail_exp >= min_expected or not obs_bins:
        obs_bins.append(tail_obs)
        exp_bins.append(tail_exp)
    else:
        obs_bins[-1] += tail_obs
        exp_bins[-1] += tail_exp
    o, e = np.array(obs_bins), np.array(exp_bins)
    stat = float(np.sum((o - e) ** 2 / e))
    dof = len(o) - 1
    p = float(stats.chi2.sf(stat, dof)) if dof > 0 else 1.0
    return ChiSquare(stat, dof, p, len(o))


@dataclass
class GeometricFit:
    ratio: float
    chi_square: ChiSquare
    slope: float
    r_squared: float


@dataclass
class OccupationHistogram:
    """Counts per occupation value j = 0, 1, ...; censored replicas are kept apart."""

    counts: np.ndarray
    replicas: int
    censored: int = 0
    label: str = ""
    fit: GeometricFit | None = field(default=None)

    def __post_init__(self):
        if int(self.counts.sum()) + self.censored != self.replicas:
            raise ValueError("counts and censoring must add up to the replica count")

    def masses(self) -> np.ndarray:
        return self.counts / self.replicas

    def fit_geometric(self, ratio: float, min_count: int = 100) -> GeometricFit:
        """Compare with P(j) = (1 - ratio) ratio^j.

        Also regresses log mass on j over bins with at least ``min_count``
        observations; the slope should match log(ratio).
        """
        if not 0.0 < ratio < 1.0:
            raise ValueError("ratio must lie in (0, 1)")
        j = np.arange(len(self.counts))
        probs = (1.0 - ratio) * ratio ** j
        tail = ratio ** len(self.counts)
        chi = pooled_chi_square(np.append(self.counts, 0), np.append(probs, tail), self.replicas)
        keep = self.counts >= min_count
        slope, r2 = float("nan"), float("nan")
        if keep.sum() >= 2:
            y = np.log(self.masses()[keep])
            res = stats.linregress(j[keep], y)
            slope, r2 = float(res.slope), float(res.rvalue ** 2)
        self.fit = GeometricFit(ratio, chi, slope, r2)
        return self.fit


def _histogram(values: np.ndarray, replicas: int, censored: int, label: str) -> OccupationHistogram:
    counts = np.bincount(values, minlength=1).astype(np.int64)
    return OccupationHistogram(counts, replicas, censored, label)


def total_local_time_law(d: int, horizon: int, replicas: int, seed: int,
                         gamma: float | None = None, workers: int = 1) -> OccupationHistogram:
    """Law of xi(0, horizon), a censored stand-in for xi(0, inf) ~ geometric with ratio 1 - gamma."""
    _check_d(d)
    batch = run_excursions(d, _origin(d), [False], horizon, replicas, seed, "origin-visits", workers)
    hist = _histogram(batch.visits[:, 0], replicas, 0, "xi(0,inf)")
    gamma = reference_gamma(d) if gamma is None else gamma
    hist.fit_geometric(1.0 - gamma)
    return hist


def oracle_qs(d: int, x) -> tuple[float, float, float, float]:
    """(gamma, gamma_x, q_x, s_x) from the Green's-function oracle."""
    table = reference_table(d)
    g = 1.0 / table.g0
    gx = gamma_x_exact(table, x)
    q, s = qs_exact(g, gx)
    return g, gx, q, s


def two_point_occupation(d: int, x, horizon: int, replicas: int, seed: int,
                         ratio: float | None = None, workers: int = 1) -> OccupationHistogram:
    """Law of xi(0, horizon) + xi(x, horizon), compared with geometric(q_x + s_x)."""
    _check_d(d)
    x = _target(d, x)
    batch = run_excursions(d, [LatticePoint.origin(d), x], [False, False], horizon, replicas, seed,
                           f"pair-visits:{tuple(x)}", workers)
    hist = _histogram(batch.visits.sum(axis=1), replicas, 0, f"Xi(A^{tuple(x)},inf)")
    if ratio is None:
        _, _, q, s = oracle_qs(d, x)
        ratio = q + s
    hist.fit_geometric(ratio)
    return hist


def z_law(d: int, x, horizon: int, replicas: int, seed: int, workers: int = 1) -> OccupationHistogram:
    """Visits to {0, x} up to and including the first return to 0, on {T <= horizon}.

    ``counts[j]`` counts replicas with Z = j; replicas that have not returned by
    the horizon are censored.
    """
    _check_d(d)
    x = _target(d, x)
    batch = run_excursions(d, [LatticePoint.origin(d), x], [True, False], horizon, replicas, seed,
                           f"pair-excursion:{tuple(x)}", workers)
    returned = batch.first_hit[:, 0] >= 0
    z = batch.visits[returned].sum(axis=1)
    return _histogram(z, replicas, int((~returned).sum()), f"Z(A^{tuple(x)})")


def z_law_masses(q: float, s: float, j_max: int) -> np.ndarray:
    """P(Z = j, T < inf) for j = 0..j_max: 0, q, s^2, s^2 q, s^2 q^2, ..."""
    out = np.zeros(j_max + 1)
    if j_max >= 1:
        out[1] = q
    for j in range(2, j_max + 1):
        out[j] = s * s * q ** (j - 2)
    return out


@dataclass
class RaceEstimate:
    """Outcome of racing the return to 0 against the first visit to x."""

    d: int
    x: tuple
    horizon: int
    replicas: int
    kinds: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)

    def _frac(self, kind) -> float:
        return float(np.count_nonzero(self.kinds == kind)) / self.replicas

    @property
    def q(self) -> float:
        return self._frac(Outcome.RETURNED_FIRST)

    @property
    def s(self) -> float:
        return self._frac(Outcome.HIT_TARGET_FIRST)

    @property
    def censored(self) -> float:
        return self._frac(Outcome.CENSORED)

    @property
    def q_se(self) -> float:
        return _binomial_se(self.q, self.replicas)

    @property
    def s_se(self) -> float:
        return _binomial_se(self.s, self.replicas)

    @property
    def cov_qs(self) -> float:
        return -self.q * self.s / self.replicas

    def outcomes(self):
        x = LatticePoint(self.x)
        for k, t in zip(self.kinds.tolist(), self.times.tolist()):
            yield HittingOutcome(Outcome(k), t, x)

    def rows(self) -> list[dict]:
        base = {"d": self.d, "x": " ".join(map(str, self.x)), "horizon": self.horizon,
                "replicas": self.replicas, "censored_fraction": self.censored}
        return [
            {"quantity": "q_x(n)", **base, "value": self.q, "std_error": self.q_se},
            {"quantity": "s_x(n)", **base, "value": self.s, "std_error": self.s_se},
        ]


def race(d: int, x, horizon: int, replicas: int, seed: int, workers: int = 1) -> RaceEstimate:
    """Estimate the truncated q_x(n) = P(T < min(n, T_x)) and s_x(n) = P(T_x < min(n, T)).

    A walk that reaches neither point by the horizon is censored; this includes
    walks with T < T_x = inf that return only after the horizon.
    """
    _check_d(d)
    x = _target(d, x)
    batch = run_excursions(d, [LatticePoint.origin(d), x], [True, True], horizon, replicas, seed,
                           f"race:{tuple(x)}", workers)
    ret = batch.first_hit[:, 0] >= 0
    hit = batch.first_hit[:, 1] >= 0
    kinds = np.full(replicas, Outcome.CENSORED, dtype=np.int8)
    kinds[ret] = Outcome.RETURNED_FIRST
    kinds[hit] = Outcome.HIT_TARGET_FIRST
    return RaceEstimate(d, tuple(x), horizon, replicas, kinds, batch.end.copy())


# -- identities ---------------------------------------------------------------

@dataclass
class ResidualReport:
    residuals: dict[str, float]
    std_errors: dict[str, float]

    def worst_ratio(self) -> float:
        """Largest residual measured in propagated standard errors."""
        out = 0.0
        for k, r in self.residuals.items():
            se = self.std_errors.get(k, 0.0)
            out = max(out, math.inf if se == 0 and r > 0 else (r / se if se else 0.0))
        return out


def identity_residuals(gamma: float, gamma_x: float, q: float, s: float, *,
                       se_gamma: float = 0.0, se_gamma_x: float = 0.0, se_q: float = 0.0,
                       se_s: float = 0.0, cov_qs: float = 0.0, neighbor: bool = False) -> ResidualReport:
    """Absolute residuals of the two-point hitting identities.

    ``qu``:   q = 1 - gamma / (1 - (1 - gamma_x)^2)
    ``es``:   s = (1 - gamma_x)(1 - q)
    ``esqu``: q + s = 1 - gamma / (2 - gamma_x)
    ``gg4``:  1 - gamma = q + s (1 - gamma_x)
    ``eg``:   gamma_x = gamma (only when x is a neighbour of the origin)

    Standard errors are propagated to first order; q and s may be correlated.
    """
    for v in (gamma, gamma_x, q, s):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"input {v} outside [0, 1]")
    miss = 1.0 - gamma_x
    den = 1.0 - miss * miss
    # residual value and its gradient in (gamma, gamma_x, q, s)
    terms = {
        "qu": (q - 1.0 + gamma / den, (1.0 / den, -2.0 * gamma * miss / den ** 2, 1.0, 0.0)),
        "es": (s - miss * (1.0 - q), (0.0, 1.0 - q, miss, 1.0)),
        "esqu": (q + s - 1.0 + gamma / (2.0 - gamma_x),
                 (1.0 / (2.0 - gamma_x), gamma / (2.0 - gamma_x) ** 2, 1.0, 1.0)),
        "gg4": (1.0 - gamma - q - s * miss, (-1.0, s, -1.0, -miss)),
    }
    if neighbor:
        terms["eg"] = (gamma_x - gamma, (-1.0, 1.0, 0.0, 0.0))
    residuals, errors = {}, {}
    for name, (value, (gg, gx, gq, gs)) in terms.items():
        var = (gg * se_gamma) ** 2 + (gx * se_gamma_x) ** 2 + (gq * se_q) ** 2 \
            + (gs * se_s) ** 2 + 2.0 * gq * gs * cov_qs
        residuals[name] = abs(value)
        errors[name] = math.sqrt(max(var, 0.0))
    return ResidualReport(residuals, errors)
