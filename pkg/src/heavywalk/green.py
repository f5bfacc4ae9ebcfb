"""Independent oracles: the lattice Green's function, exact hitting constants,
and exhaustive enumeration of short paths.

``G(x)`` is the expected number of visits to ``x`` by the walk started at the
origin, time 0 included.  It is obtained from the Dirichlet problem on the box
``|x|_inf <= R``, solved on one representative per orbit of the
hyperoctahedral group, and extrapolated in ``R`` with the decay exponent
``d - 2`` of the truncation error.
"""

from __future__ import annotations

import functools
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .walk import LatticePoint, step_law

DEFAULT_RADII = {3: 32, 4: 16, 5: 16}
DEFAULT_RADIUS_HIGH_D = 8
SOLVER_TOLERANCE = 1e-10


class SolverError(RuntimeError):
    pass


def default_radius(d: int) -> int:
    return DEFAULT_RADII.get(d, DEFAULT_RADIUS_HIGH_D)


def _canonical(a: np.ndarray) -> np.ndarray:
    return np.sort(np.abs(a), axis=1)


def _encode(a: np.ndarray, base: int) -> np.ndarray:
    key = np.zeros(a.shape[0], dtype=np.int64)
    for j in range(a.shape[1]):
        key = key * base + a[:, j]
    return key


def _orbit_sizes(reps: np.ndarray) -> np.ndarray:
    d = reps.shape[1]
    sizes = np.full(reps.shape[0], math.factorial(d), dtype=np.float64)
    # reps are sorted, so equal values form runs
    run = np.ones(reps.shape[0], dtype=np.int64)
    for j in range(1, d):
        same = reps[:, j] == reps[:, j - 1]
        run = np.where(same, run + 1, 1)
        sizes /= np.where(same, run, 1)
    sizes *= 2.0 ** np.count_nonzero(reps, axis=1)
    return sizes


@dataclass
class BoxSolution:
    """Dirichlet Green's function on one box, indexed by orbit representative."""

    d: int
    radius: int
    reps: np.ndarray
    values: np.ndarray
    harmonic_residual: float
    iterations: int

    def __post_init__(self):
        self._keys = _encode(self.reps, self.radius + 2)

    def index(self, x) -> int:
        a = _canonical(np.asarray(x, dtype=np.int64).reshape(1, -1))
        if a.shape[1] != self.d:
            raise ValueError("dimension mismatch")
        if a.max() > self.radius:
            return -1
        return int(np.searchsorted(self._keys, _encode(a, self.radius + 2))[0])

    def __call__(self, x) -> float:
        i = self.index(x)
        return 0.0 if i < 0 else float(self.values[i])


def _operator(d: int, radius: int):
    reps = np.array(
        list(itertools.combinations_with_replacement(range(radius + 1), d)), dtype=np.int64
    )
    base = radius + 2
    keys = _encode(reps, base)
    m = reps.shape[0]
    rows, cols = [], []
    for axis in range(d):
        for sign in (1, -1):
            nb = reps.copy()
            nb[:, axis] += sign
            nb = _canonical(nb)
            inside = nb[:, -1] <= radius
            rows.append(np.nonzero(inside)[0])
            cols.append(np.searchsorted(keys, _encode(nb[inside], base)))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    transition = sp.csr_matrix(
        (np.full(rows.shape[0], 1.0 / (2 * d)), (rows, cols)), shape=(m, m)
    )
    op = sp.identity(m, format="csr") - transition
    return reps, op


def solve_box(d: int, radius: int, tolerance: float = SOLVER_TOLERANCE,
              max_iter: int = 20000) -> BoxSolution:
    """Solve (I - P) G = 1_{0} on the box with zero values outside it."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    reps, op = _operator(d, radius)
    weights = _orbit_sizes(reps)
    # weights * (I - P) is symmetric positive definite on orbit representatives
    spd = sp.diags(weights) @ op
    rhs = np.zeros(reps.shape[0])
    rhs[0] = 1.0
    precond = sp.diags(1.0 / spd.diagonal())
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    g, info = spla.cg(spd, rhs, rtol=tolerance * 1e-3, atol=0.0, maxiter=max_iter,
                      M=precond, callback=count)
    if info != 0:
        raise SolverError(f"CG did not converge in {max_iter} iterations (d={d}, R={radius})")
    residual = op @ g - rhs
    harmonic = float(np.abs(residual).max())
    if harmonic > tolerance:
        raise SolverError(f"residual {harmonic:.3e} above tolerance {tolerance:.1e}")
    return BoxSolution(d, radius, reps, g, harmonic, iterations)


@dataclass
class GreenTable:
    """G(x) on a box at radii (R, 2R) plus the extrapolated infinite-lattice values.

    ``extrapolated`` and ``errors`` are indexed like ``coarse.reps``; the error
    estimate is the size of the extrapolation correction.
    """

    d: int
    radius: int
    coarse: BoxSolution
    fine: BoxSolution
    extrapolated: np.ndarray = field(repr=False)
    errors: np.ndarray = field(repr=False)

    @property
    def reps(self) -> np.ndarray:
        return self.coarse.reps

    @property
    def trusted_radius(self) -> int:
        return self.radius // 2

    def value(self, x) -> float:
        """Extrapolated G(x)."""
        return float(self.extrapolated[self._index(x)])

    def error(self, x) -> float:
        return float(self.errors[self._index(x)])

    def _index(self, x) -> int:
        x = np.asarray(x, dtype=np.int64)
        if np.abs(x).max(initial=0) > self.trusted_radius:
            raise ValueError(f"{tuple(x)} lies outside the trusted region |x|_inf <= {self.trusted_radius}")
        return self.coarse.index(x)

    @property
    def values(self) -> dict[LatticePoint, float]:
        """Extrapolated G on the orbit representatives of the trusted region."""
        keep = self.reps.max(axis=1) <= self.trusted_radius
        return {LatticePoint(r): float(v) for r, v in zip(self.reps[keep].tolist(), self.extrapolated[keep])}

    @property
    def g0(self) -> float:
        return float(self.extrapolated[0])

    def rows(self):
        """Export rows (d, x_1..x_d, G, error) for the trusted region."""
        keep = np.nonzero(self.reps.max(axis=1) <= self.trusted_radius)[0]
        for i in keep:
            yield (self.d, *map(int, self.reps[i]), float(self.extrapolated[i]), float(self.errors[i]))


def solve_green(d: int, radius: int | None = None, tolerance: float = SOLVER_TOLERANCE) -> GreenTable:
    """Green's function of the walk on Z^d from box solves at radii R and 2R."""
    if d < 3:
        raise ValueError("the walk is recurrent for d < 3; G is infinite")
    radius = default_radius(d) if radius is None else radius
    if radius < 8:
        raise ValueError("radius must be at least 8")
    coarse = solve_box(d, radius, tolerance)
    fine = solve_box(d, 2 * radius, tolerance)
    fine_on_coarse = _restrict(fine, coarse.reps)
    ratio = 2.0 ** (d - 2)
    extrapolated = (ratio * fine_on_coarse - coarse.values) / (ratio - 1.0)
    errors = np.abs(extrapolated - fine_on_coarse)
    return GreenTable(d, radius, coarse, fine, extrapolated, errors)


def _restrict(fine: BoxSolution, reps: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(fine._keys, _encode(reps, fine.radius + 2))
    return fine.values[idx]


def gamma_exact(table: GreenTable) -> float:
    """Escape probability gamma = 1 / G(0)."""
    g0 = table.g0
    if not g0 > 1.0:
        raise SolverError(f"G(0) = {g0} <= 1 indicates a failed solve")
    return 1.0 / g0


def gamma_x_exact(table: GreenTable, x) -> float:
    """gamma_x = P(T_x = inf) = 1 - G(x)/G(0)."""
    x = LatticePoint(x)
    if x.dim != table.d:
        raise ValueError("dimension mismatch")
    if x.l1() == 0:
        raise ValueError("x must differ from the origin")
    return 1.0 - table.value(x) / table.g0


def qs_exact(gamma: float, gamma_x: float) -> tuple[float, float]:
    """(q_x, s_x): return to 0 before hitting x, and hitting x before returning."""
    if not 0.0 < gamma < 1.0 or not 0.0 < gamma_x <= 1.0:
        raise ValueError("gamma and gamma_x must lie in (0, 1)")
    if gamma_x < gamma - 1e-9:
        raise ValueError(f"gamma_x = {gamma_x} < gamma = {gamma} is impossible")
    gamma_x = max(gamma_x, gamma)
    miss = 1.0 - gamma_x
    q = 1.0 - gamma / (1.0 - miss * miss)
    s = miss * (1.0 - q)
    return q, s


@functools.lru_cache(maxsize=None)
def reference_gamma(d: int) -> float:
    """Oracle escape probability at the default radii (cached per process)."""
    return gamma_exact(reference_table(d))


@functools.lru_cache(maxsize=None)
def reference_table(d: int) -> GreenTable:
    return solve_green(d)


def lambda_of(gamma: float) -> float:
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    return -1.0 / math.log1p(-gamma)


# -- exhaustive enumeration ---------------------------------------------------

ENUMERATION_BUDGET = 10**8


@dataclass
class EnumerationResult:
    """Exact path statistics for all lengths m <= n.

    Numerators are integers over ``(2d)**m``; the accessors return Fractions.
    """

    d: int
    n: int
    no_return: list[int]            # [m] -> paths of length m never revisiting 0
    q_numer: list[Counter]          # [m] -> {k: sum over paths of Q(k, m)}
    xi0_numer: list[Counter]        # [m] -> {j: paths with xi(0, m) = j}

    def denominator(self, m: int) -> int:
        return (2 * self.d) ** m

    def gamma(self, m: int) -> Fraction:
        """gamma(m): probability of no return during steps 1..m-1 (m <= n + 1)."""
        if not 1 <= m <= self.n + 1:
            raise ValueError(f"gamma({m}) needs paths of length {m - 1} > {self.n}")
        return Fraction(self.no_return[m - 1], self.denominator(m - 1))

    def expected_q(self, k: int, m: int) -> Fraction:
        return Fraction(self.q_numer[m].get(k, 0), self.denominator(m))

    def expected_r(self, t: int, m: int) -> Fraction:
        """E[R(t, m)], which equals E[V(t, m)] when the horizon is m itself."""
        total = sum(v for k, v in self.q_numer[m].items() if k >= t)
        return Fraction(total, self.denominator(m))

    expected_v = expected_r

    def xi0_law(self, m: int) -> dict[int, Fraction]:
        return {j: Fraction(c, self.denominator(m)) for j, c in sorted(self.xi0_numer[m].items())}

    def rows(self):
        """Export (quantity, m, k, "numerator/denominator") rows."""
        for m in range(1, self.n + 2):
            g = self.gamma(m)
            yield ("gamma", m, "", f"{g.numerator}/{g.denominator}")
        for m in range(1, self.n + 1):
            for k in sorted(self.q_numer[m]):
                v = self.expected_q(k, m)
                yield ("EQ", m, k, f"{v.numerator}/{v.denominator}")
            for j, v in self.xi0_law(m).items():
                yield ("P_xi0", m, j, f"{v.numerator}/{v.denominator}")


def enumerate_paths(d: int, n_max: int) -> EnumerationResult:
    """Visit every path of length <= n_max and tally exact statistics.

    All first steps are equivalent under lattice symmetry, so only paths
    starting with +e_1 are walked and their tallies weighted by 2d.
    """
    if d < 1 or n_max < 1:
        raise ValueError("need d >= 1 and n_max >= 1")
    if (2 * d) ** n_max > ENUMERATION_BUDGET:
        raise ValueError(f"(2d)^n = {(2 * d) ** n_max} exceeds the budget {ENUMERATION_BUDGET}")
    moves = [tuple(x) for x, _ in step_law(d)]
    origin = (0,) * d
    no_return = [1] + [0] * n_max
    q_numer = [Counter() for _ in range(n_max + 1)]
    xi0 = [Counter({0: 1})] + [Counter() for _ in range(n_max)]

    counts: dict[tuple, int] = {}
    hist: Counter = Counter()

    def visit(pos, m):
        c = counts.get(pos, 0)
        counts[pos] = c + 1
        if c:
            hist[c] -= 1
        hist[c + 1] += 1
        qn = q_numer[m]
        for k, v in hist.items():
            if v:
                qn[k] += v
        z = counts.get(origin, 0)
        xi0[m][z] += 1
        if z == 0:
            no_return[m] += 1
        if m < n_max:
            for mv in moves:
                visit(tuple(a + b for a, b in zip(pos, mv)), m + 1)
        hist[c + 1] -= 1
        if c:
            hist[c] += 1
            counts[pos] = c
        else:
            del counts[pos]

    visit(moves[0], 1)
    w = 2 * d
    for m in range(1, n_max + 1):
        no_return[m] *= w
        q_numer[m] = Counter({k: v * w for k, v in q_numer[m].items() if v})
        xi0[m] = Counter({j: v * w for j, v in xi0[m].items()})
    return EnumerationResult(d, n_max, no_return, q_numer, xi0)
