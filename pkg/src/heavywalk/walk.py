"""Simple symmetric random walk on Z^d with streaming local-time bookkeeping.

Local time follows the convention ``xi(x, n) = #{k : 0 < k <= n, S_k = x}``:
the walker's presence at the origin at time 0 is not counted.
"""

from __future__ import annotations

from collections.abc import Callable, Iterator, Mapping
from dataclasses import dataclass
from fractions import Fraction
from typing import IO

import numpy as np

from . import _kernels
from .streams import StepSource, check_seed

MAX_STEPS = 1 << 62
_NARROW_LIMIT = (1 << 31) - 1
_CHUNK = 1 << 16


class LedgerCapacityError(MemoryError):
    """Raised instead of silently truncating when a ledger runs out of room."""


class LatticePoint(tuple):
    """A site of Z^d; compares lexicographically and hashes like a tuple."""

    __slots__ = ()

    def __new__(cls, coords=()):
        return super().__new__(cls, (int(c) for c in coords))

    @property
    def dim(self) -> int:
        return len(self)

    @classmethod
    def origin(cls, d: int) -> LatticePoint:
        return cls((0,) * d)

    @classmethod
    def unit(cls, d: int, axis: int, sign: int = 1) -> LatticePoint:
        c = [0] * d
        c[axis] = 1 if sign > 0 else -1
        return cls(c)

    def __add__(self, other):
        if len(other) != len(self):
            raise ValueError("dimension mismatch")
        return LatticePoint(a + b for a, b in zip(self, other))

    def __neg__(self):
        return LatticePoint(-a for a in self)

    def l1(self) -> int:
        return sum(abs(a) for a in self)

    def __repr__(self) -> str:
        return f"LatticePoint({tuple(self)})"


def step_law(d: int) -> list[tuple[LatticePoint, Fraction]]:
    """The 2d unit increments, ordered +e_1, -e_1, +e_2, ..., each with mass 1/(2d).

    The position of an increment in this list is its step code.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    p = Fraction(1, 2 * d)
    law = []
    for axis in range(d):
        law.append((LatticePoint.unit(d, axis, +1), p))
        law.append((LatticePoint.unit(d, axis, -1), p))
    return law


def step_increments(d: int) -> np.ndarray:
    """Array form of :func:`step_law`: row ``s`` is the increment of code ``s``."""
    inc = np.zeros((2 * d, d), dtype=np.int64)
    for axis in range(d):
        inc[2 * axis, axis] = 1
        inc[2 * axis + 1, axis] = -1
    return inc


@dataclass(frozen=True)
class WalkConfig:
    d: int
    n: int
    seed: int
    horizon: int | None = None
    replica: int = 0
    purpose: str = "walk"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not 1 <= self.n <= MAX_STEPS:
            raise ValueError(f"step count must be in [1, 2**62], got {self.n}")
        check_seed(self.seed)
        if self.horizon is not None and not self.n <= self.horizon <= MAX_STEPS:
            raise ValueError(f"horizon {self.horizon} must satisfy n <= horizon <= 2**62")

    @property
    def total_steps(self) -> int:
        return self.n if self.horizon is None else self.horizon


class LocalTimeLedger:
    """Visit counts per site plus the synchronized counts-of-counts histogram.

    Sites live in an open-addressing table.  ``histogram[k]`` is the number of
    sites visited exactly k times and is updated in O(1) per step.  Storage is
    32-bit whenever ``max_steps`` guarantees that coordinates, counts and
    times fit; coordinates are exposed as 64-bit integers either way.
    """

    def __init__(self, d: int, max_steps: int, capacity: int = 1 << 10):
        if d < 1:
            raise ValueError("dimension must be >= 1")
        if not 1 <= max_steps <= MAX_STEPS:
            raise ValueError("max_steps must be in [1, 2**62]")
        self.d = d
        self.max_steps = max_steps
        self._dtype = np.int32 if max_steps <= _NARROW_LIMIT else np.int64
        cap = 1 << max(4, int(capacity - 1).bit_length())
        self._keys = np.zeros((cap, d + 1), dtype=self._dtype)
        self._first = np.zeros(cap, dtype=self._dtype)
        self._hist = np.zeros(64, dtype=np.int64)
        # time, distinct sites, max count
        self._state = np.zeros(3, dtype=np.int64)

    # -- growth ---------------------------------------------------------
    def _grow_table(self) -> None:
        cap = 2 * self._keys.shape[0]
        try:
            keys = np.zeros((cap, self.d + 1), dtype=self._dtype)
            first = np.zeros(cap, dtype=self._dtype)
        except MemoryError as exc:
            raise LedgerCapacityError(
                f"cannot grow visit table to {cap} slots after {self.steps_recorded} steps"
            ) from exc
        _kernels.rehash(self._keys, self._first, keys, first)
        self._keys, self._first = keys, first

    def _grow_hist(self) -> None:
        hist = np.zeros(2 * len(self._hist), dtype=np.int64)
        hist[: len(self._hist)] = self._hist
        self._hist = hist

    def _apply(self, pos: np.ndarray, steps: np.ndarray, pos_out=None, cnt_out=None) -> None:
        if self.steps_recorded + len(steps) > self.max_steps:
            raise LedgerCapacityError(
                f"ledger sized for {self.max_steps} steps cannot record {len(steps)} more"
            )
        if pos_out is None:
            pos_out = np.empty((0, self.d), dtype=np.int64)
            cnt_out = np.empty(0, dtype=np.int64)
        done = 0
        while done < len(steps):
            nxt = _kernels.record_steps(
                steps, done, len(steps), pos, self._keys, self._first, self._hist,
                self._state, pos_out[done:] if len(pos_out) else pos_out,
                cnt_out[done:] if len(cnt_out) else cnt_out,
            )
            if nxt < len(steps):
                if self._state[1] + 1 > _kernels.MAX_LOAD * self._keys.shape[0]:
                    self._grow_table()
                else:
                    self._grow_hist()
            done = nxt

    # -- queries --------------------------------------------------------
    @property
    def steps_recorded(self) -> int:
        return int(self._state[0])

    @property
    def distinct_sites(self) -> int:
        return int(self._state[1])

    @property
    def max_count(self) -> int:
        return int(self._state[2])

    def local_time(self, x) -> int:
        x = np.asarray(x, dtype=np.int64)
        if x.shape != (self.d,):
            raise ValueError(f"expected a point of Z^{self.d}, got shape {x.shape}")
        i = _kernels.lookup(self._keys, x)
        return 0 if i < 0 else int(self._keys[i, self.d])

    def histogram_array(self) -> np.ndarray:
        """``out[k]`` = number of sites with count k, for k = 0..max count (out[0] = 0)."""
        return self._hist[: self.max_count + 1].copy()

    @property
    def histogram(self) -> dict[int, int]:
        h = self.histogram_array()
        return {int(k): int(h[k]) for k in np.nonzero(h)[0]}

    def site_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(coords, counts, first-visit times) of all visited sites, in table order."""
        occupied = self._keys[:, self.d] != 0
        coords = self._keys[occupied, : self.d].astype(np.int64)
        counts = self._keys[occupied, self.d].astype(np.int64)
        first = self._first[occupied].astype(np.int64)
        return coords, counts, first

    @property
    def counts(self) -> Mapping[LatticePoint, int]:
        return _CountsView(self)

    def recount_histogram(self) -> dict[int, int]:
        """Histogram rebuilt from scratch from the counts (consistency oracle)."""
        _, counts, _ = self.site_arrays()
        values, freq = np.unique(counts, return_counts=True)
        return {int(k): int(f) for k, f in zip(values, freq)}


class _CountsView(Mapping):
    def __init__(self, ledger: LocalTimeLedger):
        self._ledger = ledger

    def __getitem__(self, x):
        c = self._ledger.local_time(x)
        if c == 0:
            raise KeyError(x)
        return c

    def __iter__(self) -> Iterator[LatticePoint]:
        coords, _, _ = self._ledger.site_arrays()
        return (LatticePoint(row) for row in coords.tolist())

    def __len__(self) -> int:
        return self._ledger.distinct_sites


Visitor = Callable[[int, LatticePoint, bool, int], None]


class Walker:
    """A walk in progress: position, step source and ledger.

    ``advance`` may be called repeatedly, so callers can inspect the ledger at
    intermediate times (e.g. at n) before continuing to a horizon N.
    """

    def __init__(self, config: WalkConfig):
        self.config = config
        self.source = StepSource(config.d, config.seed, config.replica, config.purpose)
        self.ledger = LocalTimeLedger(config.d, config.total_steps)
        self.position = np.zeros(config.d, dtype=np.int64)

    @property
    def time(self) -> int:
        return self.ledger.steps_recorded

    def advance(self, m: int, visitor: Visitor | None = None) -> LocalTimeLedger:
        if m < 0:
            raise ValueError("cannot advance a negative number of steps")
        if visitor is not None:
            self._advance_visited(m, visitor)
            return self.ledger
        left = m
        while left > 0:
            steps = self.source.take(min(left, _CHUNK))
            self.ledger._apply(self.position, steps)
            left -= len(steps)
        return self.ledger

    def _advance_visited(self, m: int, visitor: Visitor) -> None:
        pos_out = np.empty((1, self.config.d), dtype=np.int64)
        cnt_out = np.empty(1, dtype=np.int64)
        for _ in range(m):
            self.ledger._apply(self.position, self.source.take(1), pos_out, cnt_out)
            count = int(cnt_out[0])
            visitor(self.time, LatticePoint(pos_out[0]), count == 1, count)

    def advance_captured(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        """Advance m steps and return the positions and landing counts of each step."""
        pos_out = np.empty((m, self.config.d), dtype=np.int64)
        cnt_out = np.empty(m, dtype=np.int64)
        done = 0
        while done < m:
            k = min(m - done, _CHUNK)
            self.ledger._apply(
                self.position, self.source.take(k), pos_out[done:done + k], cnt_out[done:done + k]
            )
            done += k
        return pos_out, cnt_out


def simulate(config: WalkConfig, visitor: Visitor | None = None) -> LocalTimeLedger:
    """Walk ``config.n`` steps from the origin and return the ledger.

    With a visitor, it is called after each step with
    ``(i, S_i, is_new_site, xi(S_i, i))``.  It must not mutate the ledger.
    """
    return Walker(config).advance(config.n, visitor)


def local_time(ledger: LocalTimeLedger, x) -> int:
    return ledger.local_time(x)


def max_local_time(ledger: LocalTimeLedger) -> tuple[int, LatticePoint]:
    """Maximal local time and the lexicographically smallest site achieving it."""
    if ledger.steps_recorded < 1:
        raise ValueError("empty ledger has no maximal local time")
    coords, counts, _ = ledger.site_arrays()
    top = ledger.max_count
    winners = coords[counts == top]
    order = np.lexsort(winners.T[::-1])
    return top, LatticePoint(winners[order[0]])


def dump_trajectory(config: WalkConfig, out: IO[str]) -> LocalTimeLedger:
    """Write ``i x_1 ... x_d`` per step (debug aid)."""

    def visit(i, x, _new, _count):
        out.write(f"{i} {' '.join(map(str, x))}\n")

    return simulate(config, visit)
