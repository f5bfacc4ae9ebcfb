from __future__ import annotations

from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heavywalk.streams import StepSource, stream
from heavywalk.walk import (
    LatticePoint, LedgerCapacityError, LocalTimeLedger, WalkConfig, Walker, dump_trajectory,
    local_time, max_local_time, simulate, step_law,
)


def reference_walk(d, n, seed, replica=0):
    """Plain-Python walk on the same step stream; returns (path, counts)."""
    codes = StepSource(d, seed, replica).take(n)
    pos = [0] * d
    path, counts = [], Counter()
    for c in codes.tolist():
        pos[c >> 1] += 1 - 2 * (c & 1)
        path.append(tuple(pos))
        counts[tuple(pos)] += 1
    return path, counts


@pytest.mark.parametrize("d", [1, 3, 4])
def test_step_law(d):
    law = step_law(d)
    assert len(law) == 2 * d
    assert all(p == Fraction(1, 2 * d) for _, p in law)
    assert sum(p for _, p in law) == 1
    assert sorted(x.l1() for x, _ in law) == [1] * (2 * d)
    assert len({x for x, _ in law}) == 2 * d


def test_step_law_rejects_zero_dimension():
    with pytest.raises(ValueError):
        step_law(0)


def test_one_step():
    for seed in range(5):
        ledger = simulate(WalkConfig(3, 1, seed))
        assert ledger.histogram == {1: 1}
        assert ledger.distinct_sites == 1
        count, site = max_local_time(ledger)
        assert count == 1 and site.l1() == 1


def test_two_steps_time_zero_not_counted():
    # find a seed whose walk returns at step 2
    for seed in range(200):
        path, _ = reference_walk(3, 2, seed)
        if path[1] == (0, 0, 0):
            break
    else:
        pytest.fail("no returning seed found")
    ledger = simulate(WalkConfig(3, 2, seed))
    assert ledger.histogram == {1: 2}
    assert ledger.local_time((0, 0, 0)) == 1
    assert ledger.local_time(path[0]) == 1


def test_two_steps_never_double_visit():
    for seed in range(50):
        assert simulate(WalkConfig(3, 2, seed)).histogram == {1: 2}


def test_determinism():
    a = simulate(WalkConfig(3, 10, 123))
    b = simulate(WalkConfig(3, 10, 123))
    assert dict(a.counts) == dict(b.counts)
    assert a.histogram == b.histogram
    ea, eb = [], []
    simulate(WalkConfig(3, 10, 123), lambda *e: ea.append(e))
    simulate(WalkConfig(3, 10, 123), lambda *e: eb.append(e))
    assert ea == eb and len(ea) == 10


def test_matches_reference_walk():
    d, n, seed = 3, 20000, 9
    _, counts = reference_walk(d, n, seed)
    ledger = simulate(WalkConfig(d, n, seed))
    assert dict(ledger.counts) == dict(counts)
    assert ledger.histogram == dict(Counter(counts.values()))


def test_visitor_events_match_reference():
    d, n, seed = 4, 3000, 2
    path, _ = reference_walk(d, n, seed)
    seen = Counter()
    events = []
    ledger = simulate(WalkConfig(d, n, seed), lambda *e: events.append(e))
    for i, (step, x, new, count) in enumerate(events, 1):
        seen[path[i - 1]] += 1
        assert step == i and tuple(x) == path[i - 1]
        assert count == seen[path[i - 1]] and new == (count == 1)
    fast = simulate(WalkConfig(d, n, seed))
    assert ledger.histogram == fast.histogram


def test_ledger_consistency_on_prefixes():
    walker = Walker(WalkConfig(3, 2000, 4))
    for m in range(1, 2001):
        ledger = walker.advance(1)
        if m % 97 == 0 or m < 30:
            h = ledger.histogram
            assert sum(k * v for k, v in h.items()) == m
            assert h == ledger.recount_histogram()
            assert sum(h.values()) == ledger.distinct_sites == len(ledger.counts)


def test_slicing_does_not_change_the_walk():
    a = Walker(WalkConfig(3, 200000, 11))
    for chunk in (1, 7, 70000, 3, 129989):
        a.advance(chunk)
    b = Walker(WalkConfig(3, 200000, 11))
    b.advance(200000)
    assert a.ledger.histogram == b.ledger.histogram
    assert np.array_equal(a.position, b.position)


def test_parity():
    path, _ = reference_walk(3, 5000, 5)
    ledger = simulate(WalkConfig(3, 5000, 5))
    coords, counts, first = ledger.site_arrays()
    assert np.all(np.abs(coords).sum(axis=1) % 2 == first % 2)
    origin_hits = [i for i, x in enumerate(path, 1) if x == (0, 0, 0)]
    assert all(i % 2 == 0 for i in origin_hits)


def test_local_time_queries():
    ledger = simulate(WalkConfig(3, 1000, 8))
    assert local_time(ledger, (10**6, 0, 0)) == 0
    coords, counts, _ = ledger.site_arrays()
    assert sum(local_time(ledger, c) for c in coords) == 1000
    with pytest.raises(ValueError):
        ledger.local_time((0, 0))


def test_max_local_time_tie_break():
    ledger = simulate(WalkConfig(3, 10**5, 3))
    count, site = max_local_time(ledger)
    coords, counts, _ = ledger.site_arrays()
    assert count == counts.max() == max(ledger.histogram)
    winners = sorted(tuple(c) for c in coords[counts == count].tolist())
    assert tuple(site) == winners[0]


def test_max_local_time_rejects_empty():
    with pytest.raises(ValueError):
        max_local_time(LocalTimeLedger(3, 10))


def test_capacity_overflow_is_an_error():
    walker = Walker(WalkConfig(3, 10, 1))
    walker.advance(10)
    with pytest.raises(LedgerCapacityError):
        walker.advance(1)
    assert walker.ledger.steps_recorded == 10


def test_config_validation():
    with pytest.raises(ValueError):
        WalkConfig(3, 10, 1, horizon=5)
    with pytest.raises(ValueError):
        WalkConfig(3, 0, 1)
    with pytest.raises(ValueError):
        WalkConfig(3, 10, -1)


def test_streams_are_keyed_by_purpose_and_replica():
    a = stream(1, 0, "walk").integers(0, 2**32, 8)
    assert np.array_equal(a, stream(1, 0, "walk").integers(0, 2**32, 8))
    assert not np.array_equal(a, stream(1, 1, "walk").integers(0, 2**32, 8))
    assert not np.array_equal(a, stream(1, 0, "race").integers(0, 2**32, 8))
    assert not np.array_equal(a, stream(2, 0, "walk").integers(0, 2**32, 8))


def test_trajectory_dump(tmp_path):
    out = tmp_path / "traj.txt"
    with open(out, "w") as fh:
        dump_trajectory(WalkConfig(3, 5, 0), fh)
    path, _ = reference_walk(3, 5, 0)
    lines = out.read_text().splitlines()
    assert lines == [f"{i} {' '.join(map(str, x))}" for i, x in enumerate(path, 1)]


def test_lattice_point():
    e = LatticePoint.unit(3, 1, -1)
    assert e == (0, -1, 0) and e.dim == 3 and e.l1() == 1
    assert e + LatticePoint.unit(3, 1) == LatticePoint.origin(3)
    assert -e == (0, 1, 0)


@settings(max_examples=40, deadline=None)
@given(d=st.integers(1, 6), n=st.integers(1, 3000), seed=st.integers(0, 2**64 - 1))
def test_ledger_invariants(d, n, seed):
    ledger = simulate(WalkConfig(d, n, seed))
    h = ledger.histogram
    assert sum(k * v for k, v in h.items()) == n == ledger.steps_recorded
    assert h == ledger.recount_histogram()
    assert sum(h.values()) == ledger.distinct_sites
    assert ledger.max_count == max(h)
    _, counts = reference_walk(d, n, seed)
    assert dict(ledger.counts) == dict(counts)
