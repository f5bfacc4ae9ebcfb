"""Compiled inner loops: the open-addressing visit table and the excursion walker."""

from __future__ import annotations

import numba
import numpy as np

# Table growth is triggered above this load factor.
MAX_LOAD = 0.7

# Below this L1 distance to the nearest target the excursion walker takes
# single steps; above it, it jumps ahead by an exactly sampled displacement.
JUMP_DISTANCE = 6


@numba.njit(cache=True, nogil=True, inline="always")
def _slot(keys, pos, mask):
    h = np.int64(0x2545F4914F6CDD1D)
    for j in range(pos.shape[0]):
        h = (h ^ np.int64(pos[j])) * np.int64(0x100000001B3)
        h ^= h >> 29
    h *= np.int64(-4658895280553007687)  # 0xBF58476D1CE4E5B9
    h ^= h >> 32
    i = h & mask
    d = pos.shape[0]
    while True:
        if keys[i, d] == 0:
            return i
        same = True
        for j in range(d):
            if keys[i, j] != pos[j]:
                same = False
                break
        if same:
            return i
        i = (i + 1) & mask


@numba.njit(cache=True, nogil=True)
def lookup(keys, pos):
    """Slot holding ``pos``; -1 when the site was never visited."""
    mask = keys.shape[0] - 1
    i = _slot(keys, pos, mask)
    if keys[i, pos.shape[0]] == 0:
        return -1
    return i


@numba.njit(cache=True, nogil=True)
def record_steps(steps, start, stop, pos, keys, first, hist, state, pos_out, cnt_out):
    """Apply ``steps[start:stop]`` to the walk at ``pos``.

    ``keys`` has d coordinate columns followed by one count column (0 marks an
    empty slot).  ``state`` is ``[time, distinct sites, max count]``.  Returns the
    index of the first unprocessed step, which is below ``stop`` only when the
    table or the histogram must grow first.  When ``pos_out`` has rows, the
    position and landing count of each processed step are written there.
    """
    d = pos.shape[0]
    mask = keys.shape[0] - 1
    limit = np.int64(MAX_LOAD * keys.shape[0])
    capture = pos_out.shape[0] > 0
    for k in range(start, stop):
        s = steps[k]
        axis = s >> 1
        pos[axis] += 1 - 2 * (s & 1)
        i = _slot(keys, pos, mask)
        c = keys[i, d]
        if c == 0:
            if state[1] + 1 > limit:
                pos[axis] -= 1 - 2 * (s & 1)
                return k
            for j in range(d):
                keys[i, j] = pos[j]
            first[i] = state[0] + 1
            state[1] += 1
        elif c + 1 >= hist.shape[0]:
            pos[axis] -= 1 - 2 * (s & 1)
            return k
        else:
            hist[c] -= 1
        keys[i, d] = c + 1
        hist[c + 1] += 1
        if c + 1 > state[2]:
            state[2] = c + 1
        state[0] += 1
        if capture:
            r = k - start
            for j in range(d):
                pos_out[r, j] = pos[j]
            cnt_out[r] = c + 1
    return stop


@numba.njit(cache=True, nogil=True)
def rehash(keys, first, new_keys, new_first):
    d = keys.shape[1] - 1
    mask = new_keys.shape[0] - 1
    for i in range(keys.shape[0]):
        if keys[i, d] != 0:
            j = _slot(new_keys, keys[i, :d], mask)
            for c in range(d + 1):
                new_keys[j, c] = keys[i, c]
            new_first[j] = first[i]


@numba.njit(cache=True, nogil=True, inline="always")
def _splitmix(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, nogil=True, inline="always")
def _popcount(z):
    z = z - ((z >> np.uint64(1)) & np.uint64(0x5555555555555555))
    z = (z & np.uint64(0x3333333333333333)) + ((z >> np.uint64(2)) & np.uint64(0x3333333333333333))
    z = (z + (z >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return np.int64((z * np.uint64(0x0101010101010101)) >> np.uint64(56))


@numba.njit(cache=True, nogil=True)
def _binomial_half(k, bits):
    """Binomial(k, 1/2) as the number of set bits among k fair random bits."""
    total = 0
    while k >= 64:
        total += _popcount(_splitmix(bits))
        k -= 64
    if k > 0:
        total += _popcount(_splitmix(bits) >> np.uint64(64 - k))
    return total


@numba.njit(cache=True, nogil=True)
def _jump(rng, bits, pos, m):
    # Exact law of the displacement after m steps: multinomial split over the
    # axes, then a symmetric binomial for the signs along each axis.
    d = pos.shape[0]
    left = m
    for j in range(d):
        if j == d - 1:
            k = left
        elif left == 0:
            k = 0
        elif d - j == 2:
            k = _binomial_half(left, bits)
        else:
            k = rng.binomial(left, 1.0 / (d - j))
        left -= k
        if k > 0:
            pos[j] += 2 * _binomial_half(k, bits) - k


@numba.njit(cache=True, nogil=True)
def excursion(rng, targets, stop_on, horizon, first_hit, visits):
    """Run one walk from the origin for at most ``horizon`` steps.

    Records the first hitting time and the number of visits for every target
    (rows of ``targets``) and stops as soon as a target flagged in ``stop_on``
    is hit.  Returns the time at which the walk stopped.
    """
    n_targets, d = targets.shape
    pos = np.zeros(d, dtype=np.int64)
    bits = np.empty(1, dtype=np.uint64)
    bits[0] = np.uint64(rng.integers(0, 1 << 62))
    for k in range(n_targets):
        first_hit[k] = -1
        visits[k] = 0
    t = 0
    while t < horizon:
        dist = np.int64(1) << 62
        for k in range(n_targets):
            r = 0
            for j in range(d):
                r += abs(pos[j] - targets[k, j])
            if r < dist:
                dist = r
        if dist > JUMP_DISTANCE:
            m = min(dist - 1, horizon - t)
            _jump(rng, bits, pos, m)
            t += m
            continue
        s = rng.integers(0, 2 * d)
        pos[s >> 1] += 1 - 2 * (s & 1)
        t += 1
        for k in range(n_targets):
            hit = True
            for j in range(d):
                if pos[j] != targets[k, j]:
                    hit = False
                    break
            if hit:
                visits[k] += 1
                if first_hit[k] < 0:
                    first_hit[k] = t
                if stop_on[k]:
                    return t
    return t


@numba.njit(cache=True, nogil=True)
def excursion_batch(rng, targets, stop_on, horizon, first_hit, visits, end):
    """``excursion`` for each row of ``first_hit``/``visits``, drawing from one generator."""
    for r in range(end.shape[0]):
        end[r] = excursion(rng, targets, stop_on, horizon, first_hit[r], visits[r])
