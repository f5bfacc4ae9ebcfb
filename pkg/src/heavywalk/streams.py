"""Deterministic random streams keyed by (master seed, replica, purpose).

Every stream is a Philox generator. The 128-bit key is the master seed plus a
64-bit digest of the purpose string; the replica index occupies the third
counter word, so replicas of one purpose are 2**128 draws apart and can be
created in any order, by any worker, with identical output.
"""

from __future__ import annotations

import hashlib

import numpy as np

_U64 = (1 << 64) - 1


def purpose_code(purpose: str) -> int:
    digest = hashlib.blake2b(purpose.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= _U64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed: int, replica: int, purpose: str) -> np.random.Generator:
    """Return the generator for one (seed, replica, purpose) triple."""
    seed = check_seed(seed)
    replica = int(replica)
    if not 0 <= replica <= _U64:
        raise ValueError(f"replica index out of range: {replica}")
    bitgen = np.random.Philox(key=[seed, purpose_code(purpose)], counter=[0, 0, replica, 0])
    return np.random.Generator(bitgen)


class StepSource:
    """Buffered stream of step codes in ``[0, 2d)``.

    Codes are drawn in fixed-size blocks so the sequence handed out does not
    depend on how callers slice their requests.
    """

    BLOCK = 1 << 16

    def __init__(self, d: int, seed: int, replica: int = 0, purpose: str = "walk"):
        if not 1 <= d <= 63:
            raise ValueError("dimension must be in [1, 63] (step codes are int8)")
        self.d = d
        self.seed = check_seed(seed)
        self.replica = replica
        self.purpose = purpose
        self._rng = stream(seed, replica, purpose)
        self._buf = np.empty(0, dtype=np.int8)
        self._pos = 0

    def _refill(self) -> None:
        self._buf = self._rng.integers(0, 2 * self.d, size=self.BLOCK, dtype=np.int8)
        self._pos = 0

    def take(self, count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.int8)
        filled = 0
        while filled < count:
            if self._pos == len(self._buf):
                self._refill()
            m = min(count - filled, len(self._buf) - self._pos)
            out[filled:filled + m] = self._buf[self._pos:self._pos + m]
            self._pos += m
            filled += m
        return out
