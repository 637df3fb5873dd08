"""Deterministic, platform-independent random streams.

Everything seeded in this package bottoms out here: a splitmix64 stream
plus one mixing rule that turns (base seed, index, salt) into a new
64-bit seed. Per-subject/per-trial seeds, per-tree seeds and permutation
seeds are all derived with the same rule, so any run is reproducible
from a single master seed on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = 0xFFFF_FFFF_FFFF_FFFF
GOLDEN = 0x9E37_79B9_7F4A_7C15  # splitmix64 increment

_MUL1 = 0xBF58_476D_1CE4_E5B9
_MUL2 = 0x94D0_49BB_1331_11EB


@dataclass(frozen=True)
class RngState:
    """Value-type state of a splitmix64 stream (64-bit unsigned)."""

    state: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "state", self.state & MASK64)


def splitmix64_next(state: RngState) -> tuple[RngState, int]:
    """Advance a splitmix64 stream by one step.

    Returns the new state and the 64-bit output value.
    """
    s = (state.state + GOLDEN) & MASK64
    z = s
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    z = z ^ (z >> 31)
    return RngState(s), z


def mix_seed(base: int, index: int, salt: int = 0) -> int:
    """Derive a decorrelated 64-bit seed from (base, index, salt).

    The derived seed is the first splitmix64 output of the state
    ``base XOR (index * GOLDEN + salt)``. Linear schemes like
    ``base + index`` produce correlated streams; the multiply-and-mix
    here does not.
    """
    mixed = (base ^ ((index * GOLDEN + salt) & MASK64)) & MASK64
    _, value = splitmix64_next(RngState(mixed))
    return value


def derive_trial_seed(master_seed: int, subject_index: int, trial: int) -> int:
    """Seed for one (subject, trial) cell of a randomized-trials run."""
    return mix_seed(master_seed, subject_index, trial)


def derive_seed_grid(master_seed: int, n_subjects: int, n_trials: int) -> np.ndarray:
    """All (subject, trial) seeds of a run as a (n_subjects, n_trials) array.

    Vectorized equivalent of :func:`derive_trial_seed`; used for the
    collision check a run performs before trusting its seed grid.
    """
    subj = np.arange(n_subjects, dtype=np.uint64)[:, None]
    trial = np.arange(n_trials, dtype=np.uint64)[None, :]
    mixed = np.uint64(master_seed) ^ (subj * np.uint64(GOLDEN) + trial)
    s = mixed + np.uint64(GOLDEN)
    z = s
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
    z = z ^ (z >> np.uint64(31))
    return z


class Stream:
    """Mutable convenience wrapper over the splitmix64 stream."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = RngState(seed)

    def next_u64(self) -> int:
        self._state, value = splitmix64_next(self._state)
        return value

    def randbelow(self, n: int) -> int:
        """Uniform draw from [0, n) via modulo rejection (unbiased)."""
        if n <= 0:
            raise ValueError("bound must be positive")
        threshold = ((1 << 64) - n) % n
        while True:
            v = self.next_u64()
            if v >= threshold:
                return v % n


def shuffle(n: int, seed: int) -> np.ndarray:
    """Deterministic Fisher-Yates permutation of [0, n) under ``seed``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    perm = np.arange(n, dtype=np.int64)
    stream = Stream(seed)
    for i in range(n - 1, 0, -1):
        j = stream.randbelow(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def parse_seed(text: str) -> int:
    """Parse a seed from decimal or 0x-prefixed hex text."""
    text = text.strip()
    value = int(text, 16) if text.lower().startswith("0x") else int(text)
    if not 0 <= value <= MASK64:
        raise ValueError(f"seed out of 64-bit range: {text}")
    return value
