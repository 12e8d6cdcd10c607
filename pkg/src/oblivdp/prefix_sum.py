"""Binary-mechanism prefix sums over a 0/1 stream.

Level ``l`` of the tree holds dyadic nodes of width ``2**l``; node ``j`` covers
stream positions ``j*2**l + 1 .. (j+1)*2**l`` (1-based).  A prefix ``[1..c]``
is the sum of one node per set bit of ``c``.  The one prefix that needs a bit
above the top level, ``c = 2**L``, uses the two top-level nodes instead.

The node noise is drawn up front, level by level, into a flat *noise tape*.
Drawing it before any data arrives makes the tape independent of the stream,
which is what lets a run be replayed or simulated from the tape alone.
"""
from __future__ import annotations

import numpy as np

from .dp import PrivacyParams, laplace_sample, node_scale, tree_height


class HorizonError(ValueError):
    pass


def level_sizes(horizon: int) -> list[int]:
    L = tree_height(horizon)
    return [horizon >> level for level in range(L)]


def tape_length(horizon: int) -> int:
    return sum(level_sizes(horizon))


def _offsets(horizon: int) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(level_sizes(horizon))]).astype(np.int64)


def decompose(c: int, horizon: int) -> list[tuple[int, int]]:
    """Dyadic nodes ``(level, index)`` whose union is ``[1..c]``, largest first."""
    L = tree_height(horizon)
    if not 0 <= c <= horizon:
        raise HorizonError(f"prefix {c} outside horizon {horizon}")
    if c == 1 << L:
        return [(L - 1, 0), (L - 1, 1)]
    return [(lv, (c >> lv) - 1) for lv in range(L - 1, -1, -1) if (c >> lv) & 1]


def draw_tape(rng: np.random.Generator, params: PrivacyParams, horizon: int) -> np.ndarray:
    n = tape_length(horizon)
    if params.noiseless:
        return np.zeros(n)
    return laplace_sample(rng, node_scale(params.epsilon, horizon), n)


def node_sums(prefix: np.ndarray, horizon: int) -> np.ndarray:
    """Exact node sums in tape order, given exact prefix sums ``prefix[0..N]``."""
    prefix = np.asarray(prefix, dtype=np.int64)
    out = []
    for level, size in enumerate(level_sizes(horizon)):
        w = 1 << level
        ends = prefix[w * np.arange(1, size + 1)]
        starts = prefix[w * np.arange(0, size)]
        out.append(ends - starts)
    return np.concatenate(out).astype(float)


def prefix_noise(tape: np.ndarray, horizon: int) -> np.ndarray:
    """Noise carried by every prefix answer ``c = 1..N`` (vectorised)."""
    L = tree_height(horizon)
    offs = _offsets(horizon)
    tape = np.asarray(tape, dtype=float)
    total = np.zeros(horizon)
    for lv in range(L):
        # c >> lv is constant on runs of 2**lv, so each level is a repeat
        size = int(offs[lv + 1] - offs[lv])
        ext = np.zeros(size + 1)
        ext[1:] = tape[offs[lv]:offs[lv + 1]]
        ext[::2] = 0.0  # node (c >> lv) - 1 counts only when bit lv of c is set
        total += np.repeat(ext, 1 << lv)[1:horizon + 1]
    if horizon == 1 << L:  # c = 2**L is the lone prefix with bit L set
        top = offs[L - 1]
        total[-1] = tape[top] + tape[top + 1]
    return total


def coupled_tape(tape: np.ndarray, bits, neighbor_bits, horizon: int) -> np.ndarray:
    """Shift node noise so a neighbouring stream releases identical answers.

    Each noisy node value ``sum + noise`` is held fixed; only nodes covering a
    changed position move, each by the (bounded) change in its exact sum.
    """
    a = np.concatenate([[0], np.cumsum(np.asarray(bits, dtype=np.int64))])
    b = np.concatenate([[0], np.cumsum(np.asarray(neighbor_bits, dtype=np.int64))])
    return np.asarray(tape) + node_sums(a, horizon) - node_sums(b, horizon)


class PrefixSumOracle:
    """Streaming DP prefix-sum oracle with a fixed horizon.

    >>> from oblivdp.dp import PrivacyParams
    >>> o = PrefixSumOracle(4, PrivacyParams(noiseless=True))
    >>> o.feed_many([1, 0, 1]); o.query(3)
    2.0
    """

    def __init__(self, horizon: int, params: PrivacyParams, rng: np.random.Generator | None = None,
                 tape: np.ndarray | None = None):
        if horizon < 1:
            raise HorizonError("horizon must be positive")
        self.horizon = int(horizon)
        self.params = params
        self.levels = tree_height(horizon)
        self.scale = node_scale(params.epsilon, horizon)
        if tape is None:
            tape = draw_tape(rng if rng is not None else np.random.default_rng(), params, horizon)
        tape = np.asarray(tape, dtype=float)
        if len(tape) != tape_length(horizon):
            raise ValueError(f"noise tape must hold {tape_length(horizon)} values")
        self.tape = tape
        self._offsets = _offsets(horizon)
        self._prefix = np.zeros(horizon + 1, dtype=np.int64)
        self.items_consumed = 0

    def feed(self, bit: int) -> None:
        if self.items_consumed >= self.horizon:
            raise HorizonError("stream exceeds the oracle's horizon")
        c = self.items_consumed
        self._prefix[c + 1] = self._prefix[c] + (1 if bit else 0)
        self.items_consumed = c + 1

    def feed_many(self, bits) -> None:
        bits = np.asarray(bits, dtype=np.int64)
        c = self.items_consumed
        if c + len(bits) > self.horizon:
            raise HorizonError("stream exceeds the oracle's horizon")
        self._prefix[c + 1:c + 1 + len(bits)] = self._prefix[c] + np.cumsum(bits != 0)
        self.items_consumed = c + len(bits)

    def nodes(self, c: int) -> list[tuple[int, int]]:
        return decompose(c, self.horizon)

    def exact(self, c: int) -> int:
        return int(self._prefix[c])

    def query(self, c: int) -> float:
        if not 0 <= c <= self.items_consumed:
            raise HorizonError(f"prefix {c} not yet available ({self.items_consumed} consumed)")
        total = 0.0
        for lv, j in decompose(c, self.horizon):
            w = 1 << lv
            exact = self._prefix[(j + 1) * w] - self._prefix[j * w]
            total += exact + self.tape[self._offsets[lv] + j]
        return float(total)
