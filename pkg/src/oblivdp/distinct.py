"""Differentially private distinct counting with a bottom-t hash sketch.

Items are hashed by a keyed PRF into 64-bit integers (read as ``k / 2**64`` in
[0, 1)).  The sketch keeps the ``t`` smallest distinct hashes; with ``v`` the
largest of them, ``t / v`` estimates the number of distinct items, and a
Laplace draw calibrated to the estimator's sensitivity makes it private.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .dp import ParameterError, laplace_sample
from .stats import CheckResult, at_least

TWO64 = float(2 ** 64)


class UnderfilledSketch(RuntimeError):
    """Fewer than ``t`` distinct items were seen."""


# PRFs ----------------------------------------------------------------------

def _as_byte_matrix(items) -> np.ndarray:
    """Fixed-width byte rows for a batch of int64 or fixed-width bytes items."""
    arr = np.asarray(items)
    if arr.dtype.kind in "iu":
        arr = arr.astype("<i8")
        width = 8
    elif arr.dtype.kind == "S":
        width = max(arr.dtype.itemsize, 1)
    else:
        raise TypeError(f"cannot hash items of dtype {arr.dtype}")
    mat = np.frombuffer(arr.tobytes(), dtype=np.uint8).reshape(len(arr), width)
    padded = -(-width // 16) * 16
    if padded != width:
        mat = np.concatenate([mat, np.zeros((len(arr), padded - width), np.uint8)], axis=1)
    return mat


class AesPrf:
    """AES-128 CBC-MAC over fixed-width item encodings.

    CBC-MAC is a PRF on inputs of one fixed length, which holds here because
    every item of a column has the column's width.  Batches are evaluated
    column-block by column-block through ECB so the whole batch is vectorised.
    """

    def __init__(self, key: bytes):
        if len(key) != 16:
            raise ValueError("PRF key must be 128 bits")
        self._cipher = Cipher(algorithms.AES(key), modes.ECB())

    def hash_ints(self, items) -> np.ndarray:
        mat = _as_byte_matrix(items)
        n = len(mat)
        if n == 0:
            return np.zeros(0, np.uint64)
        state = np.zeros((n, 16), np.uint8)
        enc = self._cipher.encryptor()
        for col in range(0, mat.shape[1], 16):
            block = np.bitwise_xor(state, mat[:, col:col + 16])
            state = np.frombuffer(enc.update(block.tobytes()), np.uint8).reshape(n, 16)
        return state[:, :8].copy().view(">u8").ravel().astype(np.uint64)

    def __call__(self, item) -> int:
        return int(self.hash_ints(np.asarray([item]))[0])


class IdentityPrf:
    """Test-only PRF: items are numbers in [0, 1) and hash to themselves."""

    def hash_ints(self, items) -> np.ndarray:
        x = np.asarray(items, dtype=float)
        return np.minimum(np.round(x * TWO64), TWO64 - 2048).astype(np.uint64)

    def __call__(self, item) -> int:
        return int(self.hash_ints([item])[0])


def to_unit(h) -> float | np.ndarray:
    return np.asarray(h, dtype=np.float64) / TWO64


# sizing -------------------------------------------------------------------

def _check(epsilon, eta, delta):
    if not 0 < epsilon <= 1:
        raise ParameterError("epsilon must lie in (0, 1]")
    if eta is not None and not 0 < eta < 0.5:
        raise ParameterError("eta must lie in (0, 1/2)")
    if not 0 < delta < 0.5:
        raise ParameterError("delta must lie in (0, 1/2)")


def _log_mix(epsilon: float, delta: float) -> float:
    return math.log(24.0 * (1.0 + math.exp(-epsilon)) / delta)


def approximation_term(eta: float, delta: float) -> float:
    q = eta / 4.0
    return 3.0 * (1.0 + q) / (q * q) * math.log(6.0 / delta)


def sensitivity_term(epsilon: float, eta: float, delta: float) -> float:
    return 20.0 / epsilon / (eta / 4.0) * _log_mix(epsilon, delta) * math.log(3.0 / delta)


def sketch_size_for(epsilon: float, eta: float, delta: float) -> int:
    """Smallest integer ``t`` meeting both the accuracy and the noise requirement."""
    _check(epsilon, eta, delta)
    return math.ceil(max(approximation_term(eta, delta), sensitivity_term(epsilon, eta, delta)))


def sketch_size_1p1(epsilon: float, delta: float) -> int:
    """Sketch size of the 1.1-approximate variant (eta fixed at 0.1)."""
    _check(epsilon, None, delta)
    return math.ceil(1e3 / epsilon * _log_mix(epsilon, delta) * math.log(3.0 / delta))


def noise_scale(epsilon: float, delta: float, t: int, n_plugin: float) -> float:
    return 20.0 / epsilon * (n_plugin / t) * _log_mix(epsilon, delta)


def estimate_from_v(v, t: int, epsilon: float, eta: float, delta: float, unit_noise=0.0):
    """Vectorised estimator ``(1 + 3 eta / 4) t / v + scale * unit_noise``.

    ``unit_noise`` is a Lap(1) draw; the scale uses the plug-in ``n = t / v``.
    """
    v = np.asarray(v, dtype=float)
    raw = t / v
    scale = noise_scale(epsilon, delta, t, raw)
    return (1.0 + 0.75 * eta) * raw + scale * unit_noise, scale


# sketch -------------------------------------------------------------------

@dataclass(frozen=True)
class DistinctEstimate:
    g_tilde: float
    t_used: int
    v: float
    noise_scale: float
    unit_noise: float
    underfilled: bool = False


class DistinctSketch:
    """Bottom-``t`` sketch of PRF hashes (held as 64-bit integers)."""

    def __init__(self, t: int, prf):
        if t < 1:
            raise ValueError("sketch size must be positive")
        self.t = int(t)
        self.prf = prf
        self._heap: list[int] = []  # negated values, so heap[0] is -max
        self._members: set[int] = set()
        self.items_seen = 0

    def __len__(self) -> int:
        return len(self._heap)

    @property
    def full(self) -> bool:
        return len(self._heap) >= self.t

    @property
    def top(self) -> int:
        return -self._heap[0]

    def values(self) -> np.ndarray:
        return np.sort(np.fromiter((-x for x in self._heap), dtype=np.uint64, count=len(self._heap)))

    def _offer(self, y: int) -> None:
        if y in self._members:
            return
        if len(self._heap) < self.t:
            heapq.heappush(self._heap, -y)
            self._members.add(y)
        elif y < -self._heap[0]:
            old = -heapq.heapreplace(self._heap, -y)
            self._members.discard(old)
            self._members.add(y)

    def update(self, item) -> None:
        self.items_seen += 1
        self._offer(self.prf(item))

    def update_many(self, items) -> None:
        hashes = self.prf.hash_ints(items)
        self.items_seen += len(hashes)
        if self.full:
            hashes = hashes[hashes < np.uint64(self.top)]
        for y in np.unique(hashes)[: self.t].tolist():
            self._offer(y)

    def estimate(self, epsilon: float, eta: float, delta: float, rng: np.random.Generator | None = None,
                 unit_noise: float | None = None, strict: bool = True,
                 noiseless: bool = False) -> DistinctEstimate:
        """Noisy distinct count.

        An under-filled sketch raises :class:`UnderfilledSketch` when ``strict``;
        otherwise it returns the exact count of distinct hashes plus noise scaled
        as if ``n`` were that count, flagged ``underfilled``.
        """
        _check(epsilon, eta, delta)
        if unit_noise is None:
            unit_noise = 0.0 if noiseless else float(laplace_sample(rng or np.random.default_rng(), 1.0))
        if noiseless:
            unit_noise = 0.0
        if not self.full:
            if strict:
                raise UnderfilledSketch(f"{len(self)} distinct hashes seen, sketch needs {self.t}")
            h = len(self._heap)
            scale = noise_scale(epsilon, delta, self.t, h)
            v = to_unit(self.top) if h else 0.0
            return DistinctEstimate(h + scale * unit_noise, h, float(v), scale, unit_noise, True)
        v = float(to_unit(self.top))
        g, scale = estimate_from_v(v, self.t, epsilon, eta, delta, unit_noise)
        return DistinctEstimate(float(g), self.t, v, float(scale), unit_noise)


# Monte Carlo verifiers -----------------------------------------------------

def _order_stats(rng, n, ks, trials, chunk_elems=20_000_000):
    """Rows of the ``ks``-th smallest (1-based) of ``n`` fresh uniforms, per trial."""
    out = np.empty((trials, len(ks)))
    per = max(1, chunk_elems // n)
    kth = [k - 1 for k in ks]
    for lo in range(0, trials, per):
        hi = min(trials, lo + per)
        u = rng.random((hi - lo, n))
        u.partition(kth, axis=1)
        out[lo:hi] = u[:, kth]
    return out


def verify_order_statistics(n: int, t: int, trials: int, delta: float = 0.1, alpha: float = 20.0,
                            eta: float = 0.25, delta_approx: float = 0.4, seed: int = 0) -> list[CheckResult]:
    """Monte Carlo check of the order-statistic claims behind the sketch."""
    if not 1 <= t <= n / 2:
        raise ParameterError("need 1 <= t <= n/2")
    if not 4 < alpha < n / 2:
        raise ParameterError("need 4 < alpha < n/2")
    if not t > 3 * (1 + eta) / eta ** 2 * math.log(2 / delta_approx):
        raise ParameterError("t too small for the approximation claim at this eta and delta")
    rng = np.random.default_rng(seed)
    ys = _order_stats(rng, n, [t, t + 1], trials)
    yt, yt1 = ys[:, 0], ys[:, 1]
    return [
        at_least("y_t > delta t / n", 1 - delta, int(np.sum(yt > delta * t / n)), trials),
        at_least("y_t > t / 2n", 1 - math.exp(-t / 6), int(np.sum(yt > t / (2 * n))), trials),
        at_least("y_(t+1) < y_t + alpha / n", 1 - math.exp(-alpha / 4),
                 int(np.sum(yt1 < yt + alpha / n)), trials),
        at_least("|1/y_t - 1/y_(t+1)| < 4 alpha n / t^2", 1 - math.exp(-t / 6) - math.exp(-alpha / 4),
                 int(np.sum(np.abs(1 / yt - 1 / yt1) < 4 * alpha * n / t ** 2)), trials),
        at_least("(1-eta) n <= t / y_t <= (1+eta) n", 1 - delta_approx,
                 int(np.sum(((1 - eta) * n <= t / yt) & (t / yt <= (1 + eta) * n))), trials),
    ]


def verify_sensitivity(n: int, t: int, trials: int, delta: float = 0.05, seed: int = 0) -> CheckResult:
    """Empirical (1 - delta) quantile of the neighbour gap in ``t / y_t``.

    Neighbouring streams differ by one distinct element: the first ``n`` of
    ``n + 1`` fresh hashes against all of them.
    """
    if not 16 < t < n / 2:
        raise ParameterError("need 16 < t < n/2")
    rng = np.random.default_rng(seed)
    gaps = np.empty(trials)
    per = max(1, 20_000_000 // (n + 1))
    for lo in range(0, trials, per):
        hi = min(trials, lo + per)
        u = rng.random((hi - lo, n + 1))
        a = np.partition(u[:, :n], t - 1, axis=1)[:, t - 1]
        b = np.partition(u, t - 1, axis=1)[:, t - 1]
        gaps[lo:hi] = np.abs(t / a - t / b)
    bound = 20 * math.log(4 / delta) * n / t
    q = float(np.quantile(gaps, 1 - delta))
    return CheckResult("(1-delta) quantile of neighbour gap in t/y_t", bound, q, 0.0, q <= bound, "<=")


def sample_estimates(n: int, t: int, epsilon: float, eta: float, delta: float, trials: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Estimates for ``trials`` independent sketches of ``n`` distinct items.

    The ``t``-th smallest of ``n`` uniform hashes is Beta(t, n - t + 1), so ``v``
    is drawn from that law directly rather than by hashing ``n`` items per trial.
    """
    v = rng.beta(t, n - t + 1, size=trials)
    g, _ = estimate_from_v(v, t, epsilon, eta, delta, laplace_sample(rng, 1.0, trials))
    return g
