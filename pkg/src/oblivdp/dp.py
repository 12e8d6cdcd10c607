"""Laplace noise, the Laplace-sum tail bound, and buffer-bound estimation.

All logarithms here are natural logarithms.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np

# u = k * 2**-53 from Generator.random(); shifting by half a step keeps u in (0, 1)
_HALF_ULP = 2.0 ** -54


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class PrivacyParams:
    """(epsilon, delta) pair.  ``noiseless`` switches every mechanism off.

    The noiseless mode exists only for correctness oracles; it provides no
    privacy whatsoever.
    """

    epsilon: float = 1.0
    delta: float = 2.0 ** -30
    noiseless: bool = False

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ParameterError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if not 0 < self.delta < 0.5:
            raise ParameterError(f"delta must lie in (0, 1/2), got {self.delta}")

    def with_delta(self, delta: float) -> "PrivacyParams":
        return PrivacyParams(self.epsilon, delta, self.noiseless)


def laplace_sample(rng: np.random.Generator, b: float, size=None):
    """Draw from Lap(b) by inverting the CDF at a uniform draw."""
    if not b > 0:
        raise ParameterError(f"Laplace scale must be positive, got {b}")
    u = rng.random(size) + _HALF_ULP - 0.5
    return -b * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def laplace_tail(b: float, delta: float) -> float:
    """Two-sided single-draw tail: Pr[|x| > b ln(1/delta)] = delta."""
    return b * math.log(1.0 / delta)


def laplace_sum_tail(n: int, b: float, delta: float) -> float:
    """Bound t with Pr[x_1 + ... + x_n > t] <= delta for i.i.d. Lap(b) draws."""
    if n < 1 or not b > 0 or not 0 < delta <= 1:
        raise ParameterError("need n >= 1, b > 0 and 0 < delta <= 1")
    l3 = math.log(3.0 / delta)
    return max(math.sqrt(4.0 * n * b * b * l3), (2.0 / 3.0) * b * math.log(3.0 * n / delta) * l3)


def tree_height(n: int) -> int:
    """Number of levels L = ceil(log2 N) in the prefix-sum tree (at least 1)."""
    if n < 1:
        raise ParameterError("horizon must be positive")
    return max(1, math.ceil(math.log2(n)))


def node_scale(epsilon: float, horizon: int) -> float:
    """Laplace scale of one tree node: the budget is split evenly across levels."""
    return tree_height(horizon) / epsilon


class BoundMode(str, enum.Enum):
    ANALYTIC = "analytic"
    SIMULATED = "simulated"
    NOISELESS = "noiseless"


@dataclass(frozen=True)
class BufferBound:
    s: int
    mode: BoundMode
    raw: float = 0.0


def _sum_of_laplace_quantiles(n: int, b: float, probs, trials_per_prob: float,
                              rng: np.random.Generator, max_trials: int = 4_000_000,
                              chunk: int = 250_000) -> np.ndarray:
    """Empirical upper quantiles of |x_1 + ... + x_n| at tail probabilities ``probs``."""
    probs = np.asarray(probs, dtype=float)
    need = int(min(max_trials, math.ceil(trials_per_prob / probs.min())))
    sums = np.empty(need)
    for lo in range(0, need, chunk):
        hi = min(need, lo + chunk)
        sums[lo:hi] = laplace_sample(rng, b, (hi - lo, n)).sum(axis=1)
    mags = np.abs(sums)
    out = []
    for p in probs:
        m = int(math.ceil(trials_per_prob / p))
        out.append(np.quantile(mags[:min(m, need)], 1.0 - p))
    return np.array(out)


@dataclass(frozen=True)
class ConcentrationFit:
    deltas: np.ndarray
    quantiles: np.ndarray
    slope: float
    intercept: float
    r_squared: float

    def predict(self, delta: float) -> float:
        return self.intercept + self.slope * math.log(1.0 / delta)


def simulate_concentration(epsilon: float, horizon: int, deltas, trials_per_delta: float = 200,
                           seed: int = 0) -> ConcentrationFit:
    """Monte Carlo quantiles of the worst-case prefix noise, fitted against ln(1/delta).

    A prefix answer sums at most L node noises, so the (1 - delta) quantile of
    |sum of L Lap(b)| is simulated for each delta and regressed on ln(1/delta).
    """
    L = tree_height(horizon)
    b = node_scale(epsilon, horizon)
    deltas = np.asarray(sorted(deltas, reverse=True), dtype=float)
    rng = np.random.default_rng(seed)
    q = _sum_of_laplace_quantiles(L, b, deltas, trials_per_delta, rng)
    x = np.log(1.0 / deltas)
    slope, intercept = np.polyfit(x, q, 1)
    pred = intercept + slope * x
    ss_res = float(np.sum((q - pred) ** 2))
    ss_tot = float(np.sum((q - q.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ConcentrationFit(deltas, q, float(slope), float(intercept), r2)


# deltas we are willing to simulate directly; smaller ones are extrapolated
SIMULABLE_DELTAS = tuple(2.0 ** -k for k in range(5, 16))


@functools.lru_cache(maxsize=256)
def _bound_raw(epsilon: float, delta: float, n: int, mode: BoundMode, seed: int, trials_per_delta: float) -> float:
    L = tree_height(n)
    b = node_scale(epsilon, n)
    if mode is BoundMode.ANALYTIC:
        return laplace_sum_tail(L, b, delta / (2.0 * n))
    target = delta / n
    if target >= min(SIMULABLE_DELTAS):
        rng = np.random.default_rng(seed)
        return float(_sum_of_laplace_quantiles(L, b, [target], trials_per_delta, rng)[0])
    fit = simulate_concentration(epsilon, n, SIMULABLE_DELTAS, trials_per_delta, seed)
    return fit.predict(target)


def estimate_buffer_bound(params: PrivacyParams, n: int, mode: BoundMode | str = BoundMode.ANALYTIC,
                          rows_per_block: int = 1, seed: int = 0,
                          trials_per_delta: float = 200) -> BufferBound:
    """Buffer bound ``s`` such that every prefix answer is within ``s`` whp.

    Analytic mode applies :func:`laplace_sum_tail` with n = L summands and a
    union bound over the N prefixes and both signs (delta / 2N per event).
    Simulated mode uses the empirical quantile at delta / N, extrapolated
    linearly in ln(1/delta) when that is too small to simulate.
    """
    if n < 2:
        raise ParameterError("horizon must be at least 2")
    mode = BoundMode(mode)
    floor = max(1, int(rows_per_block))
    if params.noiseless or mode is BoundMode.NOISELESS:
        return BufferBound(floor, BoundMode.NOISELESS, 0.0)
    raw = _bound_raw(params.epsilon, params.delta, n, mode, seed, trials_per_delta)
    return BufferBound(max(floor, math.ceil(raw)), mode, float(raw))
