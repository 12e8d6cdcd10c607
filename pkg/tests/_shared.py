"""Expensive Monte Carlo samples shared between test modules (cached per session)."""
import functools

import numpy as np

from oblivdp.dp import PrivacyParams
from oblivdp.prefix_sum import draw_tape, prefix_noise


@functools.lru_cache(maxsize=None)
def worst_prefix_noise(n: int = 2 ** 16, trials: int = 10_000, epsilon: float = 1.0, seed: int = 4) -> np.ndarray:
    """max_c |noise_c| for ``trials`` independent binary-mechanism runs of horizon ``n``."""
    p = PrivacyParams(epsilon, 1e-3)
    rng = np.random.default_rng(seed)
    return np.array([np.abs(prefix_noise(draw_tape(rng, p, n), n)).max() for _ in range(trials)])
