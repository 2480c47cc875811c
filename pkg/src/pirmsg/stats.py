"""Small statistical checks used by tests and the trace comparator."""

from __future__ import annotations

import numpy as np
from scipy import stats
from scipy.special import erfc


def monobit_pvalue(data: bytes) -> float:
    """NIST frequency (monobit) test over the bits of ``data``."""
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if bits.size == 0:
        return 1.0
    s = abs(int(bits.sum()) * 2 - bits.size)
    return float(erfc(s / np.sqrt(2 * bits.size)))


def chi2_uniform_pvalue(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    return float(stats.chisquare(counts).pvalue)


def within_sigma(count: float, trials: int, p: float, k: float = 4.0) -> bool:
    """True when ``count`` is within ``k`` binomial standard deviations of ``trials * p``."""
    sigma = np.sqrt(trials * p * (1 - p))
    return abs(count - trials * p) <= k * sigma
