"""
One-sided Wilcoxon signed-rank test (alternative: ``x`` systematically larger than ``y``).

Zero differences are handled by Pratt's method: they take part in the ranking and are then
dropped.  Up to ``exact_limit`` nonzero differences the null distribution of the positive
rank sum is computed exactly by counting sign assignments; tied ranks are halves, so the
count runs over doubled ranks.  Beyond that a normal approximation with continuity
correction is used, its variance ``sum(r^2) / 4`` already accounting for ties.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm, rankdata

from cfrobust.errors import ParameterError

EXACT_LIMIT = 25


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_nonzero: int
    method: str
    degenerate: bool = False


def _differences(x: Sequence[float], y: Sequence[float]) -> np.ndarray:
    xv, yv = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise ParameterError(
            f"paired samples must be equal-length vectors, got {xv.shape} and {yv.shape}"
        )
    if len(xv) == 0:
        raise ParameterError("paired samples are empty")
    return xv - yv


def signed_ranks(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pratt ranks and signs of the nonzero differences."""
    ranks = rankdata(np.abs(d), method="average")
    nonzero = d != 0
    return ranks[nonzero], np.sign(d[nonzero])


def exact_upper_tail(ranks: np.ndarray, statistic: float) -> float:
    """``P(W+ >= statistic)`` when each rank enters the sum with probability 1/2."""
    doubled = np.rint(2.0 * np.asarray(ranks)).astype(np.int64)
    counts = np.zeros(int(doubled.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        shifted = counts.copy()
        shifted[r:] += counts[: len(counts) - r]
        counts = shifted
    threshold = int(np.rint(2.0 * statistic))
    return float(counts[threshold:].sum()) / float(2 ** len(doubled))


def wilcoxon_signed_rank(
    x: Sequence[float], y: Sequence[float], *, exact_limit: int = EXACT_LIMIT
) -> WilcoxonResult:
    d = _differences(x, y)
    ranks, signs = signed_ranks(d)
    n = len(ranks)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, "exact", degenerate=True)
    w_plus = float(ranks[signs > 0].sum())
    if n <= exact_limit:
        return WilcoxonResult(w_plus, exact_upper_tail(ranks, w_plus), n, "exact")
    mean = float(ranks.sum()) / 2.0
    sd = float(np.sqrt(np.sum(ranks**2) / 4.0))
    z = (w_plus - mean - 0.5) / sd
    return WilcoxonResult(w_plus, float(norm.sf(z)), n, "normal")


def rank_biserial(x: Sequence[float], y: Sequence[float]) -> float:
    """``(W+ - W-) / (W+ + W-)`` over the ranks of the nonzero differences."""
    d = _differences(x, y)
    d = d[d != 0]
    if len(d) == 0:
        return 0.0
    r = rankdata(np.abs(d), method="average")
    w_plus, w_minus = float(r[d > 0].sum()), float(r[d < 0].sum())
    return (w_plus - w_minus) / (w_plus + w_minus)
