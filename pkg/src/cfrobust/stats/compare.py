from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from cfrobust.robustness import PairedDistanceRecord
from cfrobust.stats.bayes import MCMCConfig, posterior_p_best
from cfrobust.stats.wilcoxon import rank_biserial, wilcoxon_signed_rank

logger = logging.getLogger(__name__)

MIN_PAIRS = 5

_NAN = float("nan")


@dataclass(frozen=True)
class ComparisonResult:
    """One method measured against the most robust (lowest-median) method of a bucket."""
    method: str
    reference: str
    median_delta: float
    p_value: float
    stars: str
    effect_size: float
    posterior_p_best: float
    n_pairs: int
    bucket: str = ""
    group: str = ""
    posterior_mcse: float = _NAN
    note: str = ""

    @property
    def undefined(self) -> bool:
        return math.isnan(self.p_value)


def significance_stars(p: float | None) -> str:
    """``"***"`` below 0.001, ``"**"`` below 0.01, ``"*"`` below 0.05, else ``""``.

    An undefined *p* (None or NaN) gives ``""``.
    """
    if p is None or math.isnan(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def _keyed(
    records: Sequence[PairedDistanceRecord], field: str
) -> dict[tuple[int, int, int], float]:
    return {(r.id, r.noise_level, r.replicate): float(getattr(r, field)) for r in records}


def compare_methods(
    by_method: Mapping[str, Sequence[PairedDistanceRecord]],
    *,
    bucket: str = "",
    group: str = "",
    field: str = "relative_distance",
    min_pairs: int = MIN_PAIRS,
    mcmc: MCMCConfig | None = None,
) -> list[ComparisonResult]:
    """Compare every method with the lowest-median one on their shared instances.

    *by_method* holds the records of one bucket and group per method (combo tag); only
    methods that passed the completeness gate should be passed in.  Instances are paired
    on ``(id, noise_level, replicate)``.  The reference appears first, compared with itself.
    """
    min_pairs = max(min_pairs, MIN_PAIRS)
    methods = [m for m in sorted(by_method) if by_method[m]]
    if not methods:
        logger.warning(
            "no method passed the completeness gate for bucket %r, group %r", bucket, group
        )
        return []

    medians = {m: float(np.median([getattr(r, field) for r in by_method[m]])) for m in methods}
    reference = min(methods, key=lambda m: (medians[m], m))
    ref_values = _keyed(by_method[reference], field)

    out: list[ComparisonResult] = []
    for method in [reference, *(m for m in methods if m != reference)]:
        values = _keyed(by_method[method], field)
        keys = sorted(values.keys() & ref_values.keys())
        delta = medians[reference] - medians[method]
        if len(keys) < min_pairs:
            out.append(ComparisonResult(
                method, reference, delta, _NAN, "", _NAN, _NAN, len(keys), bucket, group,
                note=f"only {len(keys)} paired instances",
            ))
            continue
        x = np.array([values[k] for k in keys])
        y = np.array([ref_values[k] for k in keys])
        test = wilcoxon_signed_rank(x, y)
        posterior = posterior_p_best(x - y, mcmc)
        out.append(ComparisonResult(
            method=method,
            reference=reference,
            median_delta=delta,
            p_value=test.p_value,
            stars=significance_stars(test.p_value),
            effect_size=rank_biserial(x, y),
            posterior_p_best=posterior.p_best,
            n_pairs=len(keys),
            bucket=bucket,
            group=group,
            posterior_mcse=posterior.mcse,
            note="; ".join(posterior.warnings),
        ))
    return out
