"""Paired comparisons of counterfactual robustness between methods."""
from __future__ import annotations

from cfrobust.stats.bayes import MCMCConfig, PosteriorResult, posterior_p_best
from cfrobust.stats.compare import ComparisonResult, compare_methods, significance_stars
from cfrobust.stats.wilcoxon import WilcoxonResult, rank_biserial, wilcoxon_signed_rank

__all__ = [
    "ComparisonResult",
    "MCMCConfig",
    "PosteriorResult",
    "WilcoxonResult",
    "compare_methods",
    "posterior_p_best",
    "rank_biserial",
    "significance_stars",
    "wilcoxon_signed_rank",
]
