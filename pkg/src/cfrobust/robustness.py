"""
Distances between counterfactuals and their descriptive summaries.

The distance between two encoded points is the weighted l1 norm::

    D(a, b) = sum_j w_j |a_j - b_j|

with ``w_j = 1 / MAD_j`` for continuous columns and ``w_j = 1 / (Phi^-1(0.75) * sigma_j)`` for
indicator columns, both measured once on the clean training split.  A noisy-model
counterfactual ``a`` is compared with the clean-model counterfactual ``b`` of the same
instance through ``D(a, b) / D(b, 0)``.
"""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, fields
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import norm

from cfrobust.core import Counterfactual, Dataset, FeatureSchema, WeightVector
from cfrobust.errors import ParameterError, ZeroBaselineError
from cfrobust.tags import Bucket, Group, combo_tag

logger = logging.getLogger(__name__)

PHI_INV_75 = float(norm.ppf(0.75))

STATISTICS = ("Median", "P10", "P90", "IQR", "CI Low", "CI High", "N")


# ---------------------------------------------------------------------------
# Weights and distances
# ---------------------------------------------------------------------------

def feature_weights(train: Dataset, *, reference_split_id: str = "train") -> WeightVector:
    """Per-column weights of the weighted l1 distance, measured on *train*.

    A continuous column with zero MAD falls back to the indicator formula; a column with
    zero spread gets ``1 / max(range, 1)``.  Fallback columns are listed in ``degenerate``.
    """
    if train.n == 0:
        raise ParameterError("feature weights need a nonempty training split")
    x = np.asarray(train.x)
    w = np.empty(train.d)
    degenerate: list[int] = []
    for j, col in enumerate(train.schema.columns):
        v = x[:, j]
        sigma = float(v.std())
        if col.is_continuous:
            mad = float(np.median(np.abs(v - np.median(v))))
            if mad > 0:
                w[j] = 1.0 / mad
                continue
            degenerate.append(j)
        if sigma > 0:
            w[j] = 1.0 / (PHI_INV_75 * sigma)
        else:
            if not col.is_continuous:
                degenerate.append(j)
            w[j] = 1.0 / max(float(v.max() - v.min()), 1.0)
    if degenerate:
        logger.warning(
            "fallback weights for degenerate columns: %s",
            ", ".join(train.schema.columns[j].name for j in degenerate),
        )
    return WeightVector(w, reference_split_id, tuple(sorted(degenerate)))


def _vectors(
    a: Sequence[float], b: Sequence[float], w: WeightVector
) -> tuple[np.ndarray, np.ndarray]:
    av, bv = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if av.shape != bv.shape or av.shape != w.w.shape:
        raise ParameterError(f"dimension mismatch: {av.shape}, {bv.shape}, weights {w.w.shape}")
    return av, bv


def weighted_l1(a: Sequence[float], b: Sequence[float], w: WeightVector) -> float:
    av, bv = _vectors(a, b, w)
    return float(np.sum(w.w * np.abs(av - bv)))


def relative_distance(
    a: Sequence[float], b: Sequence[float], w: WeightVector, *, instance_id: object = None
) -> float:
    """``weighted_l1(a, b) / weighted_l1(b, 0)``; *b* is the baseline counterfactual."""
    av, bv = _vectors(a, b, w)
    norm_b = float(np.sum(w.w * np.abs(bv)))
    if norm_b == 0.0:
        raise ZeroBaselineError(instance_id)
    return float(np.sum(w.w * np.abs(av - bv))) / norm_b


def align(
    a: np.ndarray,
    schema_a: FeatureSchema,
    b: np.ndarray,
    schema_b: FeatureSchema,
    w: WeightVector,
) -> tuple[np.ndarray, np.ndarray, WeightVector]:
    """Project *a* and *b* onto the columns both schemas share.

    *w* is indexed like *schema_b*.  Columns keep *schema_b*'s order.
    """
    if schema_a.names == schema_b.names:
        return np.asarray(a), np.asarray(b), w
    shared = [j for j, name in enumerate(schema_b.names) if name in set(schema_a.names)]
    ia = [schema_a.index(schema_b.names[j]) for j in shared]
    return np.asarray(a)[ia], np.asarray(b)[shared], w.take(shared)


# ---------------------------------------------------------------------------
# Paired records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairedDistanceRecord:
    id: int
    noise_level: int
    method: str
    model: str
    group: str
    distance: float
    relative_distance: float
    replicate: int = 0

    def __post_init__(self) -> None:
        if self.group not in Group:
            raise ParameterError(f"unknown group {self.group!r}")
        if not (self.distance >= 0 and self.relative_distance >= 0):
            raise ParameterError("distances must be nonnegative")

    @property
    def combo(self) -> str:
        return combo_tag(self.model, self.method)


RECORD_COLUMNS = tuple(f.name for f in fields(PairedDistanceRecord))


def build_records(
    pairs: Iterable[tuple[int, Counterfactual, Counterfactual]],
    *,
    noise_level: int,
    model: str,
    method: str,
    groups: Mapping[int, str],
    w: WeightVector,
    base_schema: FeatureSchema,
    noisy_schema: FeatureSchema | None = None,
    replicate: int = 0,
) -> list[PairedDistanceRecord]:
    """One ``ALL`` record plus one TN/FN record per paired instance.

    *groups* maps an instance id to ``"TN"`` or ``"FN"``.  Instances whose baseline
    counterfactual has zero weighted norm are skipped with a warning.
    """
    out: list[PairedDistanceRecord] = []
    skipped: list[int] = []
    for instance_id, base, noisy in pairs:
        a, b, wv = align(noisy.point, noisy_schema or base_schema, base.point, base_schema, w)
        try:
            rel = relative_distance(a, b, wv, instance_id=instance_id)
        except ZeroBaselineError:
            skipped.append(instance_id)
            continue
        dist = weighted_l1(a, b, wv)
        for group in (Group.ALL, groups.get(instance_id)):
            if group is None:
                continue
            out.append(
                PairedDistanceRecord(instance_id, noise_level, method, model, group, dist, rel,
                                     replicate)
            )
    if skipped:
        logger.warning(
            "%s at level %d: skipped %d instance(s) with a zero-norm baseline counterfactual",
            combo_tag(model, method), noise_level, len(skipped),
        )
    return out


def records_frame(records: Sequence[PairedDistanceRecord]) -> pd.DataFrame:
    frame = pd.DataFrame([[getattr(r, c) for c in RECORD_COLUMNS] for r in records],
                         columns=list(RECORD_COLUMNS))
    return frame.sort_values(
        ["model", "method", "group", "replicate", "noise_level", "id"], kind="stable"
    ).reset_index(drop=True)


def records_from_frame(frame: pd.DataFrame) -> list[PairedDistanceRecord]:
    return [
        PairedDistanceRecord(
            int(r.id), int(r.noise_level), str(r.method), str(r.model), str(r.group),
            float(r.distance), float(r.relative_distance), int(r.replicate),
        )
        for r in frame.itertuples(index=False)
    ]


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RobustnessSummary:
    median: float
    p10: float
    p90: float
    iqr: float
    ci_low: float
    ci_high: float
    n: int

    def as_row(self) -> dict[str, float]:
        return {
            "Median": self.median, "P10": self.p10, "P90": self.p90, "IQR": self.iqr,
            "CI Low": self.ci_low, "CI High": self.ci_high, "N": float(self.n),
        }


def summarize(
    values: Sequence[float] | Sequence[PairedDistanceRecord],
    B: int = 2000,
    alpha: float = 0.05,
    seed: int = 0,
    *,
    field: str = "relative_distance",
) -> RobustnessSummary:
    """Median, 10th/90th percentiles, IQR and a percentile-bootstrap CI of the median.

    ::

        summarize(range(1, 101))   # median 50.5, p10 10.9, p90 90.1, iqr 49.5
    """
    items = list(values)
    if not items:
        raise ParameterError("cannot summarize an empty sample")
    if B < 1 or not 0 < alpha < 1:
        raise ParameterError(f"need B >= 1 and alpha in (0, 1), got B={B}, alpha={alpha}")
    if isinstance(items[0], PairedDistanceRecord):
        v = np.array([getattr(r, field) for r in items], dtype=float)
    else:
        v = np.asarray(items, dtype=float)

    median = float(np.median(v))
    p10, q1, q3, p90 = (float(q) for q in np.quantile(v, [0.10, 0.25, 0.75, 0.90]))

    rng = np.random.default_rng(seed)
    meds = np.empty(B)
    chunk = max(1, 2_000_000 // len(v))
    for start in range(0, B, chunk):
        stop = min(B, start + chunk)
        idx = rng.integers(0, len(v), size=(stop - start, len(v)))
        meds[start:stop] = np.median(v[idx], axis=1)
    lo, hi = (float(q) for q in np.quantile(meds, [alpha / 2.0, 1.0 - alpha / 2.0]))
    return RobustnessSummary(
        median=median,
        p10=p10,
        p90=p90,
        iqr=q3 - q1,
        ci_low=min(lo, median),
        ci_high=max(hi, median),
        n=len(v),
    )


def bucket_uncertainty(levels: Iterable[int]) -> dict[int, str]:
    """Split the distinct noise levels into Low/Medium/High terciles."""
    distinct = sorted({int(v) for v in levels})
    if len(distinct) < 3:
        raise ParameterError(f"need at least 3 distinct levels to bucket, got {distinct}")
    out: dict[int, str] = {}
    for bucket, part in zip(Bucket, np.array_split(np.array(distinct), 3)):
        for level in part:
            out[int(level)] = bucket
    return out


def _mean_summary_rows(rows: list[dict[str, float]]) -> dict[str, float]:
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


def descriptive_table(
    records: Sequence[PairedDistanceRecord],
    buckets: Mapping[int, str],
    *,
    B: int = 2000,
    alpha: float = 0.05,
    seed: int = 0,
    field: str = "relative_distance",
    combos: Sequence[str] | None = None,
) -> pd.DataFrame:
    """Rows ``(group, combo)``, columns ``"<statistic> (<bucket>)"``; empty cells are NaN.

    With several replicates the per-replicate summaries are averaged.
    """
    cells: dict[tuple[str, str, str], dict[int, list[PairedDistanceRecord]]] = defaultdict(
        lambda: defaultdict(list)
    )
    for r in records:
        cells[(r.group, r.combo, buckets[r.noise_level])][r.replicate].append(r)
    present = sorted({r.combo for r in records})
    rows = []
    for group in Group:
        for combo in combos if combos is not None else present:
            row: dict[str, object] = {"group": group, "combo": combo}
            for bucket in Bucket:
                by_rep = cells.get((group, combo, bucket))
                if by_rep:
                    stats = _mean_summary_rows([
                        summarize(recs, B, alpha, seed, field=field).as_row()
                        for _, recs in sorted(by_rep.items())
                    ])
                else:
                    stats = {s: float("nan") for s in STATISTICS}
                for s in STATISTICS:
                    row[f"{s} ({bucket})"] = stats[s]
            rows.append(row)
    columns = ["group", "combo", *(f"{s} ({b})" for s in STATISTICS for b in Bucket)]
    return pd.DataFrame(rows, columns=columns)


def best_by_statistic(table: pd.DataFrame) -> pd.DataFrame:
    """For every group and statistic column, the combo with the lowest value."""
    out = []
    stat_columns = [
        c for c in table.columns if c not in ("group", "combo") and not c.startswith("N ")
    ]
    for group, sub in table.groupby("group", sort=False):
        for column in stat_columns:
            values = sub[column].astype(float)
            if values.notna().any():
                i = values.idxmin()
                out.append({"group": group, "statistic": column, "combo": sub.at[i, "combo"],
                            "value": float(values[i])})
    return pd.DataFrame(out, columns=["group", "statistic", "combo", "value"])
