"""
Report artifacts of a run.

Every table is a CSV with a fixed header; empty cells are written as ``NaN``.  Rows are sorted
by key before writing, so identical results give byte-identical files.

================================  ==============================================================
file                              rows
================================  ==============================================================
``descriptive.csv``               (group, combo); ``<statistic> (<bucket>)`` columns
                                  and the level-0 self-pair count of the clean bucket
``comparison.csv``                (group, combo); delta, p-value, stars, P(best) per bucket
``best_by_statistic.csv``         (group, statistic) -> lowest combo
``accuracy.csv``                  (model, replicate, noise_level)
``l1_vs_accuracy.csv``            (combo, group, noise_level) median distances next to accuracy
``completeness.csv``              (combo, replicate, noise_level) valid / attempted
``records.csv``                   every paired distance record
``ce_dump.csv``                   every counterfactual attempt, original and point
``trace_<combo>.csv``             per-instance counterfactuals across levels, decoded
``schema.json``                   clean feature schema
================================  ==============================================================
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from cfrobust.core import Counterfactual, FeatureSchema, read_schema_json, write_schema_json
from cfrobust.errors import ParameterError
from cfrobust.harness.config import ExperimentConfig
from cfrobust.harness.runner import AccuracyRecord, Attempt, ExperimentResults, RunManifest
from cfrobust.robustness import (
    PairedDistanceRecord,
    best_by_statistic,
    descriptive_table,
    records_frame,
    records_from_frame,
)
from cfrobust.stats import compare_methods
from cfrobust.tags import Bucket

logger = logging.getLogger(__name__)

ACCURACY_COLUMNS = ["model", "replicate", "noise_level", "accuracy", "n_train", "n_test"]
COMPLETENESS_COLUMNS = ["combo", "model", "method", "replicate", "noise_level", "attempts", "valid",
                        "completeness"]
L1_COLUMNS = ["combo", "model", "method", "group", "noise_level", "accuracy", "median_distance",
              "median_relative_distance", "n"]
DUMP_COLUMNS = ["model", "method", "replicate", "noise_level", "id", "group", "valid", "cost",
                "evaluations", "original_class", "reason"]
COMPARISON_FIELDS = ("Median Delta", "p-value", "Significance", "Effect Size", "Posterior P(best)",
                     "Reference", "N Pairs")


def _write(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, na_rep="NaN", lineterminator="\n")
    return path


# ---------------------------------------------------------------------------
# Individual tables
# ---------------------------------------------------------------------------

def accuracy_frame(results: ExperimentResults) -> pd.DataFrame:
    rows = [[getattr(a, c) for c in ACCURACY_COLUMNS] for a in results.accuracy]
    frame = pd.DataFrame(rows, columns=ACCURACY_COLUMNS)
    frame = frame.sort_values(["model", "replicate", "noise_level"], kind="stable")
    return frame.reset_index(drop=True)


def completeness_frame(results: ExperimentResults) -> pd.DataFrame:
    counts: dict[tuple[str, str, int, int], list[int]] = defaultdict(lambda: [0, 0])
    for a in results.attempts:
        c = counts[(a.model, a.cf.method, a.replicate, a.noise_level)]
        c[0] += 1
        c[1] += int(a.cf.valid)
    rows = [
        [f"{model}-{method}", model, method, r, level, total, valid, valid / total]
        for (model, method, r, level), (total, valid) in sorted(counts.items())
    ]
    return pd.DataFrame(rows, columns=COMPLETENESS_COLUMNS)


def dump_frame(results: ExperimentResults) -> pd.DataFrame:
    names = list(results.schema.names)
    rows = []
    for a in results.attempts:
        cf = a.cf
        rows.append([
            a.model, cf.method, a.replicate, a.noise_level, cf.id, a.group, cf.valid, cf.cost,
            cf.evaluations, cf.original_class, cf.reason,
            *cf.original.tolist(), *cf.point.tolist(),
        ])
    columns = [*DUMP_COLUMNS, *(f"orig:{n}" for n in names), *(f"cf:{n}" for n in names)]
    frame = pd.DataFrame(rows, columns=columns)
    frame["original_class"] = frame["original_class"].astype("Int64")
    return frame.sort_values(
        ["model", "method", "replicate", "noise_level", "id"], kind="stable"
    ).reset_index(drop=True)


def l1_vs_accuracy_frame(results: ExperimentResults) -> pd.DataFrame:
    acc: dict[tuple[str, int], list[float]] = defaultdict(list)
    for a in results.accuracy:
        acc[(a.model, a.noise_level)].append(a.accuracy)
    included = set(results.included_combos)
    groups = set(results.config.groups)
    cells: dict[tuple[str, str, str, str, int], list[tuple[float, float]]] = defaultdict(list)
    for r in results.records:
        if r.combo in included and r.group in groups:
            cells[(r.combo, r.model, r.method, r.group, r.noise_level)].append(
                (r.distance, r.relative_distance)
            )
    rows = []
    for (combo, model, method, group, level), values in sorted(cells.items()):
        d = np.array(values)
        rows.append([
            combo, model, method, group, level, float(np.mean(acc[(model, level)])),
            float(np.median(d[:, 0])), float(np.median(d[:, 1])), len(values),
        ])
    return pd.DataFrame(rows, columns=L1_COLUMNS)


def _reported(results: ExperimentResults) -> list[PairedDistanceRecord]:
    included = set(results.included_combos)
    groups = set(results.config.groups)
    return [r for r in results.records if r.combo in included and r.group in groups]


def descriptive_frame(results: ExperimentResults) -> pd.DataFrame:
    cfg = results.config
    table = descriptive_table(
        _reported(results),
        results.buckets,
        B=cfg.stats.bootstrap,
        alpha=cfg.stats.alpha,
        seed=cfg.seed,
        field=cfg.stats.distance_field,
        combos=results.included_combos,
    )
    # level-0 self-pairs (distance 0) sit in the bucket of the clean level
    baseline: dict[tuple[str, str], int] = defaultdict(int)
    for r in _reported(results):
        if r.noise_level == 0:
            baseline[(r.group, r.combo)] += 1
    table[f"N Baseline Pairs ({results.buckets[0]})"] = [
        baseline[(g, c)] for g, c in zip(table["group"], table["combo"])
    ]
    return table[table["group"].isin(cfg.groups)].reset_index(drop=True)


def comparison_frame(results: ExperimentResults) -> pd.DataFrame:
    """Each included combo against the most robust combo of its group and bucket."""
    cfg = results.config
    cells: dict[tuple[str, str], dict[str, list[PairedDistanceRecord]]] = defaultdict(
        lambda: defaultdict(list)
    )
    buckets = results.buckets
    for r in _reported(results):
        cells[(r.group, buckets[r.noise_level])][r.combo].append(r)

    rows: dict[tuple[str, str], dict[str, Any]] = {
        (g, c): {"group": g, "combo": c} for g in cfg.groups for c in results.included_combos
    }
    for (group, bucket), by_combo in sorted(cells.items()):
        for res in compare_methods(
            by_combo,
            bucket=bucket,
            group=group,
            field=cfg.stats.distance_field,
            min_pairs=cfg.stats.min_pairs,
            mcmc=cfg.stats.mcmc(cfg.seed),
        ):
            row = rows[(group, res.method)]
            row[f"Median Delta ({bucket})"] = res.median_delta
            row[f"p-value ({bucket})"] = res.p_value
            row[f"Significance ({bucket})"] = res.stars
            row[f"Effect Size ({bucket})"] = res.effect_size
            row[f"Posterior P(best) ({bucket})"] = res.posterior_p_best
            row[f"Reference ({bucket})"] = res.reference
            row[f"N Pairs ({bucket})"] = res.n_pairs
    columns = ["group", "combo", *(f"{f} ({b})" for f in COMPARISON_FIELDS for b in Bucket)]
    frame = pd.DataFrame(list(rows.values()), columns=columns)
    for b in Bucket:
        frame[f"N Pairs ({b})"] = frame[f"N Pairs ({b})"].astype("Int64")
    return frame


def _feature_names(schema: FeatureSchema) -> list[str]:
    names = []
    for block in schema.feature_blocks():
        col = schema.columns[block[0]]
        if col.is_continuous:
            names.append(col.name)
        else:
            g = schema.group_of(block[0])
            assert g is not None
            names.append(g.source or g.group_id)
    return names


def trace_frame(results: ExperimentResults, combo: str) -> pd.DataFrame:
    """Each instance, then its counterfactual at every level, in category labels and raw units."""
    schema = results.schema
    attempts = sorted(
        (a for a in results.attempts if a.combo == combo),
        key=lambda a: (a.replicate, a.cf.id, a.noise_level),
    )
    rows = []
    seen: set[tuple[int, int]] = set()
    for a in attempts:
        cf = a.cf
        head = {"replicate": a.replicate, "id": cf.id, "group": a.group}
        if (a.replicate, cf.id) not in seen:
            seen.add((a.replicate, cf.id))
            rows.append({**head, "row": "original", "noise_level": a.noise_level, "valid": None,
                         "cost": math.nan, **schema.decode_row(cf.original)})
        rows.append({**head, "row": "counterfactual", "noise_level": a.noise_level,
                     "valid": cf.valid, "cost": cf.cost, **schema.decode_row(cf.point)})
    columns = ["replicate", "id", "group", "row", "noise_level", "valid", "cost",
               *_feature_names(schema)]
    return pd.DataFrame(rows, columns=columns)


# ---------------------------------------------------------------------------
# Emission and reloading
# ---------------------------------------------------------------------------

def emit_tables(results: ExperimentResults, run_dir: str | Path) -> list[Path]:
    """Write every table of *results* into *run_dir*; return the written paths."""
    if not results.attempts and not results.accuracy:
        raise ParameterError("no results to tabulate")
    out = Path(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        write_schema_json(results.schema, out / "schema.json"),
        _write(records_frame(results.records), out / "records.csv"),
        _write(accuracy_frame(results), out / "accuracy.csv"),
        _write(completeness_frame(results), out / "completeness.csv"),
        _write(dump_frame(results), out / "ce_dump.csv"),
        _write(l1_vs_accuracy_frame(results), out / "l1_vs_accuracy.csv"),
    ]
    descriptive = descriptive_frame(results)
    written.append(_write(descriptive, out / "descriptive.csv"))
    written.append(_write(best_by_statistic(descriptive), out / "best_by_statistic.csv"))
    written.append(_write(comparison_frame(results), out / "comparison.csv"))
    for combo in results.combos:
        written.append(_write(trace_frame(results, combo), out / f"trace_{combo}.csv"))
    logger.info("wrote %d artifact(s) to %s", len(written), out)
    return written


def _none_if_nan(v: Any) -> Any:
    return None if isinstance(v, float) and math.isnan(v) else v


def load_results(run_dir: str | Path) -> ExperimentResults:
    """Rebuild the results of a finished run from its artifacts."""
    run = Path(run_dir)
    manifest = RunManifest.read(run)
    cfg = ExperimentConfig.from_dict(manifest.config, source=manifest.name)
    schema = read_schema_json(run / "schema.json")

    records = records_from_frame(
        pd.read_csv(run / "records.csv", float_precision="round_trip")
    )
    acc = pd.read_csv(run / "accuracy.csv", float_precision="round_trip")
    accuracy = [
        AccuracyRecord(int(r.replicate), int(r.noise_level), str(r.model), float(r.accuracy),
                       int(r.n_train), int(r.n_test))
        for r in acc.itertuples(index=False)
    ]

    dump = pd.read_csv(run / "ce_dump.csv", float_precision="round_trip")
    orig_cols = [f"orig:{n}" for n in schema.names]
    point_cols = [f"cf:{n}" for n in schema.names]
    originals = dump[orig_cols].to_numpy(dtype=float)
    points = dump[point_cols].to_numpy(dtype=float)
    attempts = []
    for k, r in enumerate(dump[DUMP_COLUMNS].itertuples(index=False)):
        original_class = _none_if_nan(r.original_class)
        reason = _none_if_nan(r.reason)
        cf = Counterfactual(
            id=int(r.id),
            original=originals[k],
            point=points[k],
            method=str(r.method),
            valid=bool(r.valid),
            cost=float(r.cost),
            evaluations=int(r.evaluations),
            reason="" if reason is None else str(reason),
            original_class=None if original_class is None else int(original_class),
        )
        attempts.append(Attempt(int(r.replicate), int(r.noise_level), str(r.model),
                                _none_if_nan(r.group), cf))
    return ExperimentResults(cfg, schema, records, accuracy, attempts, list(manifest.warnings))
