from __future__ import annotations

from typing import Sequence

import numpy as np

from cfrobust.core import Counterfactual, FeatureSchema, WeightVector, validate_rows
from cfrobust.errors import ParameterError
from cfrobust.models.base import Classifier


def weighted_cost(a: np.ndarray, b: np.ndarray, w: WeightVector) -> float:
    return float(np.sum(w.w * np.abs(np.asarray(a, float) - np.asarray(b, float))))


def check_counterfactual(
    model: Classifier,
    cf: Counterfactual,
    schema: FeatureSchema,
    target_class: int = 1,
    w: WeightVector | None = None,
) -> list[str]:
    """Every reason a counterfactual flagged valid should not be; empty means sound."""
    if not cf.valid:
        return []
    problems: list[str] = []
    predicted = model.predict(cf.point)
    if predicted != target_class:
        problems.append(f"instance {cf.id}: point predicts {predicted}, not {target_class}")
    problems.extend(validate_rows(cf.point[None, :], schema, row_labels=[cf.id]))
    if w is not None:
        recomputed = weighted_cost(cf.original, cf.point, w)
        if abs(recomputed - cf.cost) > 1e-9 * max(1.0, recomputed):
            problems.append(f"instance {cf.id}: cost {cf.cost!r} but distance is {recomputed!r}")
    return problems


def completeness(attempts: Sequence[Counterfactual]) -> float:
    """Fraction of attempts that produced a valid counterfactual."""
    if not attempts:
        raise ParameterError("completeness of zero attempts is undefined")
    return sum(1 for cf in attempts if cf.valid) / len(attempts)


def inside_bounds(x: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    """Row mask of continuous values within their schema bounds."""
    m = np.atleast_2d(np.asarray(x, dtype=float))
    ok = np.ones(m.shape[0], dtype=bool)
    for j, col in enumerate(schema.columns):
        if col.is_continuous and col.bounds is not None:
            lo, hi = col.bounds
            ok &= (m[:, j] >= lo) & (m[:, j] <= hi)
    return ok


def clip_to_bounds(x: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    out = np.array(x, dtype=float)
    for j, col in enumerate(schema.columns):
        if col.is_continuous and col.bounds is not None:
            out[..., j] = np.clip(out[..., j], *col.bounds)
    return out
