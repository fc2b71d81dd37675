from __future__ import annotations

import logging

import numpy as np

from cfrobust.cfgen.config import CESearchConfig
from cfrobust.cfgen.validity import inside_bounds, weighted_cost
from cfrobust.core import Counterfactual, Dataset, FeatureSchema, WeightVector
from cfrobust.errors import ParameterError
from cfrobust.models.base import Classifier
from cfrobust.tags import MethodKind

logger = logging.getLogger(__name__)


def nearest_unlike_neighbor(
    m: Classifier,
    train: Dataset,
    x: np.ndarray,
    w: WeightVector,
    schema: FeatureSchema,
    target_class: int = 1,
) -> tuple[int, np.ndarray] | None:
    """Closest in-bounds training row predicted as *target_class*, as ``(id, row)``."""
    candidates = (np.asarray(m.predict(train.x)) == target_class) & inside_bounds(train.x, schema)
    if not candidates.any():
        return None
    rows = np.flatnonzero(candidates)
    dist = np.abs(train.x[rows] - x) @ w.w
    best = rows[int(np.argmin(dist))]
    return int(train.ids[best]), np.asarray(train.x[best])


def _target_proba(m: Classifier, x: np.ndarray, target_class: int) -> np.ndarray:
    p = np.asarray(m.predict_proba(x))
    return p if target_class == 1 else 1.0 - p


def nice_counterfactual(
    m: Classifier,
    train: Dataset,
    x: np.ndarray,
    w: WeightVector,
    schema: FeatureSchema,
    cfg: CESearchConfig,
    *,
    instance_id: int = 0,
) -> Counterfactual:
    """Greedy feature substitution from the nearest unlike neighbour.

    Whole features (a polytope group counts as one) are copied from the neighbour one at a
    time, always picking the copy that raises the target-class probability most, until
    the prediction flips.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (schema.d,) or train.d != schema.d or len(w) != schema.d:
        raise ParameterError(f"dimension mismatch: x {x.shape}, train {train.d}, schema {schema.d}")
    original_class = int(m.predict(x))
    evaluations = 1
    if original_class == cfg.target_class:
        return Counterfactual(int(instance_id), x, x, MethodKind.NICE, True, 0.0, evaluations,
                              original_class=original_class)

    nun = nearest_unlike_neighbor(m, train, x, w, schema, cfg.target_class)
    evaluations += train.n
    if nun is None:
        return Counterfactual.invalid(
            instance_id,
            x,
            MethodKind.NICE,
            "no training instance is predicted as the target class",
            evaluations=evaluations, original_class=original_class,
        )
    _, neighbor = nun

    current = x.copy()
    remaining = [b for b in schema.feature_blocks() if np.any(neighbor[list(b)] != x[list(b)])]
    while remaining:
        trials = np.repeat(current[None, :], len(remaining), axis=0)
        for i, block in enumerate(remaining):
            trials[i, list(block)] = neighbor[list(block)]
        scores = _target_proba(m, trials, cfg.target_class)
        evaluations += len(remaining)
        pick = int(np.argmax(scores))
        current = trials[pick]
        remaining.pop(pick)
        if int(m.predict(current)) == cfg.target_class:
            break

    logger.debug("nice: instance %d flipped after substituting into %d features",
                 instance_id, int(np.sum(current != x)))
    return Counterfactual(
        id=int(instance_id),
        original=x,
        point=current,
        method=MethodKind.NICE,
        valid=int(m.predict(current)) == cfg.target_class,
        cost=weighted_cost(x, current, w),
        evaluations=evaluations,
        original_class=original_class,
    )
