from __future__ import annotations

import logging
import math

import numpy as np

from cfrobust.cfgen.config import CESearchConfig
from cfrobust.cfgen.validity import clip_to_bounds, weighted_cost
from cfrobust.core import Counterfactual, FeatureSchema, WeightVector
from cfrobust.errors import ParameterError
from cfrobust.models.base import Classifier
from cfrobust.tags import MethodKind

logger = logging.getLogger(__name__)

BATCH_SIZE = 256


def _resample_groups(
    candidates: np.ndarray,
    schema: FeatureSchema,
    flip_probability: float,
    rng: np.random.Generator,
) -> None:
    n = candidates.shape[0]
    for g in schema.groups:
        hit = rng.random(n) < flip_probability
        pick = rng.integers(0, g.n_categories, size=n)
        rows = np.flatnonzero(hit)
        candidates[np.ix_(rows, list(g.members))] = g.options()[pick[rows]]


def random_search_counterfactual(
    m: Classifier,
    x: np.ndarray,
    w: WeightVector,
    schema: FeatureSchema,
    cfg: CESearchConfig,
    proposal_scale: float = 1.0,
    *,
    shrink: float = 0.95,
    flip_probability: float = 0.2,
    instance_id: int = 0,
) -> Counterfactual:
    """Budgeted sampling search for a cheap valid counterfactual.

    Continuous coordinates get Gaussian proposals (in cost units, so scale ``s`` moves
    column ``j`` by about ``s / w_j``) around the best valid point so far; the scale grows
    until a first valid point appears and then shrinks geometrically.  Half of every later
    batch interpolates between the instance and the incumbent.  Polytope groups are
    resampled uniformly with probability ``flip_probability``.  Draws come from a generator
    seeded by ``(cfg.seed, instance_id)``.
    """
    if proposal_scale <= 0 or not 0 < shrink <= 1 or not 0 <= flip_probability <= 1:
        raise ParameterError(
            "need proposal_scale > 0, shrink in (0, 1], flip_probability in [0, 1]"
        )
    x = np.asarray(x, dtype=float)
    if x.shape != (schema.d,) or len(w) != schema.d:
        raise ParameterError(f"dimension mismatch: x {x.shape}, schema {schema.d}")

    rng = np.random.default_rng([int(cfg.seed), int(instance_id)])
    original_class = int(m.predict(x))
    evaluations = 1
    if original_class == cfg.target_class:
        return Counterfactual(int(instance_id), x, x, MethodKind.RANDOM_SEARCH, True, 0.0,
                              evaluations, original_class=original_class)

    cont = schema.continuous_indices
    step = 1.0 / np.asarray(w.w)[cont]
    scale = proposal_scale
    best: np.ndarray | None = None
    best_cost = math.inf

    while evaluations < cfg.budget:
        n = min(BATCH_SIZE, cfg.budget - evaluations)
        center = x if best is None else best
        cand = np.repeat(center[None, :], n, axis=0)

        # Gaussian moves on a random subset of the continuous coordinates
        if len(cont):
            mask = rng.random((n, len(cont))) < 0.5
            mask[np.arange(n), rng.integers(0, len(cont), size=n)] = True
            noise = rng.standard_normal((n, len(cont))) * scale * step
            cand[:, cont] += np.where(mask, noise, 0.0)
        _resample_groups(cand, schema, flip_probability, rng)

        if best is not None:
            half = n // 2
            t = rng.random(half)
            mix = x[None, :] + t[:, None] * (best - x)[None, :]
            for g in schema.groups:
                keep_x = rng.random(half) < 0.5
                mem = list(g.members)
                mix[:, mem] = np.where(keep_x[:, None], x[mem], best[mem])
            cand[:half] = mix

        cand = clip_to_bounds(cand, schema)
        evaluations += n
        valid = np.asarray(m.predict(cand)) == cfg.target_class
        if valid.any():
            costs = np.abs(cand[valid] - x) @ w.w
            i = int(np.argmin(costs))
            if costs[i] < best_cost:
                best_cost, best = float(costs[i]), cand[valid][i]
        scale = scale * shrink if best is not None else min(scale * 1.5, 1e3 * proposal_scale)

    if best is None:
        return Counterfactual.invalid(
            instance_id, x, MethodKind.RANDOM_SEARCH,
            f"no valid candidate within a budget of {cfg.budget}",
            evaluations=evaluations, original_class=original_class,
        )
    return Counterfactual(
        id=int(instance_id),
        original=x,
        point=best,
        method=MethodKind.RANDOM_SEARCH,
        valid=True,
        cost=weighted_cost(x, best, w),
        evaluations=evaluations,
        original_class=original_class,
    )
