"""
Exact minimum-cost counterfactuals for linear models.

The problem is::

    minimize   sum_j w_j |x'_j - x_j|
    subject to sigma * (weights . x' + bias) >= epsilon      (sigma = +1 for target 1, -1 for 0)
               each polytope group takes one of its admissible options
               continuous columns stay inside their bounds

Once every group's option is fixed the rest is a fractional knapsack: continuous
coordinates are moved in order of score gained per unit of cost until the margin is met.
Small problems enumerate every joint option; larger ones run a depth-first
branch-and-bound whose node bound relaxes each remaining group to independent fractional
upgrades, which never overestimates the cost of a completion.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from cfrobust.cfgen.config import CESearchConfig
from cfrobust.cfgen.validity import weighted_cost
from cfrobust.core import Counterfactual, FeatureSchema, WeightVector
from cfrobust.errors import ParameterError
from cfrobust.models.bayes import BayesianLinearModel
from cfrobust.models.linear import LinearModel
from cfrobust.tags import MethodKind

logger = logging.getLogger(__name__)


class _Knapsack:
    """Fractional knapsack answering "cheapest way to gain ``need`` score"."""

    def __init__(self, rate: np.ndarray, unit_cost: np.ndarray, cap: np.ndarray, tag: np.ndarray):
        keep = (rate > 0) & (cap > 0)
        rate, unit_cost, cap, tag = rate[keep], unit_cost[keep], cap[keep], tag[keep]
        with np.errstate(divide="ignore"):
            ratio = np.where(unit_cost > 0, rate / np.where(unit_cost > 0, unit_cost, 1.0), np.inf)
        order = np.lexsort((np.arange(len(rate)), -ratio))
        self.rate = rate[order]
        self.unit_cost = unit_cost[order]
        self.cap = cap[order]
        self.tag = tag[order]
        with np.errstate(invalid="ignore"):
            self.cum_gain = np.cumsum(self.rate * self.cap)
            self.cum_cost = np.cumsum(np.where(self.unit_cost > 0, self.unit_cost * self.cap, 0.0))

    def cost(self, need: np.ndarray | float) -> np.ndarray:
        need = np.atleast_1d(np.asarray(need, dtype=float))
        out = np.zeros_like(need)
        pos = need > 0
        if not pos.any():
            return out
        if len(self.rate) == 0:
            out[pos] = np.inf
            return out
        k = np.searchsorted(self.cum_gain, need[pos], side="left")
        feasible = k < len(self.rate)
        kk = np.minimum(k, len(self.rate) - 1)
        prev = np.maximum(kk - 1, 0)
        with np.errstate(invalid="ignore"):
            prev_gain = np.where(kk > 0, self.cum_gain[prev], 0.0)
            prev_cost = np.where(kk > 0, self.cum_cost[prev], 0.0)
            partial = (need[pos] - prev_gain) * self.unit_cost[kk] / self.rate[kk]
            out[pos] = np.where(feasible, prev_cost + partial, np.inf)
        return out

    def amounts(self, need: float) -> dict[int, float]:
        """Amount taken per item tag to cover *need*; assumes feasibility."""
        taken: dict[int, float] = {}
        remaining = need
        for rate, cap, tag in zip(self.rate, self.cap, self.tag):
            if remaining <= 0:
                break
            amount = min(cap, remaining / rate)
            taken[int(tag)] = float(amount)
            remaining -= amount * rate
        return taken


@dataclass
class _Problem:
    """One instance in the mirrored space ``A . x' + B >= epsilon``."""
    a: np.ndarray
    b: float
    x: np.ndarray
    w: np.ndarray
    schema: FeatureSchema
    epsilon: float

    def __post_init__(self) -> None:
        s = self.schema
        self.cont = s.continuous_indices
        self.base = self.b + float(self.a[self.cont] @ self.x[self.cont])
        self.group_scores: list[np.ndarray] = []
        self.group_costs: list[np.ndarray] = []
        for g in s.groups:
            m = list(g.members)
            opts = g.options()
            self.group_scores.append(opts @ self.a[m])
            self.group_costs.append(np.abs(opts - self.x[m]) @ self.w[m])
        self.continuous = self._continuous_items()

    def _continuous_items(self) -> _Knapsack:
        rate, unit, cap, tag = [], [], [], []
        for j in self.cont:
            a_j = self.a[j]
            bounds = self.schema.columns[j].bounds
            if a_j > 0:
                room = np.inf if bounds is None else max(bounds[1] - self.x[j], 0.0)
            else:
                room = np.inf if bounds is None else max(self.x[j] - bounds[0], 0.0)
            rate.append(abs(a_j))
            unit.append(self.w[j])
            cap.append(room)
            tag.append(j)
        return _Knapsack(np.array(rate, float), np.array(unit, float), np.array(cap, float),
                         np.array(tag, dtype=np.int64))

    def need(self, cat_score: np.ndarray | float) -> np.ndarray:
        return self.epsilon - self.base - np.asarray(cat_score, dtype=float)

    def point(self, choice: tuple[int, ...], cat_score: float) -> np.ndarray:
        p = np.array(self.x, dtype=float)
        for g, c in zip(self.schema.groups, choice):
            p[list(g.members)] = g.options()[c]
        need = self.epsilon - self.base - cat_score
        if need > 0:
            for j, amount in self.continuous.amounts(need).items():
                p[j] += np.sign(self.a[j]) * amount
        return p


def _enumerate(prob: _Problem) -> tuple[tuple[int, ...] | None, float, int]:
    scores = np.zeros(1)
    costs = np.zeros(1)
    for s_g, c_g in zip(prob.group_scores, prob.group_costs):
        scores = (scores[:, None] + s_g[None, :]).ravel()
        costs = (costs[:, None] + c_g[None, :]).ravel()
    total = costs + prob.continuous.cost(prob.need(scores))
    i = int(np.argmin(total))
    if not np.isfinite(total[i]):
        return None, math.inf, len(total)
    shape = tuple(len(s) for s in prob.group_scores)
    choice = tuple(int(c) for c in np.unravel_index(i, shape)) if shape else ()
    return choice, float(scores[i]), len(total)


class _NodeLimit(Exception):
    pass


def _branch_and_bound(prob: _Problem, node_limit: int) -> tuple[tuple[int, ...] | None, float, int]:
    n_groups = len(prob.group_scores)
    cont = prob.continuous

    # suffix relaxations: every group from t on sits at its cheapest option, with
    # upgrades to the other options as independent fractional items
    suffix_cost = np.zeros(n_groups + 1)
    suffix_score = np.zeros(n_groups + 1)
    bounds: list[_Knapsack] = [cont] * (n_groups + 1)
    rate, unit, cap = [cont.rate], [cont.unit_cost], [cont.cap]
    for t in range(n_groups - 1, -1, -1):
        s_g, c_g = prob.group_scores[t], prob.group_costs[t]
        cheapest = int(np.argmin(c_g))
        suffix_cost[t] = suffix_cost[t + 1] + c_g[cheapest]
        suffix_score[t] = suffix_score[t + 1] + s_g[cheapest]
        others = np.arange(len(s_g)) != cheapest
        rate.append(s_g[others] - s_g[cheapest])
        unit.append(c_g[others] - c_g[cheapest])
        cap.append(np.ones(int(others.sum())))
        r, u, c = np.concatenate(rate), np.concatenate(unit), np.concatenate(cap)
        bounds[t] = _Knapsack(r, u, c, np.arange(len(r), dtype=np.int64))
    orders = [np.argsort(c_g, kind="stable") for c_g in prob.group_costs]

    best_cost = math.inf
    best: tuple[tuple[int, ...], float] | None = None
    nodes = 0

    def visit(t: int, score: float, cost: float, choice: list[int]) -> None:
        nonlocal best_cost, best, nodes
        nodes += 1
        if nodes > node_limit:
            raise _NodeLimit
        lb = cost + suffix_cost[t] + float(bounds[t].cost(prob.need(score + suffix_score[t]))[0])
        if lb >= best_cost - 1e-12:
            return
        if t == n_groups:
            best_cost, best = lb, (tuple(choice), score)
            return
        for c in orders[t]:
            choice.append(int(c))
            visit(t + 1, score + prob.group_scores[t][c], cost + prob.group_costs[t][c], choice)
            choice.pop()

    try:
        visit(0, 0.0, 0.0, [])
    except _NodeLimit:
        logger.warning(
            "branch-and-bound hit the node limit %d; returning the incumbent", node_limit
        )
    if best is None:
        return None, math.inf, nodes
    return best[0], best[1], nodes


def solve_linear(
    weights: np.ndarray,
    bias: float,
    x: np.ndarray,
    w: WeightVector,
    schema: FeatureSchema,
    cfg: CESearchConfig,
) -> tuple[np.ndarray | None, int]:
    """Optimal point for one linear model, or ``None`` if the margin is unreachable.

    Also returns the number of categorical assignments or search nodes examined.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (schema.d,) or len(w) != schema.d or len(weights) != schema.d:
        raise ParameterError(
            f"dimension mismatch: x {x.shape}, weights {len(weights)}, w {len(w)}, "
            f"schema {schema.d}"
        )
    prob = _Problem(cfg.sign * np.asarray(weights, float), cfg.sign * float(bias), x,
                    np.asarray(w.w), schema, cfg.epsilon_margin)
    if schema.n_assignments() <= cfg.enumeration_limit:
        choice, score, evaluations = _enumerate(prob)
    else:
        choice, score, evaluations = _branch_and_bound(prob, cfg.node_limit)
    if choice is None:
        return None, evaluations
    return prob.point(choice, score), evaluations


def _finish(
    model: LinearModel | BayesianLinearModel,
    point: np.ndarray | None,
    x: np.ndarray,
    w: WeightVector,
    cfg: CESearchConfig,
    method: str,
    instance_id: int,
    evaluations: int,
    reason: str,
) -> Counterfactual:
    original_class = int(model.predict(x))
    if point is None:
        return Counterfactual.invalid(instance_id, x, method, reason,
                                      evaluations=evaluations, original_class=original_class)
    if model.predict(point) != cfg.target_class:
        return Counterfactual.invalid(instance_id, x, method, "margin not met after rounding",
                                      evaluations=evaluations, original_class=original_class)
    return Counterfactual(
        id=int(instance_id),
        original=x,
        point=point,
        method=method,
        valid=True,
        cost=weighted_cost(x, point, w),
        evaluations=evaluations,
        original_class=original_class,
    )


def milp_counterfactual(
    m: LinearModel,
    x: np.ndarray,
    w: WeightVector,
    schema: FeatureSchema,
    cfg: CESearchConfig,
    *,
    instance_id: int = 0,
) -> Counterfactual:
    """Globally cheapest counterfactual of a linear model.

    ::

        model = LinearModel(np.array([1.0, 2.0]), -1.0)
        cf = milp_counterfactual(model, np.zeros(2), WeightVector(np.ones(2)),
                                 continuous_schema(["a", "b"]), CESearchConfig())
        cf.point   # array([0. , 0.5])
    """
    if not isinstance(m, LinearModel):
        raise ParameterError(f"milp needs a linear model, got {type(m).__name__}")
    x = np.asarray(x, dtype=float)
    point, evaluations = solve_linear(m.weights, m.bias, x, w, schema, cfg)
    return _finish(m, point, x, w, cfg, MethodKind.MILP, instance_id, evaluations,
                   "decision boundary unreachable within bounds")


def milp_mean_counterfactual(
    b: BayesianLinearModel,
    x: np.ndarray,
    w: WeightVector,
    schema: FeatureSchema,
    cfg: CESearchConfig,
    *,
    instance_id: int = 0,
) -> Counterfactual:
    """:func:`milp_counterfactual` for the posterior-mean linear model."""
    if not isinstance(b, BayesianLinearModel):
        raise ParameterError(f"milp_mean needs a Bayesian linear model, got {type(b).__name__}")
    x = np.asarray(x, dtype=float)
    point, evaluations = solve_linear(b.weights, b.bias, x, w, schema, cfg)
    return _finish(b, point, x, w, cfg, MethodKind.MILP_MEAN, instance_id, evaluations,
                   "decision boundary unreachable within bounds")
