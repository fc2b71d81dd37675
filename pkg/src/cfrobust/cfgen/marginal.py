"""
Counterfactuals that must cross the decision boundary of many posterior draws at once.

For a Bayesian linear model the margin constraint is imposed on ``s`` seeded posterior draws
(and, by default, on the posterior mean as well).  With ``q < 1`` only ``ceil(q * s)`` of the
draws have to be satisfied: the draws to relax are enumerated exactly while the number of
subsets stays under the enumeration limit and chosen greedily beyond it.

Each fixed set of half-spaces is a mixed-binary LP solved by depth-first branch-and-bound
over the polytope groups, with the LP relaxation (``scipy.optimize.linprog``, HiGHS) as the
node bound.
"""
from __future__ import annotations

import itertools
import logging
import math
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from cfrobust.cfgen.config import CESearchConfig
from cfrobust.cfgen.validity import weighted_cost
from cfrobust.core import Counterfactual, FeatureSchema, PolytopeGroup, WeightVector
from cfrobust.errors import ParameterError
from cfrobust.models.bayes import BayesianLinearModel
from cfrobust.tags import MethodKind

logger = logging.getLogger(__name__)

_INT_TOL = 1e-7


class _RelaxedProblem:
    """LP over ``(u, v, z)``: continuous moves up/down and relaxed indicator values."""

    def __init__(
        self,
        a: np.ndarray,
        b: np.ndarray,
        x: np.ndarray,
        w: np.ndarray,
        schema: FeatureSchema,
        epsilon: float,
    ) -> None:
        self.schema = schema
        self.x = x
        cont = schema.continuous_indices
        ind = schema.categorical_indices
        self.cont, self.ind = cont, ind
        nc, nz = len(cont), len(ind)
        self.nc = nc
        self.zpos = {int(j): 2 * nc + p for p, j in enumerate(ind)}

        on = x[ind] > 0.5
        self.c = np.concatenate([w[cont], w[cont], np.where(on, -w[ind], w[ind])])
        self.constant = float(np.sum(w[ind][on]))

        # a_k . x' + b_k >= eps   <=>   -a_c.u + a_c.v - a_z.z <= a_c.x_c + b_k - eps
        rows = [np.hstack([-a[:, cont], a[:, cont], -a[:, ind]])]
        rhs = [a[:, cont] @ x[cont] + b - epsilon]
        eq_rows, eq_rhs = [], []
        for g in schema.groups:
            row = np.zeros(2 * nc + nz)
            row[[self.zpos[m] for m in g.members]] = 1.0
            if g.drop_one:
                rows.append(row[None, :])
                rhs.append(np.ones(1))
            else:
                eq_rows.append(row)
                eq_rhs.append(1.0)
        self.a_ub = np.vstack(rows)
        self.b_ub = np.concatenate(rhs)
        self.a_eq = np.array(eq_rows) if eq_rows else None
        self.b_eq = np.array(eq_rhs) if eq_rhs else None

        bounds: list[tuple[float, float | None]] = []
        for sign in (1, -1):
            for j in cont:
                col_bounds = schema.columns[j].bounds
                if col_bounds is None:
                    bounds.append((0.0, None))
                elif sign > 0:
                    bounds.append((0.0, max(col_bounds[1] - x[j], 0.0)))
                else:
                    bounds.append((0.0, max(x[j] - col_bounds[0], 0.0)))
        bounds.extend((0.0, 1.0) for _ in ind)
        self.bounds = bounds

    def solve(self, fixed: dict[int, int]) -> tuple[float, np.ndarray] | None:
        bounds = list(self.bounds)
        for gi, option in fixed.items():
            g = self.schema.groups[gi]
            for m, v in zip(g.members, g.options()[option]):
                bounds[self.zpos[m]] = (float(v), float(v))
        res = linprog(
            self.c, A_ub=self.a_ub, b_ub=self.b_ub, A_eq=self.a_eq, b_eq=self.b_eq,
            bounds=bounds, method="highs",
        )
        if res.status != 0:
            if res.status != 2:
                logger.debug("linprog returned status %d: %s", res.status, res.message)
            return None
        return float(res.fun) + self.constant, np.asarray(res.x)

    def group_values(self, sol: np.ndarray, g: PolytopeGroup) -> np.ndarray:
        return sol[[self.zpos[m] for m in g.members]]

    def point(self, sol: np.ndarray, choice: dict[int, int]) -> np.ndarray:
        p = np.array(self.x, dtype=float)
        nc = self.nc
        p[self.cont] = self.x[self.cont] + sol[:nc] - sol[nc:2 * nc]
        for gi, option in choice.items():
            g = self.schema.groups[gi]
            p[list(g.members)] = g.options()[option]
        return p


def _integral_option(z: np.ndarray, g: PolytopeGroup) -> int | None:
    if np.any((np.abs(z) > _INT_TOL) & (np.abs(z - 1.0) > _INT_TOL)):
        return None
    ones = np.flatnonzero(z > 0.5)
    if g.drop_one:
        return 0 if len(ones) == 0 else (int(ones[0]) + 1 if len(ones) == 1 else None)
    return int(ones[0]) if len(ones) == 1 else None


def _option_weights(z: np.ndarray, g: PolytopeGroup) -> np.ndarray:
    return np.concatenate([[1.0 - z.sum()], z]) if g.drop_one else z


def solve_halfspaces(
    a: np.ndarray,
    b: np.ndarray,
    x: np.ndarray,
    w: WeightVector,
    schema: FeatureSchema,
    cfg: CESearchConfig,
) -> tuple[np.ndarray | None, float, int]:
    """Cheapest point satisfying ``a_k . x' + b_k >= epsilon`` for every row ``k``.

    Returns ``(point, cost, nodes)``; ``point`` is ``None`` when no assignment is feasible.
    """
    prob = _RelaxedProblem(np.atleast_2d(a), np.atleast_1d(b), x, np.asarray(w.w), schema,
                           cfg.epsilon_margin)
    groups = schema.groups
    best_cost = math.inf
    best_point: np.ndarray | None = None
    nodes = 0
    stack: list[dict[int, int]] = [{}]
    while stack:
        fixed = stack.pop()
        nodes += 1
        if nodes > cfg.node_limit:
            logger.warning("LP branch-and-bound hit the node limit %d; returning the incumbent",
                           cfg.node_limit)
            break
        solved = prob.solve(fixed)
        if solved is None:
            continue
        lb, sol = solved
        if lb >= best_cost - 1e-9:
            continue
        choice = dict(fixed)
        branch_on: int | None = None
        for gi, g in enumerate(groups):
            if gi in fixed:
                continue
            option = _integral_option(prob.group_values(sol, g), g)
            if option is None:
                branch_on = gi
                break
            choice[gi] = option
        if branch_on is None:
            best_cost, best_point = lb, prob.point(sol, choice)
            continue
        g = groups[branch_on]
        weights = _option_weights(prob.group_values(sol, g), g)
        for option in np.argsort(weights, kind="stable"):
            stack.append({**fixed, branch_on: int(option)})
    return best_point, best_cost, nodes


def _halfspaces(
    models: Sequence[tuple[np.ndarray, float]], sign: float
) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([sign * wts for wts, _ in models])
    b = np.array([sign * bias for _, bias in models])
    return a, b


def milp_marginal_counterfactual(
    b: BayesianLinearModel,
    x: np.ndarray,
    w: WeightVector,
    schema: FeatureSchema,
    cfg: CESearchConfig,
    s: int = 16,
    q: float = 1.0,
    *,
    include_mean: bool = True,
    instance_id: int = 0,
) -> Counterfactual:
    """Cheapest counterfactual valid for at least ``ceil(q * s)`` posterior draws.

    Draws come from ``b.draw(s, cfg.seed)``, so every instance faces the same draw set.
    """
    if not isinstance(b, BayesianLinearModel):
        raise ParameterError(f"milp_marg needs a Bayesian linear model, got {type(b).__name__}")
    if s < 1 or not 0.0 < q <= 1.0:
        raise ParameterError(f"need s >= 1 and q in (0, 1], got s={s}, q={q}")
    x = np.asarray(x, dtype=float)
    if x.shape != (schema.d,) or len(w) != schema.d or b.d != schema.d:
        raise ParameterError(f"dimension mismatch: x {x.shape}, model {b.d}, schema {schema.d}")

    draws = [(m.weights, m.bias) for m in b.draw(s, seed=cfg.seed)]
    required = math.ceil(q * s - 1e-9)
    fixed_rows = [(b.weights, b.bias)] if include_mean else []
    original_class = int(b.predict(x))

    def solve(kept: Sequence[int]) -> tuple[np.ndarray | None, float, int]:
        a, bb = _halfspaces([*fixed_rows, *(draws[k] for k in kept)], cfg.sign)
        return solve_halfspaces(a, bb, x, w, schema, cfg)

    evaluations = 0
    n_drop = s - required
    if n_drop == 0:
        point, cost, evaluations = solve(range(s))
    elif math.comb(s, n_drop) <= cfg.enumeration_limit:
        point, cost = None, math.inf
        for dropped in itertools.combinations(range(s), n_drop):
            p, c, n = solve([k for k in range(s) if k not in dropped])
            evaluations += n
            if p is not None and c < cost - 1e-12:
                point, cost = p, c
    else:
        kept = list(range(s))
        point, cost, n = solve(kept)
        evaluations += n
        for _ in range(n_drop):
            trials = []
            for k in kept:
                p, c, n = solve([j for j in kept if j != k])
                evaluations += n
                trials.append((c, k, p))
            c, k, p = min(trials, key=lambda t: (t[0], t[1]))
            kept.remove(k)
            point, cost = p, c

    if point is None:
        return Counterfactual.invalid(
            instance_id, x, MethodKind.MILP_MARG,
            f"no point satisfies {required} of {s} posterior draws within bounds",
            evaluations=evaluations, original_class=original_class,
        )
    valid = int(b.predict(point)) == cfg.target_class
    return Counterfactual(
        id=int(instance_id),
        original=x,
        point=point,
        method=MethodKind.MILP_MARG,
        valid=valid,
        cost=weighted_cost(x, point, w),
        evaluations=evaluations,
        reason="" if valid else "posterior-mean model does not predict the target class",
        original_class=original_class,
    )
