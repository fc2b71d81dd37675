"""Counterfactual generators.

Every generator returns a :class:`~cfrobust.core.Counterfactual`, flagged invalid (with a
``reason``) instead of raising when no counterfactual is found.  :func:`generate` dispatches
on a :class:`~cfrobust.tags.MethodKind` tag::

    cf = generate("nice", model, x, w, schema, CESearchConfig(), train=train, instance_id=7)
"""
from __future__ import annotations

import inspect
from typing import Any, Callable, Mapping

import numpy as np

from cfrobust.cfgen.config import CESearchConfig
from cfrobust.cfgen.marginal import milp_marginal_counterfactual
from cfrobust.cfgen.milp import milp_counterfactual, milp_mean_counterfactual
from cfrobust.cfgen.nice import nice_counterfactual
from cfrobust.cfgen.random_search import random_search_counterfactual
from cfrobust.cfgen.validity import check_counterfactual, completeness
from cfrobust.core import Counterfactual, Dataset, FeatureSchema, WeightVector
from cfrobust.errors import ParameterError
from cfrobust.models.base import Classifier
from cfrobust.tags import MethodKind

__all__ = [
    "CESearchConfig",
    "Counterfactual",
    "check_counterfactual",
    "completeness",
    "generate",
    "milp_counterfactual",
    "milp_marginal_counterfactual",
    "milp_mean_counterfactual",
    "nice_counterfactual",
    "random_search_counterfactual",
]

_GENERATORS: dict[str, Callable[..., Counterfactual]] = {
    MethodKind.MILP: milp_counterfactual,
    MethodKind.MILP_MEAN: milp_mean_counterfactual,
    MethodKind.MILP_MARG: milp_marginal_counterfactual,
    MethodKind.RANDOM_SEARCH: random_search_counterfactual,
}


def generate(
    method: str,
    model: Classifier,
    x: np.ndarray,
    w: WeightVector,
    schema: FeatureSchema,
    cfg: CESearchConfig,
    *,
    train: Dataset | None = None,
    instance_id: int = 0,
    params: Mapping[str, Any] | None = None,
) -> Counterfactual:
    """Run the generator named *method*; *params* holds its method-specific options."""
    kwargs = dict(params or {})
    if method == MethodKind.NICE:
        if train is None:
            raise ParameterError("nice needs the training data")
        if kwargs:
            raise ParameterError(f"nice takes no extra parameters, got {sorted(kwargs)}")
        return nice_counterfactual(model, train, x, w, schema, cfg, instance_id=instance_id)
    try:
        fn = _GENERATORS[method]
    except KeyError:
        raise ParameterError(f"unknown counterfactual method {method!r}") from None
    try:
        inspect.signature(fn).bind(model, x, w, schema, cfg, instance_id=instance_id, **kwargs)
    except TypeError as e:
        raise ParameterError(f"bad parameters for method {method!r}: {e}") from None
    return fn(model, x, w, schema, cfg, instance_id=instance_id, **kwargs)
