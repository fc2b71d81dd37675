"""Binary classifiers sharing the :class:`Classifier` interface.

``fit_model`` dispatches on a :class:`~cfrobust.tags.ModelKind` tag, so configuration files can
name a model and its hyperparameters::

    model = fit_model("rf", train, {"n_trees": 50, "seed": 3})
"""
from __future__ import annotations

import inspect
from typing import Any, Mapping

from cfrobust.core import Dataset
from cfrobust.errors import ParameterError
from cfrobust.models.base import Classifier
from cfrobust.models.bayes import BayesianLinearModel, fit_bayes_logistic
from cfrobust.models.evaluation import ConfusionSplit, accuracy, confusion_split
from cfrobust.models.forest import RandomForest, fit_random_forest
from cfrobust.models.linear import LinearModel, fit_logistic
from cfrobust.models.mlp import MLP, fit_mlp
from cfrobust.tags import ModelKind

__all__ = [
    "BayesianLinearModel",
    "Classifier",
    "ConfusionSplit",
    "LinearModel",
    "MLP",
    "RandomForest",
    "accuracy",
    "confusion_split",
    "fit_bayes_logistic",
    "fit_logistic",
    "fit_mlp",
    "fit_model",
    "fit_random_forest",
]

_FITTERS = {
    ModelKind.LR: fit_logistic,
    ModelKind.BLR: fit_bayes_logistic,
    ModelKind.RF: fit_random_forest,
    ModelKind.MLP: fit_mlp,
}


def fit_model(kind: str, train: Dataset, params: Mapping[str, Any] | None = None) -> Classifier:
    if kind not in ModelKind:
        raise ParameterError(f"unknown model kind {kind!r}")
    fitter = _FITTERS[kind]
    kwargs = dict(params or {})
    try:
        inspect.signature(fitter).bind(train, **kwargs)
    except TypeError as e:
        raise ParameterError(f"bad hyperparameters for model {kind!r}: {e}") from None
    return fitter(train, **kwargs)  # type: ignore[operator]
