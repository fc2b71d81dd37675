"""Closed vocabularies used across the package.

Every tag is a plain ``str`` at runtime, so it round-trips through CSV, JSON and TOML
without conversion::

    MethodKind.MILP            # "milp"
    "nice" in MethodKind       # True
    list(Group)                # ["ALL", "TN", "FN"]
"""
from __future__ import annotations

from literalenum import LiteralEnum


class ColumnKind(LiteralEnum):
    CONTINUOUS = "continuous"
    INDICATOR = "indicator"


class NoiseKind(LiteralEnum):
    GAUSSIAN = "gaussian"
    STUDENT_T = "student_t"


class ModelKind(LiteralEnum):
    LR = "lr"
    BLR = "blr"
    RF = "rf"
    MLP = "mlp"


class ModelAgnosticMethod(LiteralEnum):
    """Generators that only need ``predict_proba``."""
    NICE = "nice"
    RANDOM_SEARCH = "random_search"


class MethodKind(ModelAgnosticMethod, extend=True):
    MILP = "milp"
    MILP_MEAN = "milp_mean"
    MILP_MARG = "milp_marg"


class Group(LiteralEnum):
    ALL = "ALL"
    TN = "TN"
    FN = "FN"


class Bucket(LiteralEnum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"


class DatasetKind(LiteralEnum):
    MOCK = "mock"
    CSV = "csv"


class UncertaintyKind(LiteralEnum):
    """How a noise schedule perturbs the data past level 0."""
    ALEATORIC = "aleatoric"
    EPISTEMIC = "epistemic"


# Which model kinds each model-specific generator accepts.
METHOD_MODELS: dict[str, frozenset[str]] = {
    MethodKind.MILP: frozenset({ModelKind.LR}),
    MethodKind.MILP_MEAN: frozenset({ModelKind.BLR}),
    MethodKind.MILP_MARG: frozenset({ModelKind.BLR}),
}


def applies_to(method: str, model: str) -> bool:
    """Return ``True`` if *method* can explain a model of kind *model*."""
    if method in ModelAgnosticMethod:
        return True
    return model in METHOD_MODELS.get(method, frozenset())


def combo_tag(model: str, method: str) -> str:
    """ML-CE combination label, e.g. ``"lr-milp"``."""
    return f"{model}-{method}"
