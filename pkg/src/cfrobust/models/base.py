from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, ClassVar

import numpy as np

from cfrobust.core import Dataset
from cfrobust.errors import ParameterError, SingleClassError


def as_rows(x: Any) -> tuple[np.ndarray, bool]:
    """Return *x* as a 2-D float matrix and whether it was a single row."""
    a = np.asarray(x, dtype=float)
    if a.ndim not in (1, 2):
        raise ParameterError(f"expected a vector or a matrix, got shape {a.shape}")
    return np.atleast_2d(a), a.ndim == 1


class Classifier(ABC):
    """Binary classifier over encoded feature vectors.

    ``predict_proba`` returns the probability of class 1: a float for one row, a vector
    for a matrix.  ``predict`` thresholds at 0.5, with ties going to class 1.
    """

    kind: ClassVar[str]

    @abstractmethod
    def _proba(self, x: np.ndarray) -> np.ndarray: ...

    def predict_proba(self, x: Any) -> Any:
        m, single = as_rows(x)
        p = np.clip(self._proba(m), 0.0, 1.0)
        return float(p[0]) if single else p

    def predict(self, x: Any) -> Any:
        m, single = as_rows(x)
        labels = (np.clip(self._proba(m), 0.0, 1.0) >= 0.5).astype(np.int64)
        return int(labels[0]) if single else labels


def check_trainable(train: Dataset) -> None:
    if train.n == 0:
        raise ParameterError("training data is empty")
    if len(np.unique(train.y)) < 2:
        raise SingleClassError(f"training data contains only class {int(train.y[0])}")
