from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cfrobust.core import Dataset
from cfrobust.errors import ParameterError
from cfrobust.models.base import Classifier
from cfrobust.tags import Group


def accuracy(m: Classifier, d: Dataset) -> float:
    if d.n == 0:
        raise ParameterError("accuracy of an empty dataset is undefined")
    return float(np.mean(m.predict(d.x) == d.y))


@dataclass(frozen=True)
class ConfusionSplit:
    """Instance ids by (true label, predicted label)."""
    tn: frozenset[int]
    fn: frozenset[int]
    tp: frozenset[int]
    fp: frozenset[int]

    def ids(self, group: str) -> list[int]:
        """Sorted ids of a reporting group; ``ALL`` is every negatively predicted instance."""
        if group == Group.TN:
            return sorted(self.tn)
        if group == Group.FN:
            return sorted(self.fn)
        if group == Group.ALL:
            return sorted(self.tn | self.fn)
        raise ParameterError(f"unknown group {group!r}")

    def group_of(self, instance_id: int) -> str | None:
        if instance_id in self.tn:
            return Group.TN
        if instance_id in self.fn:
            return Group.FN
        return None


def confusion_split(m: Classifier, d: Dataset) -> ConfusionSplit:
    pred = np.asarray(m.predict(d.x)) if d.n else np.zeros(0, dtype=np.int64)

    def pick(true: int, predicted: int) -> frozenset[int]:
        return frozenset(int(i) for i in d.ids[(d.y == true) & (pred == predicted)])

    return ConfusionSplit(tn=pick(0, 0), fn=pick(1, 0), tp=pick(1, 1), fp=pick(0, 1))
