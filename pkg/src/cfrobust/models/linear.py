"""
L2-regularized logistic regression fitted by Newton's method.

The parameter vector used by the objective helpers is ``theta = (weights..., bias)``;
the objective is the mean log-loss plus ``l2 / 2 * |weights|^2`` (the bias is
penalized only with ``penalize_bias=True``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, ClassVar, Mapping

import numpy as np
from scipy.special import expit

from cfrobust.core import Dataset
from cfrobust.errors import ParameterError
from cfrobust.models.base import Classifier, check_trainable
from cfrobust.tags import ModelKind

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class LinearModel(Classifier):
    weights: np.ndarray
    bias: float

    kind: ClassVar[str] = ModelKind.LR

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=float, copy=True)
        if w.ndim != 1:
            raise ParameterError("weights must be a vector")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def d(self) -> int:
        return int(self.weights.shape[0])

    @property
    def theta(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def score(self, x: Any) -> Any:
        a = np.asarray(x, dtype=float)
        return a @ self.weights + self.bias

    def _proba(self, x: np.ndarray) -> np.ndarray:
        return expit(x @ self.weights + self.bias)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "weights": self.weights.tolist(), "bias": self.bias}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> LinearModel:
        return cls(np.asarray(data["weights"], dtype=float), float(data["bias"]))

    @classmethod
    def from_theta(cls, theta: np.ndarray) -> LinearModel:
        return cls(theta[:-1], float(theta[-1]))


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _penalty_mask(d: int, penalize_bias: bool) -> np.ndarray:
    mask = np.ones(d + 1)
    if not penalize_bias:
        mask[-1] = 0.0
    return mask


def logistic_objective(
    theta: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float, penalize_bias: bool = False
) -> float:
    z = _augment(x) @ theta
    mask = _penalty_mask(x.shape[1], penalize_bias)
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.sum(mask * theta**2))


def logistic_gradient(
    theta: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float, penalize_bias: bool = False
) -> np.ndarray:
    xa = _augment(x)
    p = expit(xa @ theta)
    return xa.T @ (p - y) / x.shape[0] + l2 * _penalty_mask(x.shape[1], penalize_bias) * theta


def logistic_hessian(
    theta: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float, penalize_bias: bool = False
) -> np.ndarray:
    xa = _augment(x)
    p = expit(xa @ theta)
    h = (xa * (p * (1.0 - p))[:, None]).T @ xa / x.shape[0]
    return h + l2 * np.diag(_penalty_mask(x.shape[1], penalize_bias))


def newton_minimize(
    f: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    hess: Callable[[np.ndarray], np.ndarray],
    theta0: np.ndarray,
    *,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> np.ndarray:
    """Damped Newton iterations until the gradient norm drops below *tol*."""
    theta = np.array(theta0, dtype=float)
    for it in range(max_iter):
        g = grad(theta)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            logger.debug("newton converged after %d iterations (|g|=%.3g)", it, gnorm)
            return theta
        h = hess(theta)
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h, g, rcond=None)[0]
        t = 1.0
        if gnorm > 1e-6:
            # Armijo backtracking; close to the optimum the full step is taken
            f0 = f(theta)
            slope = float(g @ step)
            while t > 1e-12 and f(theta - t * step) > f0 - 1e-4 * t * slope:
                t *= 0.5
        theta = theta - t * step
    logger.warning(
        "newton stopped after %d iterations with |g|=%.3g", max_iter, np.linalg.norm(grad(theta))
    )
    return theta


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def fit_logistic(
    train: Dataset,
    l2: float = 1.0,
    *,
    penalize_bias: bool = False,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> LinearModel:
    """Minimize mean log-loss + ``l2 / 2 * |weights|^2``.

    ::

        model = fit_logistic(train, l2=1.0)
        model.predict(test.x)
    """
    if not l2 > 0:
        raise ParameterError(f"l2 must be positive, got {l2}")
    check_trainable(train)
    x, y = np.asarray(train.x), np.asarray(train.y, dtype=float)
    theta = newton_minimize(
        lambda t: logistic_objective(t, x, y, l2, penalize_bias),
        lambda t: logistic_gradient(t, x, y, l2, penalize_bias),
        lambda t: logistic_hessian(t, x, y, l2, penalize_bias),
        np.zeros(x.shape[1] + 1),
        tol=tol,
        max_iter=max_iter,
    )
    return LinearModel.from_theta(theta)
