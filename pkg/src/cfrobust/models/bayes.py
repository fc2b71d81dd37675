"""
Bayesian logistic regression under a Laplace approximation.

The prior is ``N(0, prior_variance * I)`` over ``theta = (weights..., bias)``; the posterior
is approximated by ``N(theta_MAP, H^-1)`` with ``H`` the Hessian of the negative
log-posterior at the MAP.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, ClassVar, Mapping

import numpy as np
from scipy.special import expit

from cfrobust.core import Dataset
from cfrobust.errors import ParameterError
from cfrobust.models.base import Classifier, check_trainable
from cfrobust.models.linear import LinearModel, _augment, newton_minimize
from cfrobust.tags import ModelKind

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BayesianLinearModel(Classifier):
    """Gaussian posterior over a linear model; predictions use the posterior mean."""
    posterior_mean: np.ndarray
    posterior_cov: np.ndarray
    ridge: float = 0.0

    kind: ClassVar[str] = ModelKind.BLR

    def __post_init__(self) -> None:
        mean = np.array(self.posterior_mean, dtype=float, copy=True)
        cov = np.array(self.posterior_cov, dtype=float, copy=True)
        k = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (k, k):
            raise ParameterError(f"posterior shapes {mean.shape} and {cov.shape} do not match")
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ParameterError("posterior covariance is not positive definite") from None
        for a in (mean, cov, chol):
            a.setflags(write=False)
        object.__setattr__(self, "posterior_mean", mean)
        object.__setattr__(self, "posterior_cov", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def d(self) -> int:
        return int(self.posterior_mean.shape[0]) - 1

    @property
    def weights(self) -> np.ndarray:
        return self.posterior_mean[:-1]

    @property
    def bias(self) -> float:
        return float(self.posterior_mean[-1])

    def mean_model(self) -> LinearModel:
        return LinearModel.from_theta(self.posterior_mean)

    def draw(self, s: int, seed: int = 0) -> list[LinearModel]:
        """``s`` seeded posterior samples as linear models."""
        if s < 1:
            raise ParameterError(f"sample count must be at least 1, got {s}")
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((s, self.posterior_mean.shape[0]))
        thetas = self.posterior_mean + z @ self._chol.T  # type: ignore[attr-defined]
        return [LinearModel.from_theta(t) for t in thetas]

    def scaled(self, factor: float) -> BayesianLinearModel:
        """Same mean, covariance multiplied by *factor*."""
        if not factor > 0:
            raise ParameterError("covariance scale must be positive")
        return BayesianLinearModel(self.posterior_mean, self.posterior_cov * factor, self.ridge)

    def _proba(self, x: np.ndarray) -> np.ndarray:
        return expit(x @ self.weights + self.bias)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "posterior_mean": self.posterior_mean.tolist(),
            "posterior_cov": self.posterior_cov.tolist(),
            "ridge": self.ridge,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> BayesianLinearModel:
        return cls(
            np.asarray(data["posterior_mean"], dtype=float),
            np.asarray(data["posterior_cov"], dtype=float),
            float(data.get("ridge", 0.0)),
        )


# ---- negative log-posterior (summed log-loss + Gaussian prior) ----

def neg_log_posterior(
    theta: np.ndarray, x: np.ndarray, y: np.ndarray, prior_variance: float
) -> float:
    z = _augment(x) @ theta
    return float(np.sum(np.logaddexp(0.0, z) - y * z) + theta @ theta / (2.0 * prior_variance))


def neg_log_posterior_grad(
    theta: np.ndarray, x: np.ndarray, y: np.ndarray, prior_variance: float
) -> np.ndarray:
    xa = _augment(x)
    return xa.T @ (expit(xa @ theta) - y) + theta / prior_variance


def neg_log_posterior_hessian(
    theta: np.ndarray, x: np.ndarray, y: np.ndarray, prior_variance: float
) -> np.ndarray:
    xa = _augment(x)
    p = expit(xa @ theta)
    return (xa * (p * (1.0 - p))[:, None]).T @ xa + np.eye(xa.shape[1]) / prior_variance


def _invert_spd(h: np.ndarray) -> tuple[np.ndarray, float]:
    """Inverse of a symmetric matrix, adding the smallest ridge that makes it factorize."""
    h = 0.5 * (h + h.T)
    ridge = 0.0
    scale = max(float(np.trace(h)) / h.shape[0], 1e-12)
    while True:
        try:
            chol = np.linalg.cholesky(h + ridge * np.eye(h.shape[0]))
            break
        except np.linalg.LinAlgError:
            ridge = scale * 1e-10 if ridge == 0.0 else ridge * 10.0
    inv_chol = np.linalg.inv(chol)
    return inv_chol.T @ inv_chol, ridge


def fit_bayes_logistic(
    train: Dataset,
    prior_variance: float = 1.0,
    *,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> BayesianLinearModel:
    """Laplace approximation around the MAP estimate."""
    if not prior_variance > 0:
        raise ParameterError(f"prior_variance must be positive, got {prior_variance}")
    check_trainable(train)
    x, y = np.asarray(train.x), np.asarray(train.y, dtype=float)
    n = x.shape[0]
    # the MAP scaled by 1/n is the regularized MLE with l2 = 1/(n * prior_variance)
    theta = newton_minimize(
        lambda t: neg_log_posterior(t, x, y, prior_variance) / n,
        lambda t: neg_log_posterior_grad(t, x, y, prior_variance) / n,
        lambda t: neg_log_posterior_hessian(t, x, y, prior_variance) / n,
        np.zeros(x.shape[1] + 1),
        tol=tol,
        max_iter=max_iter,
    )
    cov, ridge = _invert_spd(neg_log_posterior_hessian(theta, x, y, prior_variance))
    if ridge > 0:
        logger.warning("posterior Hessian was not positive definite; added ridge %.3g", ridge)
    return BayesianLinearModel(theta, cov, ridge)
