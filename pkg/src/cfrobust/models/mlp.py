from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import ClassVar, Sequence

import numpy as np
from scipy.special import expit

from cfrobust.core import Dataset
from cfrobust.errors import DivergenceError, ParameterError
from cfrobust.models.base import Classifier
from cfrobust.tags import ModelKind

logger = logging.getLogger(__name__)

Params = list[tuple[np.ndarray, np.ndarray]]


def _forward(params: Params, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    activations = [x]
    h = x
    for w, b in params[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        activations.append(h)
    w, b = params[-1]
    return activations, (h @ w + b)[:, 0]


def loss_and_gradients(params: Params, x: np.ndarray, y: np.ndarray) -> tuple[float, Params]:
    """Mean log-loss of the network and its gradient for each ``(W, b)`` layer."""
    activations, z = _forward(params, x)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    delta = ((expit(z) - y) / x.shape[0])[:, None]
    grads: Params = []
    for layer in range(len(params) - 1, -1, -1):
        a = activations[layer]
        w, _ = params[layer]
        grads.append((a.T @ delta, delta.sum(axis=0)))
        if layer > 0:
            delta = (delta @ w.T) * (activations[layer] > 0)
    grads.reverse()
    return loss, grads


@dataclass(frozen=True, eq=False)
class MLP(Classifier):
    """ReLU hidden layers and a sigmoid output unit."""
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]

    kind: ClassVar[str] = ModelKind.MLP

    def _proba(self, x: np.ndarray) -> np.ndarray:
        return expit(_forward(list(self.layers), x)[1])


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> Params:
    """He-normal weights, zero biases."""
    return [
        (rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)), np.zeros(fan_out))
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
    ]


def fit_mlp(
    train: Dataset,
    hidden_sizes: Sequence[int] = (32, 16),
    epochs: int = 200,
    learning_rate: float = 0.05,
    seed: int = 0,
    *,
    batch_size: int = 64,
    momentum: float = 0.9,
) -> MLP:
    """Mini-batch SGD with momentum on the mean log-loss."""
    if train.n == 0:
        raise ParameterError("training data is empty")
    if learning_rate < 0 or epochs < 0 or batch_size < 1 or not 0 <= momentum < 1:
        raise ParameterError("invalid optimizer settings")
    if any(h < 1 for h in hidden_sizes):
        raise ParameterError(f"hidden sizes must be positive, got {list(hidden_sizes)}")

    rng = np.random.default_rng(seed)
    x, y = np.asarray(train.x), np.asarray(train.y, dtype=float)
    params = init_params([train.d, *hidden_sizes, 1], rng)
    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]

    for epoch in range(epochs):
        order = rng.permutation(train.n)
        for start in range(0, train.n, batch_size):
            rows = order[start:start + batch_size]
            loss, grads = loss_and_gradients(params, x[rows], y[rows])
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            for i, ((w, b), (gw, gb), (vw, vb)) in enumerate(zip(params, grads, velocity)):
                vw = momentum * vw - learning_rate * gw
                vb = momentum * vb - learning_rate * gb
                velocity[i] = (vw, vb)
                params[i] = (w + vw, b + vb)
        if epoch % 50 == 0:
            logger.debug("epoch %d: batch loss %.4f", epoch, loss)
    return MLP(tuple(params))
