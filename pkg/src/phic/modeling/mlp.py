"""One-hidden-layer sigmoid perceptron trained by backpropagation with momentum."""

from __future__ import annotations

from dataclasses import dataclass

import math

import numba
import numpy as np
from scipy.special import expit

from .._rng import derive_rng
from ..features import FeatureTable
from .base import ModelError, TrainedModel, check_trainable
from .encoding import Encoder

INIT_RANGE = 0.5


def forward(params, X):
    W1, b1, W2, b2 = params
    h = expit(X @ W1 + b1)
    return h, expit(h @ W2 + b2)


def loss_and_gradient(params, X, y):
    """Mean cross-entropy of the sigmoid output and its gradient w.r.t. params."""
    W1, b1, W2, b2 = params
    h, out = forward(params, X)
    eps = 1e-300
    loss = -np.mean(y * np.log(out + eps) + (1 - y) * np.log(1 - out + eps))
    d_out = (out - y) / len(y)
    gW2 = h.T @ d_out
    gb2 = d_out.sum()
    d_h = np.outer(d_out, W2) * h * (1 - h)
    gW1 = X.T @ d_h
    gb1 = d_h.sum(axis=0)
    return float(loss), [gW1, gb1, gW2, np.float64(gb2)]


def init_params(n_in, n_hidden, rng):
    return [
        rng.uniform(-INIT_RANGE, INIT_RANGE, (n_in, n_hidden)),
        rng.uniform(-INIT_RANGE, INIT_RANGE, n_hidden),
        rng.uniform(-INIT_RANGE, INIT_RANGE, n_hidden),
        np.float64(rng.uniform(-INIT_RANGE, INIT_RANGE)),
    ]


@numba.njit(cache=True)
def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


@numba.njit(cache=True)
def _sgd(X, y, W1, b1, W2, b2, orders, learning_rate, momentum, batch_size):
    """Mini-batch gradient descent with momentum, updating the weights in place.

    ``b2`` is a length-1 array. ``orders`` holds one row permutation per
    epoch. Returns False as soon as any weight stops being finite.
    """
    n, n_in = X.shape
    n_hidden = W1.shape[1]
    vW1 = np.zeros_like(W1)
    vb1 = np.zeros_like(b1)
    vW2 = np.zeros_like(W2)
    vb2 = 0.0
    gW1 = np.empty_like(W1)
    gb1 = np.empty_like(b1)
    gW2 = np.empty_like(W2)
    h = np.empty(n_hidden)
    d_h = np.empty(n_hidden)
    for e in range(orders.shape[0]):
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            m = stop - start
            gW1[:] = 0.0
            gb1[:] = 0.0
            gW2[:] = 0.0
            gb2 = 0.0
            for r in range(start, stop):
                i = orders[e, r]
                h[:] = b1
                for k in range(n_in):
                    xk = X[i, k]
                    for j in range(n_hidden):
                        h[j] += xk * W1[k, j]
                z_out = b2[0]
                for j in range(n_hidden):
                    h[j] = _sigmoid(h[j])
                    z_out += h[j] * W2[j]
                d_out = (_sigmoid(z_out) - y[i]) / m
                gb2 += d_out
                for j in range(n_hidden):
                    gW2[j] += h[j] * d_out
                    d_h[j] = d_out * W2[j] * h[j] * (1.0 - h[j])
                    gb1[j] += d_h[j]
                for k in range(n_in):
                    xk = X[i, k]
                    for j in range(n_hidden):
                        gW1[k, j] += xk * d_h[j]
            finite = True
            for k in range(n_in):
                for j in range(n_hidden):
                    vW1[k, j] = momentum * vW1[k, j] - learning_rate * gW1[k, j]
                    W1[k, j] += vW1[k, j]
                    finite = finite and math.isfinite(W1[k, j])
            for j in range(n_hidden):
                vb1[j] = momentum * vb1[j] - learning_rate * gb1[j]
                b1[j] += vb1[j]
                vW2[j] = momentum * vW2[j] - learning_rate * gW2[j]
                W2[j] += vW2[j]
                finite = finite and math.isfinite(b1[j]) and math.isfinite(W2[j])
            vb2 = momentum * vb2 - learning_rate * gb2
            b2[0] += vb2
            if not (finite and math.isfinite(b2[0])):
                return False
    return True


@dataclass
class MLPModel(TrainedModel):
    weights: list = None
    final_loss: float = float("nan")

    def _positive(self, X):
        return forward(self.weights, X)[1]

    def params(self):
        W1, b1, W2, b2 = self.weights
        return {
            "hidden_weights": W1.tolist(),
            "hidden_bias": b1.tolist(),
            "output_weights": W2.tolist(),
            "output_bias": float(b2),
            "final_loss": self.final_loss,
        }


def train_mlp(
    table: FeatureTable,
    hidden: int | None = None,
    learning_rate: float = 0.3,
    momentum: float = 0.2,
    epochs: int = 500,
    batch_size: int = 32,
    seed: int = 0,
) -> MLPModel:
    """Train on nominal-to-binary inputs normalised to [-1, 1].

    ``hidden`` defaults to (inputs + 2) // 2. Rows are reshuffled every
    epoch from a stream derived from ``seed``.
    """
    check_trainable(table)
    enc = Encoder(dummies="full", scale="minmax")
    X = enc.fit_transform(table)
    y = table.label.astype(float)
    n_in = X.shape[1]
    n_hidden = hidden if hidden is not None else max(1, (n_in + 2) // 2)
    rng = derive_rng(seed, "mlp")
    params = init_params(n_in, n_hidden, rng)
    n = len(y)
    bs = max(1, min(batch_size, n))
    orders = np.array([rng.permutation(n) for _ in range(epochs)], dtype=np.int64).reshape(epochs, n)
    W1, b1, W2 = (np.ascontiguousarray(p, dtype=float) for p in params[:3])
    b2 = np.array([float(params[3])])
    if not _sgd(np.ascontiguousarray(X, dtype=float), y, W1, b1, W2, b2, orders,
                float(learning_rate), float(momentum), bs):
        raise ModelError("training diverged (non-finite weights); use a smaller learning rate")
    params = [W1, b1, W2, np.float64(b2[0])]
    loss = loss_and_gradient(params, X, y)[0]
    if not np.isfinite(loss):
        raise ModelError("training diverged (non-finite loss); use a smaller learning rate")
    return MLPModel(
        kind="MLP",
        feature_schema=tuple(table.predictors),
        seed=seed,
        config={
            "hidden": n_hidden,
            "learning_rate": learning_rate,
            "momentum": momentum,
            "epochs": epochs,
            "batch_size": bs,
        },
        encoder=enc,
        weights=params,
        final_loss=loss,
    )
