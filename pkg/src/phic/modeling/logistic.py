"""Ridge-stabilised logistic regression fitted by Newton-Raphson (IRLS)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..features import FeatureTable
from .base import ModelError, TrainedModel, check_trainable
from .encoding import Encoder


def penalized_loglik(beta, X, y, ridge):
    """Log-likelihood minus ``ridge * ||beta[1:]||^2``; X carries the intercept column."""
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - ridge * np.sum(beta[1:] ** 2))


def penalized_gradient(beta, X, y, ridge):
    g = X.T @ (y - expit(X @ beta))
    g[1:] -= 2.0 * ridge * beta[1:]
    return g


@dataclass
class LogisticModel(TrainedModel):
    coef: np.ndarray = None
    iterations: int = 0

    def _positive(self, X):
        return expit(self.coef[0] + X @ self.coef[1:])

    def params(self):
        return {
            "intercept": float(self.coef[0]),
            "coefficients": dict(zip(self.encoder.feature_names, map(float, self.coef[1:]))),
            "iterations": self.iterations,
        }


def fit_irls(X, y, ridge=1e-8, tolerance=1e-8, max_iterations=100):
    """Maximise the penalised log-likelihood. X excludes the intercept column."""
    Xi = np.column_stack([np.ones(len(X)), X])
    beta = np.zeros(Xi.shape[1])
    prior = y.mean()
    beta[0] = np.log(prior / (1 - prior))
    penalty = np.full(Xi.shape[1], 2.0 * ridge)
    penalty[0] = 0.0
    ll = penalized_loglik(beta, Xi, y, ridge)
    it = 0
    for it in range(1, max_iterations + 1):
        mu = expit(Xi @ beta)
        w = mu * (1 - mu)
        H = (Xi * w[:, None]).T @ Xi + np.diag(penalty)
        g = penalized_gradient(beta, Xi, y, ridge)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            raise ModelError("weighted least-squares system is singular even with ridge") from None
        if not np.all(np.isfinite(step)):
            raise ModelError("weighted least-squares system is singular even with ridge")
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = penalized_loglik(cand, Xi, y, ridge)
            if ll_new >= ll - 1e-12 or t < 1e-8:
                break
            t /= 2.0
        beta, ll_old, ll = cand, ll, ll_new
        if np.max(np.abs(t * step)) < tolerance or abs(ll - ll_old) < tolerance * (abs(ll) + tolerance):
            break
    return beta, it


def train_logistic(
    table: FeatureTable,
    ridge: float = 1e-8,
    tolerance: float = 1e-8,
    max_iterations: int = 100,
    seed: int = 0,
) -> LogisticModel:
    """Logistic regression on ``table``; nominal predictors become k-1 indicators."""
    check_trainable(table)
    enc = Encoder(dummies="reference")
    X = enc.fit_transform(table)
    y = table.label.astype(float)
    beta, it = fit_irls(X, y, ridge, tolerance, max_iterations)
    return LogisticModel(
        kind="LR",
        feature_schema=tuple(table.predictors),
        seed=seed,
        config={"ridge": ridge, "tolerance": tolerance, "max_iterations": max_iterations},
        encoder=enc,
        coef=beta,
        iterations=it,
    )
