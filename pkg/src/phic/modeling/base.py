from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..features import FeatureTable
from .encoding import Encoder


class ModelError(RuntimeError):
    """Training failed (degenerate data, singular system, divergence)."""


def check_trainable(table: FeatureTable) -> None:
    if table.n_rows < 2:
        raise ModelError("need at least 2 training rows")
    if np.unique(table.label).size < 2:
        raise ModelError("training class is constant")


@dataclass
class TrainedModel:
    """A fitted classifier.

    ``predict_proba`` returns an (n, 2) array: column 0 is P(correct),
    column 1 is P(incorrect), the positive class.
    """

    kind: str
    feature_schema: tuple[str, ...]
    seed: int
    config: dict
    encoder: Encoder = field(repr=False)

    def _positive(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_proba(self, table: FeatureTable) -> np.ndarray:
        p = np.clip(self._positive(self.encoder.transform(table.project(self.feature_schema))), 0.0, 1.0)
        return np.column_stack([1.0 - p, p])

    def params(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "seed": self.seed,
            "selected_features": list(self.feature_schema),
            "encoder": self.encoder.to_dict(),
            "parameters": self.params(),
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
