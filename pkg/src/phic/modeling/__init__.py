"""Classifiers, filter selectors, and selection embedded in training."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

from ..features import FeatureTable
from .base import ModelError, TrainedModel
from .forest import train_random_forest
from .logistic import train_logistic
from .mlp import train_mlp
from .selection import SelectionError, SelectionResult, cfs_select, gain_ratio, gain_ratio_rank

LEARNERS: dict[str, Callable[..., TrainedModel]] = {
    "LR": train_logistic,
    "RF": train_random_forest,
    "MLP": train_mlp,
}

SELECTORS: dict[str, Callable[[FeatureTable], SelectionResult]] = {
    "CFS": cfs_select,
    "GainRatioRank": gain_ratio_rank,
}

Learner = Callable[[FeatureTable, int], TrainedModel]


def make_learner(kind: str, **config) -> Learner:
    try:
        train = LEARNERS[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}; choose from {sorted(LEARNERS)}") from None

    def learner(table: FeatureTable, seed: int = 0) -> TrainedModel:
        return train(table, seed=seed, **config)

    learner.kind = kind
    return learner


@dataclass
class SelectedModel:
    """A model trained on the predictors chosen from its own training rows."""

    selection: SelectionResult
    model: TrainedModel

    @property
    def kind(self) -> str:
        return self.model.kind

    @property
    def feature_schema(self) -> tuple[str, ...]:
        return self.selection.selected

    def predict_proba(self, table: FeatureTable):
        return self.model.predict_proba(table.project(self.selection.selected))

    def to_dict(self) -> dict:
        d = self.model.to_dict()
        d["selector"] = self.selection.selector_kind
        d["selection_scores"] = self.selection.scores
        return d

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def embed_selection(learner: Learner, selector: Callable[[FeatureTable], SelectionResult]) -> Learner:
    """Wrap ``learner`` so selection runs on whatever rows it is trained on."""

    def wrapped(table: FeatureTable, seed: int = 0) -> SelectedModel:
        selection = selector(table)
        return SelectedModel(selection, learner(table.project(selection.selected), seed))

    wrapped.kind = getattr(learner, "kind", "?")
    return wrapped


__all__ = [
    "LEARNERS",
    "SELECTORS",
    "ModelError",
    "SelectedModel",
    "SelectionError",
    "SelectionResult",
    "TrainedModel",
    "cfs_select",
    "embed_selection",
    "gain_ratio",
    "gain_ratio_rank",
    "make_learner",
    "train_logistic",
    "train_mlp",
    "train_random_forest",
]
