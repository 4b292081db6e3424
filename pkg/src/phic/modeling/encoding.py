"""Turn a FeatureTable into a numeric design matrix, fitted on training rows only."""

from __future__ import annotations

import numpy as np

from ..features import FeatureTable


class Encoder:
    """Imputation, nominal-to-binary expansion and optional [-1, 1] scaling.

    dummies : ``"reference"`` drops the first category of each nominal
        predictor (k - 1 indicators), ``"full"`` keeps all k.
    scale : ``None`` or ``"minmax"`` (training range mapped onto [-1, 1]).
    drop_constant : remove columns that are constant on the training rows.
    """

    def __init__(self, dummies: str = "reference", scale: str | None = None, drop_constant: bool = True):
        if dummies not in ("reference", "full"):
            raise ValueError("dummies must be 'reference' or 'full'")
        if scale not in (None, "minmax"):
            raise ValueError("scale must be None or 'minmax'")
        self.dummies = dummies
        self.scale = scale
        self.drop_constant = drop_constant

    def _expand(self, table: FeatureTable):
        blocks, names = [], []
        for c in self.columns_:
            v = table.data[c.name]
            if c.kind == "numeric":
                v = np.where(np.isnan(v), self.means_[c.name], v)
                blocks.append(v[:, None].astype(float))
                names.append(c.name)
            else:
                cats = range(1, len(c.categories)) if self.dummies == "reference" else range(len(c.categories))
                blocks.append(np.stack([(v == k) for k in cats], axis=1).astype(float) if cats else np.zeros((len(v), 0)))
                names += [f"{c.name}={c.categories[k]}" for k in cats]
        X = np.hstack(blocks) if blocks else np.zeros((table.n_rows, 0))
        return X, names

    def fit(self, table: FeatureTable) -> "Encoder":
        self.columns_ = table.columns
        self.means_ = {}
        for c in table.columns:
            if c.kind == "numeric":
                v = table.data[c.name]
                ok = ~np.isnan(v)
                self.means_[c.name] = float(v[ok].mean()) if ok.any() else 0.0
        X, names = self._expand(table)
        keep = np.ones(X.shape[1], dtype=bool)
        if self.drop_constant and X.shape[0] > 0:
            keep = X.max(axis=0) > X.min(axis=0)
        self.keep_ = keep
        self.names_ = [n for n, k in zip(names, keep) if k]
        X = X[:, keep]
        if self.scale == "minmax":
            lo, hi = X.min(axis=0), X.max(axis=0)
            span = np.where(hi > lo, hi - lo, 1.0)
            self.lo_, self.span_ = lo, span
        return self

    def transform(self, table: FeatureTable) -> np.ndarray:
        X, _ = self._expand(table)
        X = X[:, self.keep_]
        if self.scale == "minmax":
            X = 2.0 * (X - self.lo_) / self.span_ - 1.0
        return X

    def fit_transform(self, table: FeatureTable) -> np.ndarray:
        return self.fit(table).transform(table)

    @property
    def feature_names(self) -> list[str]:
        return list(self.names_)

    def to_dict(self) -> dict:
        d = {"dummies": self.dummies, "scale": self.scale, "means": self.means_, "columns": self.names_}
        if self.scale == "minmax":
            d["min"] = self.lo_.tolist()
            d["span"] = self.span_.tolist()
        return d
