"""Small helpers for building feature tables in tests."""

import numpy as np

from phic.core import QuestionType
from phic.features import Column, FeatureTable


def make_table(label, numeric=None, categorical=None, position=2):
    """FeatureTable from plain arrays; categorical values are given as codes with their category names."""
    numeric = numeric or {}
    categorical = categorical or {}
    cols, data = [], {}
    for name, values in numeric.items():
        cols.append(Column(name, "numeric"))
        data[name] = np.asarray(values, dtype=float)
    for name, (codes, cats) in categorical.items():
        cols.append(Column(name, "categorical", tuple(cats)))
        data[name] = np.asarray(codes, dtype=np.int64)
    label = np.asarray(label, dtype=np.int8)
    n = len(label)
    return FeatureTable(
        position, 1, QuestionType.FUNCTION, tuple(cols), data, label,
        tuple(f"s{i}" for i in range(n)), tuple("item" for _ in range(n)),
    )
