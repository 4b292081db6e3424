"""Per-position feature tables: item difficulty, human profile and human performance."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (
    DEFAULT_PROFILE_SCHEMA,
    DEFAULT_SESSION_ORDER,
    Item,
    PositionalDataset,
    ProfileSchema,
    QuestionType,
    SubjectProfile,
    position_semantics,
)
from .rasch import LooDifficultyTable

EXPERT = "ExpertDifficulty"
RASCH = "RaschDifficulty"
PERC_CORRECT = "PercCorrect"
MEDIAN_DIFFICULTY = "MedianDifficulty"
MISSING = "(missing)"

POSITIVE, NEGATIVE = "Incorrect", "Correct"


class FeatureUnavailable(ValueError):
    """The feature is not defined here (e.g. performance features at position 1)."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # "numeric" or "categorical"
    categories: tuple[str, ...] = ()


@dataclass(frozen=True)
class FeatureTable:
    """Predictors and binary label for one administration position.

    Numeric columns are float arrays with NaN for missing values; categorical
    columns hold integer codes into ``Column.categories``. ``label`` is 1 for
    an incorrect answer (the positive class) and 0 for a correct one.
    """

    position: int
    session: int
    question_type: QuestionType
    columns: tuple[Column, ...]
    data: Mapping[str, np.ndarray] = field(repr=False)
    label: np.ndarray = field(repr=False)
    subject_ids: tuple[str, ...] = field(default=(), repr=False)
    item_ids: tuple[str, ...] = field(default=(), repr=False)

    @property
    def n_rows(self) -> int:
        return len(self.label)

    @property
    def predictors(self) -> list[str]:
        return [c.name for c in self.columns]

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def take(self, rows) -> "FeatureTable":
        rows = np.asarray(rows)
        return replace(
            self,
            data={k: v[rows] for k, v in self.data.items()},
            label=self.label[rows],
            subject_ids=tuple(np.asarray(self.subject_ids, dtype=object)[rows]) if self.subject_ids else (),
            item_ids=tuple(np.asarray(self.item_ids, dtype=object)[rows]) if self.item_ids else (),
        )

    def project(self, names: Sequence[str]) -> "FeatureTable":
        """Keep only ``names`` (in table order)."""
        wanted = set(names)
        unknown = wanted - set(self.predictors)
        if unknown:
            raise KeyError(f"unknown predictors {sorted(unknown)}")
        cols = tuple(c for c in self.columns if c.name in wanted)
        return replace(self, columns=cols, data={c.name: self.data[c.name] for c in cols})

    def with_label(self, label) -> "FeatureTable":
        return replace(self, label=np.asarray(label, dtype=np.int8))

    def with_column(self, column: Column, values) -> "FeatureTable":
        data = dict(self.data)
        data[column.name] = np.asarray(values)
        return replace(self, columns=self.columns + (column,), data=data)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject_id", "item_id", *self.predictors, "label"])
            for r in range(self.n_rows):
                row = [self.subject_ids[r], self.item_ids[r]]
                for c in self.columns:
                    v = self.data[c.name][r]
                    if c.kind == "numeric":
                        row.append("" if np.isnan(v) else repr(float(v)))
                    else:
                        cat = c.categories[int(v)]
                        row.append("" if cat == MISSING else cat)
                row.append(POSITIVE if self.label[r] else NEGATIVE)
                w.writerow(row)


def feature_columns(schema: ProfileSchema, position: int) -> tuple[Column, ...]:
    cols = [Column(EXPERT, "numeric"), Column(RASCH, "numeric")]
    for a in schema.attributes:
        if a.kind == "numeric":
            cols.append(Column(a.name, "numeric"))
        else:
            cols.append(Column(a.name, "categorical", tuple(a.categories) + (MISSING,)))
    if position >= 2:
        cols += [Column(PERC_CORRECT, "numeric"), Column(MEDIAN_DIFFICULTY, "numeric")]
    return tuple(cols)


def read_feature_table(
    path,
    position: int,
    schema: ProfileSchema = DEFAULT_PROFILE_SCHEMA,
    order: Sequence[QuestionType] = DEFAULT_SESSION_ORDER,
    n_positions: int = 32,
) -> FeatureTable:
    columns = feature_columns(schema, position)
    session, qtype = position_semantics(position, order, n_positions)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["subject_id", "item_id", *(c.name for c in columns), "label"]
        if header != expected:
            raise ValueError(f"{path}: header does not match the feature schema for position {position}")
        rows = list(reader)
    data = {}
    for j, c in enumerate(columns, start=2):
        raw = [r[j] for r in rows]
        if c.kind == "numeric":
            data[c.name] = np.array([float(v) if v != "" else np.nan for v in raw])
        else:
            index = {cat: k for k, cat in enumerate(c.categories)}
            data[c.name] = np.array([index[v if v != "" else MISSING] for v in raw], dtype=np.int64)
    label = np.array([1 if r[-1] == POSITIVE else 0 for r in rows], dtype=np.int8)
    return FeatureTable(
        position, session, qtype, columns, data, label,
        tuple(r[0] for r in rows), tuple(r[1] for r in rows),
    )


def perc_correct(prior_responses: Sequence[int]) -> float:
    """Fraction of correct answers among the previously administered items."""
    if len(prior_responses) == 0:
        raise FeatureUnavailable("no prior responses (first position)")
    return float(np.mean(np.asarray(prior_responses, dtype=float)))


def median_difficulty(prior_item_difficulties: Sequence[float]) -> float:
    if len(prior_item_difficulties) == 0:
        raise FeatureUnavailable("no prior items (first position)")
    return float(np.median(np.asarray(prior_item_difficulties, dtype=float)))


def assemble_features(
    datasets: Sequence[PositionalDataset],
    profiles: Mapping[str, SubjectProfile],
    items: Sequence[Item],
    loo: LooDifficultyTable,
    schema: ProfileSchema = DEFAULT_PROFILE_SCHEMA,
) -> list[FeatureTable]:
    """Build one feature table per positional dataset.

    ``RaschDifficulty`` for subject ``s`` comes from the calibration that held
    ``s`` out. ``PercCorrect`` and ``MedianDifficulty`` summarise the
    subject's earlier positions and are omitted from the first table.
    """
    datasets = sorted(datasets, key=lambda d: d.position)
    if not datasets:
        return []
    subject_ids = datasets[0].subject_ids
    n = len(subject_ids)
    for sid in subject_ids:
        if sid not in profiles:
            raise KeyError(f"subject {sid}: no profile")
    loo_row = {sid: k for k, sid in enumerate(loo.subject_ids)}
    missing = [sid for sid in subject_ids if sid not in loo_row]
    if missing:
        raise KeyError(f"subject {missing[0]}: no held-out calibration")
    loo_col = {iid: j for j, iid in enumerate(loo.item_ids)}
    expert = {it.item_id: it.expert_difficulty for it in items}

    rows = np.array([loo_row[sid] for sid in subject_ids])
    # subjects x positions views of the whole sequence
    item_seq = np.array([d.item_ids for d in datasets], dtype=object).T
    correct_seq = np.array([d.correct for d in datasets]).T.astype(float)
    cols_seq = np.vectorize(loo_col.__getitem__, otypes=[np.int64])(item_seq)
    rasch_seq = loo.values[rows[:, None], cols_seq]

    profile_data = {}
    for a in schema.attributes:
        vals = [profiles[sid].values.get(a.name) for sid in subject_ids]
        if a.kind == "numeric":
            profile_data[a.name] = np.array([np.nan if v is None else float(v) for v in vals])
        else:
            index = {cat: k for k, cat in enumerate(a.categories)}
            miss = len(a.categories)
            profile_data[a.name] = np.array([miss if v is None else index[v] for v in vals], dtype=np.int64)

    tables = []
    for p, d in enumerate(datasets):
        if d.subject_ids != subject_ids:
            raise ValueError("positional datasets disagree on subject order")
        columns = feature_columns(schema, d.position)
        data = {
            EXPERT: np.array([expert[i] for i in d.item_ids], dtype=float),
            RASCH: rasch_seq[:, p].copy(),
        }
        for a in schema.attributes:
            data[a.name] = profile_data[a.name]
        if d.position >= 2:
            data[PERC_CORRECT] = correct_seq[:, :p].mean(axis=1)
            data[MEDIAN_DIFFICULTY] = np.median(rasch_seq[:, :p], axis=1)
        label = (1 - np.asarray(d.correct)).astype(np.int8)
        tables.append(
            FeatureTable(d.position, d.session, d.question_type, columns, data, label, subject_ids, d.item_ids)
        )
    assert all(t.n_rows == n for t in tables)
    return tables
