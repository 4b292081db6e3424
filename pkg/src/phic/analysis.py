"""Descriptive and explanatory reports: correctness by session/type, gain-ratio
importance grids and feature-group ablations."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import ITEMS_PER_DV, DEFAULT_SESSION_ORDER, Item, QuestionType, ResponseMatrix
from .eval import DEFAULT_SEEDS, RunResult, evaluate, mcnemar, stratified_folds
from .features import EXPERT, MEDIAN_DIFFICULTY, PERC_CORRECT, RASCH, FeatureTable
from .modeling.selection import gain_ratio

GROUPS = ("HumanProfile", "HumanProfileAndPerformance", "OnlyRasch", "All")
TYPE_ORDER = tuple(QuestionType)


def group_features(group: str, predictors: Sequence[str]) -> list[str]:
    """Predictors of ``group`` that exist in a table with ``predictors``."""
    derived = {EXPERT, RASCH, PERC_CORRECT, MEDIAN_DIFFICULTY}
    profile = [p for p in predictors if p not in derived]
    performance = [p for p in predictors if p in (PERC_CORRECT, MEDIAN_DIFFICULTY)]
    if group == "HumanProfile":
        return profile
    if group == "HumanProfileAndPerformance":
        return [p for p in predictors if p in set(profile) | set(performance)]
    if group == "OnlyRasch":
        return [p for p in predictors if p == RASCH]
    if group == "All":
        return list(predictors)
    raise ValueError(f"unknown feature group {group!r}; choose from {GROUPS}")


# --------------------------------------------------------------------------
# correctness by session and question type
# --------------------------------------------------------------------------


@dataclass
class HicSummary:
    cells: dict[tuple[int, QuestionType], tuple[float, int]]
    mcnemar: dict[tuple[QuestionType, int, int], tuple[float, float, int]]

    def mean(self, session: int, qtype: QuestionType) -> float:
        return self.cells[(session, qtype)][0]

    def write_csv(self, path, mcnemar_path=None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["session", "question_type", "mean_correct", "count"])
            for (s, t), (m, n) in sorted(self.cells.items(), key=lambda kv: (kv[0][0], TYPE_ORDER.index(kv[0][1]))):
                w.writerow([s, t.value, repr(m), n])
        if mcnemar_path is not None:
            with open(mcnemar_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["question_type", "session_a", "session_b", "statistic", "p_value", "n_pairs"])
                for (t, a, b), (stat, p, n) in self.mcnemar.items():
                    w.writerow([t.value, a, b, repr(stat), repr(p), n])


def hic_summary(
    matrix: ResponseMatrix,
    items: Sequence[Item] | None = None,
    session_pairs: Sequence[tuple[int, int]] = ((1, 8),),
    order: Sequence[QuestionType] = DEFAULT_SESSION_ORDER,
) -> HicSummary:
    """Mean correctness per (session, type) and McNemar tests between sessions.

    Subjects are paired across the two sessions; for a type with several
    items per session the k-th item of each session forms the k-th pair.
    """
    n_sessions = matrix.n_positions // ITEMS_PER_DV
    if n_sessions < 2:
        raise ValueError("need at least 2 sessions")
    if items is not None:
        matrix.validate(items)
    corr = matrix.correct.reshape(matrix.n_subjects, n_sessions, ITEMS_PER_DV)
    slots = {t: [j for j, o in enumerate(order) if o is t] for t in TYPE_ORDER}
    cells = {}
    for s in range(n_sessions):
        for t in TYPE_ORDER:
            vals = corr[:, s, slots[t]]
            cells[(s + 1, t)] = (float(vals.mean()) if vals.size else float("nan"), int(vals.size))
    tests = {}
    for a, b in session_pairs:
        if not (1 <= a <= n_sessions and 1 <= b <= n_sessions) or a == b:
            raise ValueError(f"invalid session pair ({a}, {b})")
        for t in TYPE_ORDER:
            pairs = np.column_stack([corr[:, a - 1, slots[t]].ravel(), corr[:, b - 1, slots[t]].ravel()])
            stat, p = mcnemar(pairs)
            tests[(t, a, b)] = (stat, p, len(pairs))
    return HicSummary(cells, tests)


# --------------------------------------------------------------------------
# gain-ratio importance
# --------------------------------------------------------------------------


def training_partitions(table: FeatureTable, seeds: Sequence[int], k: int = 10):
    """The training row sets the evaluation harness uses, in (seed, fold) order."""
    n = table.n_rows
    for seed in seeds:
        for test in stratified_folds(table.label, k, seed):
            yield seed, np.setdiff1d(np.arange(n), test, assume_unique=True)


def _table_importance(args):
    table, seeds, k = args
    import warnings

    values = {p: [] for p in table.predictors}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _, train in training_partitions(table, seeds, k):
            sub = table.take(train)
            for p in table.predictors:
                values[p].append(gain_ratio(sub, p))
    return {p: np.array(v) for p, v in values.items()}


@dataclass
class ImportanceGrid:
    """Gain ratio per feature, averaged over training partitions.

    ``per_dataset[position][feature]`` keeps every partition's value;
    ``cells[(feature, session, type)]`` pools datasets sharing a cell.
    """

    per_dataset: dict[int, dict[str, np.ndarray]]
    cells: dict[tuple[str, int, QuestionType], float]
    aggregate: str = "mean"

    def value(self, feature: str, session: int, qtype: QuestionType) -> float:
        return self.cells[(feature, session, qtype)]

    def ranking(self, session: int, qtype: QuestionType) -> list[str]:
        entries = [(f, v) for (f, s, t), v in self.cells.items() if s == session and t is qtype]
        return [f for f, _ in sorted(entries, key=lambda fv: -fv[1])]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "session", "question_type", f"{self.aggregate}_gain_ratio"])
            for (f, s, t), v in self.cells.items():
                w.writerow([f, s, t.value, repr(v)])


def importance_grid(
    tables: Sequence[FeatureTable],
    seeds: Sequence[int] = DEFAULT_SEEDS,
    k: int = 10,
    aggregate: str = "mean",
    workers: int = 1,
) -> ImportanceGrid:
    """Gain ratio of every feature on every training partition of every table."""
    if aggregate not in ("mean", "median"):
        raise ValueError("aggregate must be 'mean' or 'median'")
    jobs = [(t, tuple(seeds), k) for t in tables]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_table_importance, jobs))
    else:
        results = [_table_importance(j) for j in jobs]
    per_dataset = {t.position: r for t, r in zip(tables, results)}
    reduce = np.mean if aggregate == "mean" else np.median
    pooled: dict[tuple[str, int, QuestionType], list[np.ndarray]] = {}
    for t in tables:
        for f, vals in per_dataset[t.position].items():
            pooled.setdefault((f, t.session, t.question_type), []).append(vals)
    cells = {key: float(reduce(np.concatenate(v))) for key, v in pooled.items()}
    return ImportanceGrid(per_dataset, cells, aggregate)


# --------------------------------------------------------------------------
# feature-group ablation
# --------------------------------------------------------------------------


@dataclass
class AblationReport:
    runs: dict[str, list[RunResult]] = field(repr=False)
    cells: dict[tuple[str, int, QuestionType], tuple[float, float]]
    model: str = "LR"
    fs: bool = True

    def median_auc(self, group: str) -> float:
        vals = [r.auc for r in self.runs[group] if r.ok]
        return float(np.median(vals)) if vals else float("nan")

    def median_kappa(self, group: str) -> float:
        vals = [r.kappa for r in self.runs[group] if r.ok]
        return float(np.median(vals)) if vals else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["group", "session", "question_type", "median_auc", "median_kappa"])
            for (g, s, t), (a, k) in self.cells.items():
                w.writerow([g, s, t.value, repr(a), repr(k)])


def ablation(
    tables: Sequence[FeatureTable],
    groups: Sequence[str] = GROUPS,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    model: str = "LR",
    fs: bool = True,
    workers: int = 1,
    group_definitions: Mapping[str, Sequence[str]] | None = None,
    **kwargs,
) -> AblationReport:
    """Rerun the evaluation harness with each feature group alone."""
    runs: dict[str, list[RunResult]] = {}
    cells = {}
    for g in groups:
        projected = []
        for t in tables:
            if group_definitions and g in group_definitions:
                names = [p for p in t.predictors if p in set(group_definitions[g])]
            else:
                names = group_features(g, t.predictors)
            if names:
                projected.append(t.project(names))
        if not projected:
            raise ValueError(f"feature group {g!r} is empty")
        runs[g] = evaluate(projected, [(model, fs)], seeds, workers, **kwargs)
        by_cell: dict[tuple[int, QuestionType], list[RunResult]] = {}
        meta = {t.position: (t.session, t.question_type) for t in projected}
        for r in runs[g]:
            by_cell.setdefault(meta[r.dataset_position], []).append(r)
        for (s, qt), rs in sorted(by_cell.items(), key=lambda kv: (kv[0][0], TYPE_ORDER.index(kv[0][1]))):
            ok = [r for r in rs if r.ok]
            cells[(g, s, qt)] = (
                float(np.median([r.auc for r in ok])) if ok else float("nan"),
                float(np.median([r.kappa for r in ok])) if ok else float("nan"),
            )
    return AblationReport(runs, cells, model, fs)
