"""Repeated stratified cross-validation, metrics and Table-1 style aggregation."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import chi2, rankdata

from ._rng import derive_int, derive_rng
from .features import FeatureTable
from .modeling import SELECTORS, ModelError, SelectionError, embed_selection, make_learner

log = logging.getLogger(__name__)

MODEL_ORDER = ("LR", "MLP", "RF")
DEFAULT_CONFIGS: tuple[tuple[str, bool], ...] = tuple((m, fs) for m in MODEL_ORDER for fs in (False, True))
DEFAULT_SEEDS = tuple(range(1, 11))


class UndefinedMetric(ValueError):
    """The metric is undefined for this input (e.g. a single class)."""


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score of a positive > score of a negative), ties count 1/2.

    Positives (label 1) are incorrect answers.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def kappa(predictions, labels, threshold: float = 0.5) -> float:
    """Cohen's kappa of ``predictions >= threshold`` against binary ``labels``."""
    pred = np.asarray(predictions, dtype=float) >= threshold
    y = np.asarray(labels).astype(bool)
    n = len(y)
    if n == 0:
        raise UndefinedMetric("kappa needs at least one row")
    tp = np.sum(pred & y)
    tn = np.sum(~pred & ~y)
    p_o = (tp + tn) / n
    p_e = (pred.sum() * y.sum() + (~pred).sum() * (~y).sum()) / n**2
    if p_e >= 1.0:
        return 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def mcnemar(paired_outcomes) -> tuple[float, float]:
    """Continuity-corrected McNemar test on paired binary outcomes.

    Returns ``(statistic, p_value)`` with statistic ``(|b - c| - 1)^2 / (b + c)``
    over the discordant counts.
    """
    pairs = np.asarray(list(paired_outcomes), dtype=int).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("mcnemar needs at least one pair")
    b = int(np.sum((pairs[:, 0] == 1) & (pairs[:, 1] == 0)))
    c = int(np.sum((pairs[:, 0] == 0) & (pairs[:, 1] == 1)))
    if b + c == 0:
        return 0.0, 1.0
    stat = max(abs(b - c) - 1.0, 0.0) ** 2 / (b + c)
    return float(stat), float(chi2.sf(stat, 1))


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------


def stratified_folds(labels, k: int = 10, seed: int = 1) -> list[np.ndarray]:
    """Shuffle, group by class, and deal rows round-robin into ``k`` test folds."""
    y = np.asarray(labels)
    n = len(y)
    if n < k:
        raise ValueError(f"need at least k={k} rows, got {n}")
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise ValueError("stratification needs both classes")
    if counts.min() < k:
        warnings.warn(
            f"a class has {counts.min()} rows, fewer than one per fold (k={k}); folds are best-effort",
            stacklevel=2,
        )
    perm = derive_rng(seed, "folds").permutation(n)
    ordered = perm[np.argsort(y[perm], kind="stable")]
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[ordered] = np.arange(n) % k
    return [np.flatnonzero(fold_of == f) for f in range(k)]


def config_id(model: str, fs: bool) -> str:
    return f"{model}+{'FS' if fs else 'noFS'}"


@dataclass
class RunResult:
    dataset_position: int
    model: str
    fs: bool
    seed: int
    probabilities: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    fold_of: np.ndarray = field(repr=False)
    auc: float = float("nan")
    kappa: float = float("nan")
    error: str | None = None
    selected: list = field(default_factory=list, repr=False)

    @property
    def config(self) -> tuple[str, bool]:
        return self.model, self.fs

    @property
    def ok(self) -> bool:
        return self.error is None and np.isfinite(self.auc)


def build_learner(model: str, fs: bool, selector: str = "CFS", learner_config: dict | None = None):
    learner = make_learner(model, **(learner_config or {}).get(model, {}))
    if fs:
        learner = embed_selection(learner, SELECTORS[selector])
    return learner


def run_cv_seed(
    table: FeatureTable,
    model: str,
    fs: bool,
    seed: int,
    k: int = 10,
    selector: str = "CFS",
    learner_config: dict | None = None,
    pooling: str = "pool",
    threshold: float = 0.5,
) -> RunResult:
    learner = build_learner(model, fs, selector, learner_config)
    n = table.n_rows
    probs = np.full(n, np.nan)
    fold_of = np.full(n, -1, dtype=np.int64)
    selected = []
    result = RunResult(table.position, model, fs, seed, probs, table.label.copy(), fold_of, selected=selected)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            folds = stratified_folds(table.label, k, seed)
        for f, test in enumerate(folds):
            train = np.setdiff1d(np.arange(n), test, assume_unique=True)
            fitted = learner(table.take(train), derive_int(seed, "learner", f))
            probs[test] = fitted.predict_proba(table.take(test))[:, 1]
            fold_of[test] = f
            selected.append(list(fitted.feature_schema))
    except (ModelError, SelectionError, np.linalg.LinAlgError, ValueError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        log.warning("position %d %s seed %d failed: %s", table.position, config_id(model, fs), seed, exc)
        return result
    try:
        if pooling == "pool":
            result.auc = auc(probs, table.label)
            result.kappa = kappa(probs, table.label, threshold)
        else:
            aucs, kappas = [], []
            for f in range(k):
                m = fold_of == f
                try:
                    aucs.append(auc(probs[m], table.label[m]))
                except UndefinedMetric:
                    pass
                kappas.append(kappa(probs[m], table.label[m], threshold))
            result.auc = float(np.mean(aucs)) if aucs else float("nan")
            result.kappa = float(np.mean(kappas))
    except UndefinedMetric as exc:
        result.error = f"UndefinedMetric: {exc}"
    return result


def run_repeated_cv(
    table: FeatureTable,
    model: str,
    fs: bool,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    **kwargs,
) -> list[RunResult]:
    """Ten-fold CV repeated once per seed on one positional table."""
    return [run_cv_seed(table, model, fs, s, **kwargs) for s in seeds]


_TABLES: list[FeatureTable] = []


def _init_worker(tables):
    global _TABLES
    _TABLES = tables


def _unit(args):
    t, model, fs, seed, kwargs = args
    return run_cv_seed(_TABLES[t], model, fs, seed, **kwargs)


def evaluate(
    tables: Sequence[FeatureTable],
    configs: Iterable[tuple[str, bool]] = DEFAULT_CONFIGS,
    seeds: Sequence[int] = DEFAULT_SEEDS,
    workers: int = 1,
    **kwargs,
) -> list[RunResult]:
    """Run every (table, config, seed) unit; results come back in a fixed order."""
    tables = list(tables)
    units = [(t, m, fs, s, kwargs) for t in range(len(tables)) for (m, fs) in configs for s in seeds]
    if workers > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(tables,)) as pool:
            runs = list(pool.map(_unit, units, chunksize=max(1, len(units) // (8 * workers))))
    else:
        _init_worker(tables)
        runs = [_unit(u) for u in units]
    failed = [r for r in runs if not r.ok]
    if failed:
        log.warning("%d of %d runs failed and are excluded from medians", len(failed), len(runs))
    return runs


# --------------------------------------------------------------------------
# aggregation
# --------------------------------------------------------------------------


@dataclass
class ConfigSummary:
    model: str
    fs: bool
    pct_best: float
    median_auc: float
    median_kappa: float
    n_runs: int
    n_failed: int

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "fs": "yes" if self.fs else "no",
            "pct_best": self.pct_best,
            "median_auc": self.median_auc,
            "median_kappa": self.median_kappa,
            "n_runs": self.n_runs,
            "n_failed": self.n_failed,
        }


@dataclass
class SummaryTable:
    rows: list[ConfigSummary]
    n_datasets: int

    def __getitem__(self, config: tuple[str, bool]) -> ConfigSummary:
        for r in self.rows:
            if (r.model, r.fs) == tuple(config):
                return r
        raise KeyError(config)

    @property
    def leader(self) -> tuple[str, bool]:
        best = max(self.rows, key=lambda r: r.pct_best)
        return best.model, best.fs

    def to_dict(self) -> dict:
        return {"n_datasets": self.n_datasets, "configs": [r.to_dict() for r in self.rows]}

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _median(values) -> float:
    v = [x for x in values if np.isfinite(x)]
    return float(np.median(v)) if v else float("nan")


def aggregate_summary(runs: Sequence[RunResult]) -> SummaryTable:
    """Per config medians over all (dataset, seed) runs plus the share of datasets won.

    A dataset is won by the config with the highest median AUC over its
    seeds; ties fall to the higher median kappa and residual ties are split.
    """
    configs = sorted({r.config for r in runs}, key=lambda c: (MODEL_ORDER.index(c[0]) if c[0] in MODEL_ORDER else 99, c[0], c[1]))
    positions = sorted({r.dataset_position for r in runs})
    wins = {c: 0.0 for c in configs}
    for p in positions:
        stats = {}
        for c in configs:
            sel = [r for r in runs if r.dataset_position == p and r.config == c and r.ok]
            stats[c] = (_median(r.auc for r in sel), _median(r.kappa for r in sel))
        finite = {c: s for c, s in stats.items() if np.isfinite(s[0])}
        if not finite:
            continue
        top_auc = max(s[0] for s in finite.values())
        leaders = [c for c, s in finite.items() if s[0] == top_auc]
        top_kappa = max(finite[c][1] if np.isfinite(finite[c][1]) else -np.inf for c in leaders)
        leaders = [c for c in leaders if (finite[c][1] if np.isfinite(finite[c][1]) else -np.inf) == top_kappa]
        for c in leaders:
            wins[c] += 1.0 / len(leaders)
    n_scored = sum(wins.values())
    rows = []
    for c in configs:
        sel = [r for r in runs if r.config == c]
        good = [r for r in sel if r.ok]
        rows.append(
            ConfigSummary(
                model=c[0],
                fs=c[1],
                pct_best=wins[c] / n_scored if n_scored else 0.0,
                median_auc=_median(r.auc for r in good),
                median_kappa=_median(r.kappa for r in good),
                n_runs=len(good),
                n_failed=len(sel) - len(good),
            )
        )
    return SummaryTable(rows, len(positions))


def write_runs_csv(runs: Sequence[RunResult], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset_position", "model", "fs", "seed", "auc", "kappa"])
        for r in runs:
            w.writerow([r.dataset_position, r.model, "yes" if r.fs else "no", r.seed, repr(r.auc), repr(r.kappa)])


def read_runs_csv(path) -> list[RunResult]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            a, k = float(row["auc"]), float(row["kappa"])
            out.append(
                RunResult(
                    int(row["dataset_position"]), row["model"], row["fs"] == "yes", int(row["seed"]),
                    np.empty(0), np.empty(0), np.empty(0), a, k,
                    None if np.isfinite(a) else "missing metric",
                )
            )
    return out
