"""Filter feature selection: MDL discretization, gain ratio and CFS."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..features import FeatureTable


class SelectionError(ValueError):
    pass


def entropy(counts) -> float:
    """Shannon entropy in bits of a vector of counts."""
    c = np.asarray(counts, dtype=float)
    c = c[c > 0]
    if c.size == 0:
        return 0.0
    p = c / c.sum()
    return float(-(p * np.log2(p)).sum())


def _entropy_rows(counts: np.ndarray) -> np.ndarray:
    """Row-wise entropy of a (m, k) count array."""
    n = counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(n > 0, counts / np.where(n > 0, n, 1), 0.0)
        logs = np.where(p > 0, np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return -(p * logs).sum(axis=1)


def mdl_cut_points(values, labels) -> np.ndarray:
    """Supervised entropy discretization with the MDL stopping rule.

    Recursively splits at the boundary minimising class entropy and keeps a
    split only when its information gain pays for the description length of
    the cut. Missing (NaN) values are ignored. Returns sorted cut points.
    """
    v = np.asarray(values, dtype=float)
    y = np.asarray(labels)
    ok = ~np.isnan(v)
    v, y = v[ok], y[ok]
    if v.size < 2:
        return np.empty(0)
    classes, y = np.unique(y, return_inverse=True)
    n_classes = len(classes)
    order = np.argsort(v, kind="stable")
    v, y = v[order], y[order]
    onehot = np.zeros((v.size, n_classes))
    onehot[np.arange(v.size), y] = 1.0
    cum = np.vstack([np.zeros(n_classes), np.cumsum(onehot, axis=0)])

    cuts: list[float] = []
    stack = [(0, v.size)]
    while stack:
        lo, hi = stack.pop()
        n = hi - lo
        if n < 2:
            continue
        # candidate split after local index i: v[i] < v[i+1]
        boundary = np.flatnonzero(v[lo:hi - 1] < v[lo + 1:hi])
        if boundary.size == 0:
            continue
        total = cum[hi] - cum[lo]
        left = cum[lo + boundary + 1] - cum[lo]
        right = total - left
        n_left = boundary + 1.0
        n_right = n - n_left
        e_split = (n_left * _entropy_rows(left) + n_right * _entropy_rows(right)) / n
        best = int(np.argmin(e_split))
        ent = entropy(total)
        gain = ent - e_split[best]
        k = int((total > 0).sum())
        k1 = int((left[best] > 0).sum())
        k2 = int((right[best] > 0).sum())
        delta = math.log2(3**k - 2) - (k * ent - k1 * entropy(left[best]) - k2 * entropy(right[best]))
        if gain > (math.log2(n - 1) + delta) / n:
            i = lo + boundary[best]
            cuts.append((v[i] + v[i + 1]) / 2.0)
            stack.append((lo, i + 1))
            stack.append((i + 1, hi))
    return np.array(sorted(cuts))


def discretize(values, cuts) -> np.ndarray:
    """Bin index per value; NaN goes to its own bin after the last interval."""
    v = np.asarray(values, dtype=float)
    codes = np.searchsorted(cuts, v, side="right")
    codes[np.isnan(v)] = len(cuts) + 1
    return codes.astype(np.int64)


def nominal_codes(table: FeatureTable, name: str) -> np.ndarray:
    """Integer codes for a predictor, MDL-discretizing numeric ones on this table."""
    col = table.column(name)
    v = table.data[name]
    if col.kind == "categorical":
        return np.asarray(v, dtype=np.int64)
    return discretize(v, mdl_cut_points(v, table.label))


def _joint_entropy(a: np.ndarray, b: np.ndarray) -> float:
    nb = int(b.max()) + 1 if b.size else 1
    return entropy(np.bincount(a * nb + b))


def information_gain(x_codes, y) -> float:
    hx = entropy(np.bincount(x_codes))
    hy = entropy(np.bincount(y))
    return hx + hy - _joint_entropy(np.asarray(x_codes), np.asarray(y))


def gain_ratio_codes(x_codes, y) -> float:
    x_codes = np.asarray(x_codes, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    hx = entropy(np.bincount(x_codes))
    if hx <= 0.0:
        return 0.0
    return max(0.0, information_gain(x_codes, y) / hx)


def gain_ratio(table: FeatureTable, predictor: str) -> float:
    """(H(class) - H(class | predictor)) / H(predictor); 0 for a single-bin predictor."""
    return gain_ratio_codes(nominal_codes(table, predictor), table.label)


def symmetric_uncertainty(a, b) -> float:
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    ha, hb = entropy(np.bincount(a)), entropy(np.bincount(b))
    if ha + hb <= 0.0:
        return 0.0
    return max(0.0, 2.0 * (ha + hb - _joint_entropy(a, b)) / (ha + hb))


def cfs_merit(k: int, mean_rcf: float, mean_rff: float) -> float:
    """Merit of a k-subset: k * mean(r_cf) / sqrt(k + k(k-1) * mean(r_ff))."""
    if k == 0:
        return 0.0
    return k * mean_rcf / math.sqrt(k + k * (k - 1) * mean_rff)


@dataclass
class SelectionResult:
    selected: tuple[str, ...]
    scores: dict[str, float]
    selector_kind: str
    merit: float | None = None
    extra: dict = field(default_factory=dict)


def _check_class(table: FeatureTable) -> None:
    if table.n_rows == 0 or np.unique(table.label).size < 2:
        raise SelectionError("class is constant; nothing to select against")
    if not table.columns:
        raise SelectionError("table has no predictors")


def cfs_select(table: FeatureTable) -> SelectionResult:
    """Correlation-based feature selection with greedy forward search.

    Correlations are symmetric uncertainties between MDL-discretized
    predictors. Search adds the predictor that most improves subset merit
    and stops when no addition improves it; ties go to the earlier column.
    """
    _check_class(table)
    names = table.predictors
    y = np.asarray(table.label, dtype=np.int64)
    codes = [nominal_codes(table, n) for n in names]
    rcf = np.array([symmetric_uncertainty(c, y) for c in codes])
    m = len(names)
    rff = np.full((m, m), np.nan)

    def ff(i, j):
        if np.isnan(rff[i, j]):
            rff[i, j] = rff[j, i] = symmetric_uncertainty(codes[i], codes[j])
        return rff[i, j]

    selected: list[int] = []
    sum_cf, sum_ff = 0.0, 0.0
    merit = 0.0
    while len(selected) < m:
        best, best_merit, best_ff = -1, merit, 0.0
        k = len(selected) + 1
        for c in range(m):
            if c in selected:
                continue
            add_ff = sum(ff(c, s) for s in selected)
            pairs = k * (k - 1) / 2
            mean_ff = (sum_ff + add_ff) / pairs if pairs else 0.0
            cand = cfs_merit(k, (sum_cf + rcf[c]) / k, mean_ff)
            if cand > best_merit + 1e-12:
                best, best_merit, best_ff = c, cand, add_ff
        if best < 0:
            break
        selected.append(best)
        sum_cf += rcf[best]
        sum_ff += best_ff
        merit = best_merit
    if not selected:
        # every predictor is uninformative; keep the first best-correlated one
        selected = [int(np.argmax(rcf))]
        merit = float(rcf[selected[0]])
    return SelectionResult(
        selected=tuple(names[i] for i in selected),
        scores={n: float(r) for n, r in zip(names, rcf)},
        selector_kind="CFS",
        merit=float(merit),
    )


def gain_ratio_rank(table: FeatureTable, top_k: int | None = None) -> SelectionResult:
    """Rank predictors by gain ratio; keep the ``top_k`` best (all by default)."""
    _check_class(table)
    scores = {n: gain_ratio(table, n) for n in table.predictors}
    order = sorted(table.predictors, key=lambda n: (-scores[n], table.predictors.index(n)))
    keep = order if top_k is None else order[: max(1, top_k)]
    return SelectionResult(selected=tuple(keep), scores=scores, selector_kind="GainRatioRank")
