"""Dichotomous Rasch model calibrated by joint maximum likelihood (JMLE).

Item difficulties are identified by forcing them to sum to zero. Subjects
with an extreme raw score (nothing or everything correct) carry no
information about relative item difficulty and are left out of item
calibration; their abilities are estimated afterwards from a raw score
pulled 0.3 points away from the extreme.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .core import ResponseMatrix

EXTREME_SCORE_ADJUSTMENT = 0.3
MAX_STEP = 1.0


class CalibrationError(ValueError):
    pass


def response_probability(ability, difficulty):
    """Probability of a correct response, ``exp(a - b) / (1 + exp(a - b))``."""
    a = np.asarray(ability, dtype=float)
    b = np.asarray(difficulty, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("ability and difficulty must be finite")
    p = expit(a - b)
    return float(p) if np.ndim(p) == 0 else p


@dataclass
class RaschCalibration:
    item_difficulties: dict[str, float]
    person_abilities: dict[str, float]
    iterations: int
    max_residual: float
    converged: bool
    extreme_abilities: dict[str, float] = field(default_factory=dict)

    @property
    def constraint_residual(self) -> float:
        return float(abs(math.fsum(self.item_difficulties.values())))

    def difficulty_array(self, item_ids: Sequence[str]) -> np.ndarray:
        return np.array([self.item_difficulties[i] for i in item_ids])

    def to_dict(self) -> dict:
        return {
            "item_difficulties": self.item_difficulties,
            "person_abilities": self.person_abilities,
            "extreme_abilities": self.extreme_abilities,
            "iterations": self.iterations,
            "max_residual": self.max_residual,
            "converged": self.converged,
            "constraint_residual": self.constraint_residual,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RaschCalibration":
        return cls(
            item_difficulties=dict(d["item_difficulties"]),
            person_abilities=dict(d["person_abilities"]),
            iterations=int(d["iterations"]),
            max_residual=float(d["max_residual"]),
            converged=bool(d["converged"]),
            extreme_abilities=dict(d.get("extreme_abilities", {})),
        )


def _as_table(responses, subject_ids, item_ids):
    if isinstance(responses, ResponseMatrix):
        if item_ids is None:
            item_ids = sorted(set(responses.item_ids[0]))
        x = responses.by_item(item_ids)
        subject_ids = responses.subject_ids if subject_ids is None else subject_ids
    else:
        x = np.asarray(responses)
        if x.ndim != 2:
            raise ValueError("response table must be 2-D (subjects x items)")
    n, m = x.shape
    if subject_ids is None:
        subject_ids = [str(i) for i in range(n)]
    if item_ids is None:
        item_ids = [str(j) for j in range(m)]
    if len(subject_ids) != n or len(item_ids) != m:
        raise ValueError("id lists do not match table shape")
    return x.astype(float), list(subject_ids), list(item_ids)


def estimate_ability(responses, difficulties, tolerance: float = 1e-8, max_iterations: int = 100):
    """Maximum likelihood ability for fixed item difficulties.

    Extreme raw scores are adjusted by 0.3 toward the middle. Returns
    ``(ability, standard_error)``.
    """
    x = np.asarray(responses, dtype=float)
    b = np.asarray(difficulties, dtype=float)
    n = len(x)
    if n == 0:
        raise ValueError("no responses")
    score = x.sum()
    score = min(max(score, EXTREME_SCORE_ADJUSTMENT), n - EXTREME_SCORE_ADJUSTMENT)
    # start from the logit of the proportion correct, shifted by mean difficulty
    theta = math.log(score / (n - score)) + float(b.mean())
    for _ in range(max_iterations):
        p = expit(theta - b)
        info = float(np.sum(p * (1 - p)))
        step = (score - p.sum()) / info
        theta += float(np.clip(step, -MAX_STEP, MAX_STEP))
        if abs(step) < tolerance:
            break
    p = expit(theta - b)
    return theta, 1.0 / math.sqrt(float(np.sum(p * (1 - p))))


def _calibrate_arrays(x, mask, tolerance, max_iterations, theta0=None, b0=None):
    """Core JMLE loop on a complete-case array. Returns (theta, b, iterations, residual, converged)."""
    obs_counts_p = mask.sum(axis=1)
    obs_counts_i = mask.sum(axis=0)
    r = (x * mask).sum(axis=1)
    s = (x * mask).sum(axis=0)
    if theta0 is None:
        rr = np.clip(r, 0.5, obs_counts_p - 0.5)
        theta = np.log(rr / (obs_counts_p - rr))
    else:
        theta = np.array(theta0, dtype=float)
    if b0 is None:
        ss = np.clip(s, 0.5, obs_counts_i - 0.5)
        b = -np.log(ss / (obs_counts_i - ss))
        b -= b.mean()
    else:
        b = np.array(b0, dtype=float)
        shift = b.mean()
        b -= shift
        theta -= shift

    residual = np.inf
    for it in range(max_iterations + 1):
        p = expit(theta[:, None] - b[None, :]) * mask
        res_p = r - p.sum(axis=1)
        res_i = s - p.sum(axis=0)
        residual = float(max(np.abs(res_p).max(), np.abs(res_i).max()))
        if residual < tolerance:
            return theta, b, it, residual, True
        if it == max_iterations:
            break
        info_p = (p * (1 - p)).sum(axis=1)
        theta = theta + np.clip(res_p / info_p, -MAX_STEP, MAX_STEP)
        p = expit(theta[:, None] - b[None, :]) * mask
        res_i = s - p.sum(axis=0)
        info_i = (p * (1 - p)).sum(axis=0)
        b = b - np.clip(res_i / info_i, -MAX_STEP, MAX_STEP)
        shift = b.mean()
        b -= shift
        theta -= shift
    return theta, b, max_iterations, residual, False


def jmle_calibrate(
    responses,
    tolerance: float = 0.005,
    max_iterations: int = 200,
    warm_start: RaschCalibration | None = None,
    subject_ids: Sequence[str] | None = None,
    item_ids: Sequence[str] | None = None,
    mask: np.ndarray | None = None,
    bias_correction: bool = False,
) -> RaschCalibration:
    """Calibrate item difficulties and person abilities by JMLE.

    Parameters
    ----------
    responses : ResponseMatrix or array_like of shape (n_subjects, n_items)
        Binary correctness.
    tolerance : float
        Stop once every person and item score residual
        ``|observed - expected|`` is below this many score points.
    max_iterations : int
        Iteration cap; on exhaustion the result has ``converged=False``.
    warm_start : RaschCalibration, optional
        Starting values. Subjects or items unknown to it start cold.
    mask : array_like of bool, optional
        Observed cells; ``False`` cells are treated as missing.
    bias_correction : bool
        Multiply difficulties by ``(L - 1) / L``.
    """
    x, sids, iids = _as_table(responses, subject_ids, item_ids)
    n, m = x.shape
    mask = np.ones_like(x, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ValueError("mask shape does not match responses")
    if n < 2 or m < 2:
        raise CalibrationError("calibration needs at least 2 subjects and 2 items")
    if not np.isin(x[mask], (0.0, 1.0)).all():
        raise ValueError("responses must be binary")

    raw = (x * mask).sum(axis=1)
    n_obs = mask.sum(axis=1)
    extreme = (raw == 0) | (raw == n_obs)
    keep = ~extreme
    if keep.sum() < 2:
        raise CalibrationError("fewer than 2 subjects with non-extreme scores")
    xk, mk = x[keep], mask[keep]
    item_scores = (xk * mk).sum(axis=0)
    item_n = mk.sum(axis=0)
    for j in range(m):
        if item_scores[j] == 0 or item_scores[j] == item_n[j]:
            kind = "incorrect" if item_scores[j] == 0 else "correct"
            raise CalibrationError(f"item {iids[j]}: all responses {kind} after removing extreme subjects")

    theta0 = b0 = None
    if warm_start is not None:
        b0 = np.array([warm_start.item_difficulties.get(i, np.nan) for i in iids])
        if np.isnan(b0).any():
            b0 = None
        kept_ids = [sids[k] for k in np.flatnonzero(keep)]
        t0 = np.array([warm_start.person_abilities.get(sid, np.nan) for sid in kept_ids])
        if not np.isnan(t0).any():
            theta0 = t0
    theta, b, iterations, residual, converged = _calibrate_arrays(
        xk, mk, tolerance, max_iterations, theta0, b0
    )
    if bias_correction:
        b = b * (m - 1) / m
        b -= b.mean()

    abilities = {sids[k]: float(t) for k, t in zip(np.flatnonzero(keep), theta)}
    extreme_abilities = {}
    for k in np.flatnonzero(extreme):
        obs = mask[k]
        extreme_abilities[sids[k]] = estimate_ability(x[k, obs], b[obs])[0]
    return RaschCalibration(
        item_difficulties={iid: float(v) for iid, v in zip(iids, b)},
        person_abilities=abilities,
        iterations=iterations,
        max_residual=residual,
        converged=converged,
        extreme_abilities=extreme_abilities,
    )


@dataclass
class LooDifficultyTable:
    """Item difficulties calibrated with each subject held out.

    ``values[s, j]`` is the difficulty of ``item_ids[j]`` from the calibration
    that excludes subject ``subject_ids[s]`` (whole row, or only the single
    cell in ``"cell"`` mode).
    """

    subject_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    values: np.ndarray
    mode: str = "row"
    converged: np.ndarray | None = None

    def for_subject(self, subject_id: str) -> dict[str, float]:
        s = self.subject_ids.index(subject_id)
        return dict(zip(self.item_ids, self.values[s].tolist()))

    def __getitem__(self, subject_id: str) -> dict[str, float]:
        return self.for_subject(subject_id)


def _loo_row_task(args):
    x, sids, iids, s, tolerance, max_iterations, warm = args
    keep = np.ones(len(x), dtype=bool)
    keep[s] = False
    try:
        cal = jmle_calibrate(
            x[keep], tolerance, max_iterations, warm_start=warm,
            subject_ids=[sid for k, sid in enumerate(sids) if k != s], item_ids=iids,
        )
    except CalibrationError as exc:
        raise CalibrationError(f"held-out subject {sids[s]}: {exc}") from None
    return cal.difficulty_array(iids), cal.converged


def _loo_cell_task(args):
    x, sids, iids, s, tolerance, max_iterations, warm = args
    out = np.empty(x.shape[1])
    ok = True
    for j in range(x.shape[1]):
        mask = np.ones_like(x, dtype=bool)
        mask[s, j] = False
        try:
            cal = jmle_calibrate(
                x, tolerance, max_iterations, warm_start=warm, subject_ids=sids, item_ids=iids, mask=mask
            )
        except CalibrationError as exc:
            raise CalibrationError(f"held-out subject {sids[s]}, item {iids[j]}: {exc}") from None
        out[j] = cal.item_difficulties[iids[j]]
        ok = ok and cal.converged
    return out, ok


def loo_difficulties(
    matrix,
    tolerance: float = 0.005,
    max_iterations: int = 200,
    mode: str = "row",
    workers: int = 1,
    warm: bool = False,
    subject_ids: Sequence[str] | None = None,
    item_ids: Sequence[str] | None = None,
) -> LooDifficultyTable:
    """Leave-one-subject-out item difficulties.

    By default every held-out calibration starts cold, so subject ``s``'s
    difficulties are an exact function of the other subjects' responses.
    ``warm=True`` starts each from the full-data calibration instead; that is
    faster but lets the held-out subject shift results within ``tolerance``.
    """
    if mode not in ("row", "cell"):
        raise ValueError("mode must be 'row' or 'cell'")
    x, sids, iids = _as_table(matrix, subject_ids, item_ids)
    full = jmle_calibrate(x, tolerance, max_iterations, subject_ids=sids, item_ids=iids)
    start = full if warm else None
    n = len(sids)
    values = np.empty((n, len(iids)))
    converged = np.zeros(n, dtype=bool)
    task = _loo_row_task if mode == "row" else _loo_cell_task

    todo = []
    for s in range(n):
        if mode == "row" and sids[s] in full.extreme_abilities:
            # extreme subjects never enter item calibration: dropping them is a no-op
            values[s] = full.difficulty_array(iids)
            converged[s] = full.converged
        else:
            todo.append(s)
    jobs = [(x, sids, iids, s, tolerance, max_iterations, start) for s in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(task, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [task(j) for j in jobs]
    for s, (vals, ok) in zip(todo, results):
        values[s] = vals
        converged[s] = ok
    values.flags.writeable = False
    return LooDifficultyTable(tuple(sids), tuple(iids), values, mode, converged)
