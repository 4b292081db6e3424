"""Adaptive item selection over a calibrated Rasch item bank."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from ._rng import derive_rng
from .rasch import estimate_ability, response_probability

POLICY_KINDS = ("Random", "MaxInfo", "PhicConstrained")


@dataclass(frozen=True)
class AssessmentState:
    administered: tuple[tuple[str, int], ...]
    ability_estimate: float
    ability_se: float
    remaining: frozenset

    def __post_init__(self):
        if {i for i, _ in self.administered} & self.remaining:
            raise ValueError("an administered item is still listed as remaining")
        if not math.isfinite(self.ability_estimate):
            raise ValueError("ability estimate must be finite")


def start_state(difficulties: Mapping[str, float], initial_estimate: float = 0.0) -> AssessmentState:
    return AssessmentState((), float(initial_estimate), math.inf, frozenset(difficulties))


def update_ability(
    state: AssessmentState, item_id: str, correct: int, difficulties: Mapping[str, float]
) -> AssessmentState:
    """Add a response and re-estimate ability by maximum likelihood.

    Difficulties stay fixed. All-correct or all-incorrect interim patterns
    use a raw score pulled 0.3 away from the extreme, so the estimate stays
    finite.
    """
    if item_id not in state.remaining:
        raise ValueError(f"item {item_id} is not available")
    administered = state.administered + ((item_id, int(correct)),)
    x = np.array([c for _, c in administered], dtype=float)
    b = np.array([difficulties[i] for i, _ in administered], dtype=float)
    theta, se = estimate_ability(x, b)
    return replace(
        state,
        administered=administered,
        ability_estimate=float(theta),
        ability_se=float(se),
        remaining=state.remaining - {item_id},
    )


@dataclass(frozen=True)
class Policy:
    kind: str
    tau: float = 0.25

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}; choose from {POLICY_KINDS}")
        if self.kind == "PhicConstrained" and not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")

    @property
    def name(self) -> str:
        return f"PhicConstrained(tau={self.tau:g})" if self.kind == "PhicConstrained" else self.kind


def item_information(ability: float, difficulty) -> np.ndarray:
    p = response_probability(ability, difficulty)
    return p * (1 - p)


def select_next(
    policy: Policy,
    state: AssessmentState,
    difficulties: Mapping[str, float],
    rng: np.random.Generator | None = None,
    predict: Callable[[AssessmentState, str], float] | None = None,
) -> str:
    """Choose the next item.

    ``predict`` overrides the Rasch success probability used by the
    PhicConstrained eligibility filter (e.g. a trained classifier).
    """
    if not state.remaining:
        raise ValueError("no remaining items")
    candidates = sorted(state.remaining)
    if policy.kind == "Random":
        if rng is None:
            raise ValueError("Random policy needs a random generator")
        return candidates[int(rng.integers(len(candidates)))]
    b = np.array([difficulties[i] for i in candidates])
    info = item_information(state.ability_estimate, b)
    if policy.kind == "PhicConstrained":
        if predict is None:
            p = response_probability(state.ability_estimate, b)
        else:
            p = np.array([predict(state, i) for i in candidates])
        eligible = p >= policy.tau
        if not eligible.any():
            return candidates[int(np.argmin(b))]
        info = np.where(eligible, info, -np.inf)
    return candidates[int(np.argmax(info))]


@dataclass
class Trajectory:
    policy: str
    respondent: int
    true_ability: float
    steps: list[tuple[str, int, float, float]] = field(default_factory=list)
    reached_target: bool = False

    @property
    def items_used(self) -> int:
        return len(self.steps)

    @property
    def final_estimate(self) -> float:
        return self.steps[-1][2] if self.steps else 0.0

    @property
    def administered(self) -> list[str]:
        return [s[0] for s in self.steps]


@dataclass
class SimulationReport:
    trajectories: dict[str, list[Trajectory]]
    config: dict

    def summary(self) -> dict[str, dict]:
        out = {}
        for name, trs in self.trajectories.items():
            used = np.array([t.items_used for t in trs])
            err = np.array([abs(t.final_estimate - t.true_ability) for t in trs])
            out[name] = {
                "median_abs_error": float(np.median(err)),
                "mean_abs_error": float(np.mean(err)),
                "median_items": float(np.median(used)),
                "mean_items": float(np.mean(used)),
                "items_q10": float(np.quantile(used, 0.1)),
                "items_q90": float(np.quantile(used, 0.9)),
                "reached_target": float(np.mean([t.reached_target for t in trs])),
            }
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", "respondent", "step", "item_id", "correct", "estimate", "se"])
            for name, trs in self.trajectories.items():
                for t in trs:
                    for k, (iid, c, est, se) in enumerate(t.steps, start=1):
                        w.writerow([name, t.respondent, k, iid, c, repr(est), repr(se)])


def simulate(
    policies: Sequence[Policy],
    difficulties: Mapping[str, float],
    n_respondents: int = 500,
    ability_mean: float = 0.0,
    ability_sd: float = 1.0,
    max_items: int | None = None,
    se_target: float | None = None,
    seed: int = 0,
) -> SimulationReport:
    """Administer the bank to simulated Rasch respondents under each policy.

    Every respondent has one fixed latent response per item, shared by all
    policies, so policies are compared on identical people.
    """
    bank = dict(difficulties)
    budget = len(bank) if max_items is None else min(max_items, len(bank))
    thetas = derive_rng(seed, "sim-ability").normal(ability_mean, ability_sd, n_respondents)
    ids = sorted(bank)
    b = np.array([bank[i] for i in ids])
    trajectories: dict[str, list[Trajectory]] = {}
    for policy in policies:
        runs = []
        for r in range(n_respondents):
            u = derive_rng(seed, "sim-response", r).random(len(ids))
            answers = dict(zip(ids, (u < response_probability(thetas[r], b)).astype(int)))
            rng = derive_rng(seed, "sim-random", r)
            state = start_state(bank)
            tr = Trajectory(policy.name, r, float(thetas[r]))
            while state.remaining and tr.items_used < budget:
                item = select_next(policy, state, bank, rng)
                state = update_ability(state, item, answers[item], bank)
                tr.steps.append((item, answers[item], state.ability_estimate, state.ability_se))
                if se_target is not None and state.ability_se <= se_target:
                    tr.reached_target = True
                    break
            runs.append(tr)
        trajectories[policy.name] = runs
    config = {
        "policies": [p.name for p in policies],
        "n_respondents": n_respondents,
        "ability_mean": ability_mean,
        "ability_sd": ability_sd,
        "max_items": budget,
        "se_target": se_target,
        "seed": seed,
    }
    return SimulationReport(trajectories, config)
