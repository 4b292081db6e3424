"""Ability updates, item selection policies and the adaptive simulator."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phic.adaptive import (
    AssessmentState,
    Policy,
    item_information,
    select_next,
    simulate,
    start_state,
    update_ability,
)
from phic.ingest import SyntheticConfig, generate_synthetic
from phic.rasch import estimate_ability, response_probability


def bank(*values):
    return {f"q{i:02d}": float(v) for i, v in enumerate(values)}


def administer(difficulties, responses):
    state = start_state(difficulties)
    for item, correct in responses:
        state = update_ability(state, item, correct, difficulties)
    return state


@pytest.fixture(scope="module")
def item_bank():
    _, truth = generate_synthetic(SyntheticConfig(n_subjects=10, seed=0))
    return dict(truth.difficulties)


class TestAssessmentState:
    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            AssessmentState((("a", 1),), 0.0, 1.0, frozenset({"a", "b"}))

    def test_non_finite_estimate_rejected(self):
        with pytest.raises(ValueError):
            AssessmentState((), math.nan, 1.0, frozenset({"a"}))


class TestUpdateAbility:
    def test_single_item_is_finite(self):
        for correct in (0, 1):
            state = administer(bank(0), [("q00", correct)])
            assert math.isfinite(state.ability_estimate)
            assert math.isfinite(state.ability_se)
        # the adjusted score 0.7 of 1 on b=0 gives logit(0.7)
        assert administer(bank(0), [("q00", 1)]).ability_estimate == pytest.approx(math.log(0.7 / 0.3))

    def test_symmetric_pattern(self):
        state = administer(bank(0, 0), [("q00", 1), ("q01", 0)])
        assert state.ability_estimate == pytest.approx(0.0, abs=1e-9)
        assert state.ability_se == pytest.approx(math.sqrt(2.0))

    def test_se_is_inverse_root_information(self):
        b = bank(-1, 0.5, 1, 2)
        state = administer(b, [("q00", 1), ("q01", 1), ("q02", 0), ("q03", 0)])
        info = item_information(state.ability_estimate, np.array(list(b.values()))).sum()
        assert state.ability_se == pytest.approx(1 / math.sqrt(info))

    def test_unavailable_item(self):
        state = administer(bank(0, 1), [("q00", 1)])
        with pytest.raises(ValueError):
            update_ability(state, "q00", 1, bank(0, 1))
        with pytest.raises(ValueError):
            update_ability(state, "zz", 1, bank(0, 1))

    def test_coverage(self):
        rng = np.random.default_rng(4)
        b = np.linspace(-2, 2, 16)
        hits = 0
        for _ in range(1000):
            x = (rng.random(16) < response_probability(1.0, b)).astype(float)
            theta, se = estimate_ability(x, b)
            hits += abs(theta - 1.0) <= 2 * se
        assert hits >= 950

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.floats(-3, 3), st.integers(0, 1)), min_size=1, max_size=10), st.randoms())
    def test_permutation_invariant(self, pairs, rnd):
        difficulties = {f"q{i}": b for i, (b, _) in enumerate(pairs)}
        responses = [(f"q{i}", c) for i, (_, c) in enumerate(pairs)]
        shuffled = list(responses)
        rnd.shuffle(shuffled)
        a = administer(difficulties, responses)
        b = administer(difficulties, shuffled)
        assert a.ability_estimate == pytest.approx(b.ability_estimate, abs=1e-6)
        assert a.ability_se == pytest.approx(b.ability_se, rel=1e-6)


class TestSelectNext:
    def test_maxinfo_peak(self):
        b = bank(-2, 0, 2)
        assert select_next(Policy("MaxInfo"), start_state(b), b) == "q01"

    def test_maxinfo_ties_by_item_id(self):
        b = {"b": 1.0, "a": -1.0}
        assert select_next(Policy("MaxInfo"), start_state(b), b) == "a"

    def test_constrained_example(self):
        b = bank(-1, 0, 1)
        assert select_next(Policy("PhicConstrained", tau=0.6), start_state(b), b) == "q00"
        p = response_probability(0.0, np.array([-1.0, 0.0, 1.0]))
        np.testing.assert_allclose(p, [0.731, 0.5, 0.269], atol=5e-4)

    def test_constrained_fallback_to_easiest(self):
        b = bank(3, 4, 5)
        assert select_next(Policy("PhicConstrained", tau=0.5), start_state(b), b) == "q00"

    def test_custom_predictor(self):
        b = bank(-1, 0, 1)
        predict = lambda state, item: 0.9 if item == "q02" else 0.1  # noqa: E731
        assert select_next(Policy("PhicConstrained", tau=0.5), start_state(b), b, predict=predict) == "q02"

    def test_random_reproducible(self):
        b = bank(*range(10))
        picks = [
            [select_next(Policy("Random"), start_state(b), b, np.random.default_rng(9)) for _ in range(3)]
            for _ in range(2)
        ]
        assert picks[0] == picks[1]
        with pytest.raises(ValueError):
            select_next(Policy("Random"), start_state(b), b)

    def test_empty_remaining(self):
        with pytest.raises(ValueError):
            select_next(Policy("MaxInfo"), AssessmentState((), 0.0, 1.0, frozenset()), {})

    def test_invalid_policy(self):
        with pytest.raises(ValueError):
            Policy("Greedy")
        for tau in (0.0, 1.0, -0.2):
            with pytest.raises(ValueError):
                Policy("PhicConstrained", tau=tau)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=12, unique=True), st.floats(-2, 2))
    def test_argmax_invariant_to_monotone_transform(self, values, theta):
        b = bank(*values)
        state = AssessmentState((), theta, 1.0, frozenset(b))
        chosen = select_next(Policy("MaxInfo"), state, b)
        ids = sorted(b)
        info = item_information(theta, np.array([b[i] for i in ids]))
        for transform in (np.sqrt, np.log1p, lambda v: 3 * v - 1):
            assert ids[int(np.argmax(transform(info)))] == chosen


class TestSimulate:
    def test_full_bank_identical_sets(self, item_bank):
        policies = [Policy("Random"), Policy("MaxInfo"), Policy("PhicConstrained", tau=0.3)]
        report = simulate(policies, item_bank, n_respondents=25, seed=2)
        runs = list(report.trajectories.values())
        for r in range(25):
            sets = [set(trs[r].administered) for trs in runs]
            assert all(s == set(item_bank) for s in sets)
            finals = [trs[r].final_estimate for trs in runs]
            assert max(finals) - min(finals) < 1e-6

    def test_maxinfo_beats_random(self, item_bank):
        report = simulate([Policy("Random"), Policy("MaxInfo")], item_bank, n_respondents=500, se_target=0.6, seed=0)
        s = report.summary()
        assert s["MaxInfo"]["median_items"] < s["Random"]["median_items"]

    def test_vacuous_constraint_equals_maxinfo(self, item_bank):
        report = simulate(
            [Policy("MaxInfo"), Policy("PhicConstrained", tau=1e-12)], item_bank, n_respondents=40, max_items=12, seed=1
        )
        a, b = report.trajectories.values()
        assert [t.steps for t in a] == [t.steps for t in b]

    def test_deterministic(self, item_bank, tmp_path):
        args = ([Policy("Random"), Policy("MaxInfo")], item_bank)
        kw = dict(n_respondents=20, max_items=8, seed=3)
        simulate(*args, **kw).write_csv(tmp_path / "a.csv")
        simulate(*args, **kw).write_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        header = (tmp_path / "a.csv").read_text().splitlines()[0]
        assert header == "policy,respondent,step,item_id,correct,estimate,se"

    def test_budget_and_target(self, item_bank):
        report = simulate([Policy("MaxInfo")], item_bank, n_respondents=30, max_items=5, se_target=0.6, seed=0)
        trs = report.trajectories["MaxInfo"]
        assert all(t.items_used <= 5 for t in trs)
        assert all(t.steps[-1][3] <= 0.6 for t in trs if t.reached_target)
        summary = report.summary()["MaxInfo"]
        assert set(summary) >= {"median_abs_error", "median_items", "reached_target"}
        assert report.config["max_items"] == 5
