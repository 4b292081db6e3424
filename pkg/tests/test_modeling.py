"""Classifiers, selectors and selection embedded in training."""

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import expit

from _tables import make_table
from phic.modeling import (
    SelectedModel,
    SelectionError,
    cfs_select,
    embed_selection,
    gain_ratio,
    gain_ratio_rank,
    make_learner,
    train_logistic,
    train_mlp,
    train_random_forest,
)
from phic.modeling.base import ModelError
from phic.modeling.encoding import Encoder
from phic.modeling.forest import default_features_per_split, fit_tree
from phic.modeling.logistic import fit_irls, penalized_gradient, penalized_loglik
from phic.modeling.mlp import init_params, loss_and_gradient
from phic.modeling.selection import (
    cfs_merit,
    entropy,
    gain_ratio_codes,
    mdl_cut_points,
    symmetric_uncertainty,
)
from phic._rng import derive_int, derive_rng
from phic.features import Column


def noisy_table(n=300, seed=0):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n)
    x2 = rng.normal(size=n)
    g = rng.integers(0, 3, n)
    y = (rng.random(n) < expit(1.5 * x1 - 0.5 * (g == 2))).astype(int)
    return make_table(y, {"x1": x1, "x2": x2}, {"g": (g, ("a", "b", "c"))})


# --------------------------------------------------------------------------
# entropy, gain ratio, MDL
# --------------------------------------------------------------------------


class TestEntropy:
    def test_balanced_binary_is_one_bit(self):
        assert entropy([5, 5]) == 1.0

    def test_pure_is_zero(self):
        assert entropy([7, 0]) == 0.0
        assert entropy([]) == 0.0

    def test_uniform_four(self):
        assert entropy([1, 1, 1, 1]) == pytest.approx(2.0)


class TestGainRatio:
    def test_hand_computed_eight_rows(self):
        # a -> 3 positive, 1 negative; b -> 1 positive, 3 negative
        codes = [0, 0, 0, 0, 1, 1, 1, 1]
        label = [1, 1, 1, 0, 1, 0, 0, 0]
        h_cond = -(0.75 * math.log2(0.75) + 0.25 * math.log2(0.25))
        assert gain_ratio_codes(codes, label) == pytest.approx(1 - h_cond, abs=1e-12)
        assert gain_ratio_codes(codes, label) == pytest.approx(0.1887, abs=1e-4)
        t = make_table(label, categorical={"v": (codes, ("a", "b"))})
        assert gain_ratio(t, "v") == pytest.approx(0.18872187554086717, abs=1e-12)

    def test_perfect_predictor(self):
        y = np.tile([0, 1], 50)
        t = make_table(y, {"x": y * 3.0 + 1}, {"c": (y, ("no", "yes"))})
        assert gain_ratio(t, "x") == pytest.approx(1.0)
        assert gain_ratio(t, "c") == pytest.approx(1.0)

    def test_independent_numeric_is_near_zero(self):
        rng = np.random.default_rng(1)
        t = make_table(rng.integers(0, 2, 10_000), {"x": rng.normal(size=10_000)})
        assert gain_ratio(t, "x") < 0.01

    def test_single_bin_scores_zero(self):
        t = make_table([0, 1, 0, 1], {"x": [2.0, 2.0, 2.0, 2.0]})
        assert gain_ratio(t, "x") == 0.0

    @given(st.lists(st.integers(0, 3), min_size=4, max_size=60), st.permutations(range(4)), st.data())
    def test_invariant_to_relabelling_categories(self, codes, perm, data):
        y = data.draw(st.lists(st.integers(0, 1), min_size=len(codes), max_size=len(codes)))
        codes = np.array(codes)
        relabelled = np.array(perm)[codes]
        assert gain_ratio_codes(codes, y) == pytest.approx(gain_ratio_codes(relabelled, y), abs=1e-12)

    @given(st.lists(st.integers(0, 3), min_size=2, max_size=60), st.data())
    def test_bounded(self, codes, data):
        y = data.draw(st.lists(st.integers(0, 1), min_size=len(codes), max_size=len(codes)))
        assert 0.0 <= gain_ratio_codes(codes, y) <= 1.0 + 1e-12


class TestMdl:
    def test_clear_threshold_found(self):
        x = np.arange(100.0)
        y = (x >= 37).astype(int)
        np.testing.assert_allclose(mdl_cut_points(x, y), [36.5])

    def test_no_cut_for_noise(self):
        rng = np.random.default_rng(2)
        assert mdl_cut_points(rng.normal(size=200), rng.integers(0, 2, 200)).size == 0

    def test_ignores_nan(self):
        x = np.array([0, 1, 2, 3, np.nan, 10, 11, 12, 13] * 10, dtype=float)
        y = np.array([0, 0, 0, 0, 1, 1, 1, 1, 1] * 10)
        np.testing.assert_allclose(mdl_cut_points(x, y), [6.5])

    def test_monotone_transform_moves_cuts(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=300)
        y = (x + 0.3 * rng.normal(size=300) > 0).astype(int)
        cuts = mdl_cut_points(x, y)
        cuts_exp = mdl_cut_points(np.exp(x), y)
        assert len(cuts) == len(cuts_exp) >= 1
        # same partition of the sample
        np.testing.assert_array_equal(np.searchsorted(cuts, x), np.searchsorted(cuts_exp, np.exp(x)))


# --------------------------------------------------------------------------
# CFS
# --------------------------------------------------------------------------


class TestCfs:
    def test_merit_formula(self):
        assert cfs_merit(2, 0.5, 0.2) == pytest.approx(2 * 0.5 / math.sqrt(2 + 2 * 0.2))
        assert cfs_merit(2, 0.5, 0.2) == pytest.approx(0.6455, abs=1e-4)
        assert cfs_merit(0, 0.5, 0.2) == 0.0

    def test_symmetric_uncertainty_bounds(self):
        a = np.array([0, 1, 0, 1])
        assert symmetric_uncertainty(a, a) == pytest.approx(1.0)
        assert symmetric_uncertainty(a, np.array([0, 0, 1, 1])) == pytest.approx(0.0)

    def test_dominant_predictor_selected_alone(self):
        rng = np.random.default_rng(4)
        y = rng.integers(0, 2, 400)
        t = make_table(
            y,
            {"noise1": rng.normal(size=400), "noise2": rng.normal(size=400)},
            {"copy": (y, ("c", "i")), "junk": (rng.integers(0, 3, 400), ("p", "q", "r"))},
        )
        assert cfs_select(t).selected == ("copy",)

    def test_duplicate_selected_at_most_once(self):
        tab = noisy_table(600, seed=5)
        dup = tab.with_column(Column("x1_copy", "numeric"), tab.data["x1"].copy())
        sel = cfs_select(dup).selected
        assert "x1" in sel or "x1_copy" in sel
        assert not ("x1" in sel and "x1_copy" in sel)

    def test_column_order_does_not_change_subset(self):
        tab = noisy_table(500, seed=6)
        a = cfs_select(tab)
        b = cfs_select(replace(tab, columns=tuple(reversed(tab.columns))))
        assert set(a.selected) == set(b.selected)

    def test_scores_are_class_correlations(self):
        tab = noisy_table(300, seed=7)
        res = cfs_select(tab)
        assert set(res.scores) == {"x1", "x2", "g"}
        assert res.scores["x1"] == max(res.scores.values())
        assert res.selector_kind == "CFS"

    def test_constant_class_rejected(self):
        with pytest.raises(SelectionError):
            cfs_select(make_table([1, 1, 1], {"x": [1.0, 2.0, 3.0]}))

    def test_uninformative_table_still_selects_one(self):
        rng = np.random.default_rng(8)
        t = make_table(rng.integers(0, 2, 50), {"a": rng.normal(size=50), "b": rng.normal(size=50)})
        assert len(cfs_select(t).selected) == 1

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=20, deadline=None)
    def test_selection_is_non_empty_subset(self, seed):
        tab = noisy_table(120, seed=seed)
        assume(len(set(tab.label)) == 2)
        sel = cfs_select(tab).selected
        assert 1 <= len(sel) <= 3 and set(sel) <= set(tab.predictors)


class TestGainRatioRank:
    def test_orders_by_score(self):
        res = gain_ratio_rank(noisy_table(400, seed=9))
        assert res.selected[0] == "x1"
        scores = [res.scores[n] for n in res.selected]
        assert scores == sorted(scores, reverse=True)

    def test_top_k(self):
        assert len(gain_ratio_rank(noisy_table(400, seed=9), top_k=2).selected) == 2


# --------------------------------------------------------------------------
# encoding
# --------------------------------------------------------------------------


class TestEncoder:
    def test_reference_dummies(self):
        t = make_table([0, 1, 0], categorical={"g": ([0, 1, 2], ("a", "b", "c"))})
        enc = Encoder("reference")
        np.testing.assert_array_equal(enc.fit_transform(t), [[0, 0], [1, 0], [0, 1]])
        assert enc.feature_names == ["g=b", "g=c"]

    def test_full_dummies_minmax(self):
        t = make_table([0, 1, 0], {"x": [0.0, 5.0, 10.0]}, {"g": ([0, 1, 0], ("a", "b"))})
        X = Encoder("full", "minmax").fit_transform(t)
        np.testing.assert_array_equal(X, [[-1, 1, -1], [0, -1, 1], [1, 1, -1]])

    def test_training_mean_imputation(self):
        train = make_table([0, 1, 0], {"x": [1.0, 3.0, np.nan]})
        test = make_table([1], {"x": [np.nan]})
        enc = Encoder().fit(train)
        assert enc.transform(test)[0, 0] == 2.0

    def test_constant_columns_dropped(self):
        t = make_table([0, 1, 0], {"x": [1.0, 1.0, 1.0], "z": [0.0, 1.0, 2.0]})
        assert Encoder().fit(t).feature_names == ["z"]


# --------------------------------------------------------------------------
# logistic regression
# --------------------------------------------------------------------------


class TestLogistic:
    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(10)
        X = np.column_stack([np.ones(50), rng.normal(size=(50, 4))])
        y = rng.integers(0, 2, 50).astype(float)
        beta = rng.normal(size=5)
        ridge = 0.3
        g = penalized_gradient(beta, X, y, ridge)
        h = 1e-5
        num = np.array([
            (penalized_loglik(beta + h * e, X, y, ridge) - penalized_loglik(beta - h * e, X, y, ridge)) / (2 * h)
            for e in np.eye(5)
        ])
        assert np.max(np.abs(g - num)) / np.max(np.abs(num)) < 1e-6

    def test_matches_general_optimiser(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(200, 3))
        y = (rng.random(200) < expit(X @ [1.0, -0.5, 0.2])).astype(float)
        beta, _ = fit_irls(X, y, ridge=0.1)
        Xi = np.column_stack([np.ones(200), X])
        ref = minimize(
            lambda b: -penalized_loglik(b, Xi, y, 0.1), np.zeros(4),
            jac=lambda b: -penalized_gradient(b, Xi, y, 0.1), method="BFGS", options={"gtol": 1e-10},
        ).x
        np.testing.assert_allclose(beta, ref, atol=1e-5)

    def test_recovers_slope_two(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=10_000)
        y = (rng.random(10_000) < expit(2 * x)).astype(int)
        model = train_logistic(make_table(y, {"x": x}))
        assert model.params()["coefficients"]["x"] == pytest.approx(2.0, abs=0.2)

    def test_constant_predictors_give_prevalence(self):
        y = np.array([1, 0, 0, 0, 1, 0, 0, 0])
        t = make_table(y, {"x": np.ones(8)}, {"g": (np.zeros(8, int), ("a", "b"))})
        p = train_logistic(t).predict_proba(t)[:, 1]
        np.testing.assert_allclose(p, 0.25, atol=1e-9)

    def test_separable_data_stays_finite(self):
        x = np.arange(20.0)
        y = (x > 9).astype(int)
        model = train_logistic(make_table(y, {"x": x}))
        p = model.predict_proba(make_table(y, {"x": x}))[:, 1]
        assert np.all(np.isfinite(p))
        assert np.all((p > 0.5) == (y == 1))

    def test_constant_class_rejected(self):
        with pytest.raises(ModelError):
            train_logistic(make_table([0, 0, 0], {"x": [1.0, 2.0, 3.0]}))


# --------------------------------------------------------------------------
# MLP
# --------------------------------------------------------------------------


class TestMlp:
    def test_gradient_check_two_two_one(self):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(6, 2))
        y = rng.integers(0, 2, 6).astype(float)
        params = init_params(2, 2, rng)
        _, grads = loss_and_gradient(params, X, y)
        h = 1e-5
        num, ana = [], []
        for k, p in enumerate(params):
            flat = np.atleast_1d(np.array(p, dtype=float))
            for i in range(flat.size):
                def at(delta):
                    q = [np.array(v, dtype=float, copy=True) for v in params]
                    target = np.atleast_1d(q[k]).reshape(-1)
                    target[i] += delta
                    q[k] = target.reshape(np.shape(params[k])) if np.ndim(params[k]) else target[0]
                    return loss_and_gradient(q, X, y)[0]
                num.append((at(h) - at(-h)) / (2 * h))
                ana.append(np.atleast_1d(grads[k]).reshape(-1)[i])
        num, ana = np.array(num), np.array(ana)
        assert np.linalg.norm(num - ana) / np.linalg.norm(num + ana) < 1e-4

    def test_xor(self):
        a = np.tile([0, 0, 1, 1], 25)
        b = np.tile([0, 1, 0, 1], 25)
        y = a ^ b
        t = make_table(y, categorical={"a": (a, ("0", "1")), "b": (b, ("0", "1"))})
        model = train_mlp(t, hidden=4, seed=1)
        assert np.array_equal(model.predict_proba(t)[:, 1] >= 0.5, y == 1)

    def test_zero_epochs_keeps_initial_weights(self):
        t = noisy_table(50, seed=14)
        model = train_mlp(t, epochs=0, seed=3)
        X = model.encoder.transform(t)
        init = init_params(X.shape[1], model.config["hidden"], derive_rng(3, "mlp"))
        for got, want in zip(model.weights, init):
            np.testing.assert_array_equal(got, want)
        assert model.final_loss == loss_and_gradient(init, X, t.label.astype(float))[0]

    def test_training_matches_reference_loop(self):
        t = noisy_table(70, seed=18)
        model = train_mlp(t, epochs=7, batch_size=16, seed=4)
        X = model.encoder.transform(t)
        y = t.label.astype(float)
        rng = derive_rng(4, "mlp")
        params = init_params(X.shape[1], model.config["hidden"], rng)
        orders = [rng.permutation(len(y)) for _ in range(7)]
        velocity = [np.zeros_like(p) for p in params]
        for order in orders:
            for start in range(0, len(y), 16):
                idx = order[start:start + 16]
                _, grads = loss_and_gradient(params, X[idx], y[idx])
                for k in range(4):
                    velocity[k] = 0.2 * velocity[k] - 0.3 * grads[k]
                    params[k] = params[k] + velocity[k]
        for got, want in zip(model.weights, params):
            np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)

    def test_default_hidden_units(self):
        t = noisy_table(60, seed=15)
        model = train_mlp(t, epochs=1)
        n_in = len(model.encoder.feature_names)
        assert model.config["hidden"] == (n_in + 2) // 2

    def test_deterministic(self):
        t = noisy_table(80, seed=16)
        p1 = train_mlp(t, epochs=20, seed=5).predict_proba(t)
        p2 = train_mlp(t, epochs=20, seed=5).predict_proba(t)
        np.testing.assert_array_equal(p1, p2)

    def test_divergence_reported(self):
        t = noisy_table(80, seed=17)
        with pytest.raises(ModelError, match="learning rate"):
            train_mlp(t, learning_rate=float("inf"), epochs=3)


# --------------------------------------------------------------------------
# random forest
# --------------------------------------------------------------------------


def reference_tree(x, y):
    """Plain recursive entropy tree on one numeric input; returns a predict function."""

    def h(p):
        return 0.0 if p <= 0 or p >= 1 else -(p * math.log2(p) + (1 - p) * math.log2(1 - p))

    def grow(idx):
        yy = y[idx]
        pos = yy.sum()
        if pos == 0 or pos == len(idx) or len(idx) < 2:
            return pos / len(idx)
        order = idx[np.argsort(x[idx], kind="stable")]
        xs, ys = x[order], y[order]
        best, thr = 1e-12, None
        parent = h(pos / len(idx))
        for i in range(len(order) - 1):
            if xs[i] < xs[i + 1]:
                nl = i + 1
                cl = ys[:nl].sum()
                e = (nl * h(cl / nl) + (len(order) - nl) * h((pos - cl) / (len(order) - nl))) / len(order)
                if parent - e > best:
                    best, thr = parent - e, (xs[i] + xs[i + 1]) / 2
        if thr is None:
            return pos / len(idx)
        return (thr, grow(idx[x[idx] <= thr]), grow(idx[x[idx] > thr]))

    root = grow(np.arange(len(y)))

    def predict(v):
        node = root
        while isinstance(node, tuple):
            node = node[1] if v <= node[0] else node[2]
        return node

    return predict


class TestForest:
    def test_single_input_tree_matches_reference(self):
        rng = np.random.default_rng(18)
        x = np.round(rng.normal(size=150), 1)
        y = (rng.random(150) < expit(2 * x)).astype(np.int64)
        tree = fit_tree(x[:, None], y, seed=4)
        ref = reference_tree(x, y)
        grid = np.linspace(-3.5, 3.5, 701)
        np.testing.assert_array_equal(tree.predict(grid[:, None]), [ref(v) for v in grid])

    def test_one_tree_without_bootstrap_is_a_tree(self):
        t = noisy_table(200, seed=19)
        forest = train_random_forest(t, n_trees=1, bootstrap=False, seed=7)
        X = forest.encoder.transform(t)
        k = default_features_per_split(X.shape[1])
        tree = fit_tree(X, t.label, features_per_split=k, seed=derive_int(7, "rf-tree", 0))
        np.testing.assert_array_equal(forest.predict_proba(t)[:, 1], tree.predict(X))

    def test_perfect_predictor(self):
        rng = np.random.default_rng(20)
        y = rng.integers(0, 2, 200)
        t = make_table(y, {"x1": y + 0.0, "x2": rng.normal(size=200)})
        p = train_random_forest(t, seed=1).predict_proba(t)[:, 1]
        assert np.mean((p >= 0.5) == (y == 1)) == 1.0

    def test_same_seed_same_probabilities(self):
        t = noisy_table(150, seed=21)
        a = train_random_forest(t, n_trees=20, seed=3).predict_proba(t)
        b = train_random_forest(t, n_trees=20, seed=3).predict_proba(t)
        np.testing.assert_array_equal(a, b)
        c = train_random_forest(t, n_trees=20, seed=4).predict_proba(t)
        assert not np.array_equal(a, c)

    def test_probability_is_mean_of_leaf_frequencies(self):
        t = noisy_table(100, seed=22)
        forest = train_random_forest(t, n_trees=5, seed=2)
        X = forest.encoder.transform(t)
        np.testing.assert_allclose(
            forest.predict_proba(t)[:, 1], np.mean([tr.predict(X) for tr in forest.trees], axis=0)
        )

    def test_max_depth(self):
        t = noisy_table(100, seed=23)
        forest = train_random_forest(t, n_trees=3, max_depth=1, seed=2)
        assert all(tr.n_nodes <= 3 for tr in forest.trees)

    def test_oob_error(self):
        t = noisy_table(300, seed=24)
        forest = train_random_forest(t, n_trees=30, compute_oob=True, seed=2)
        assert 0.0 <= forest.oob_error < 0.45

    def test_default_features_per_split(self):
        assert default_features_per_split(1) == 1
        assert default_features_per_split(22) == 5
        assert default_features_per_split(64) == 7


# --------------------------------------------------------------------------
# shared model behaviour and embedded selection
# --------------------------------------------------------------------------


@pytest.mark.parametrize("kind, config", [("LR", {}), ("RF", {"n_trees": 10}), ("MLP", {"epochs": 10})])
class TestLearnerContract:
    def test_probabilities_valid(self, kind, config):
        t = noisy_table(80, seed=25)
        p = make_learner(kind, **config)(t, 1).predict_proba(t)
        assert p.shape == (80, 2)
        assert np.all((p >= 0) & (p <= 1))
        np.testing.assert_allclose(p.sum(axis=1), 1.0)

    def test_deterministic_given_seed(self, kind, config):
        t = noisy_table(80, seed=26)
        learner = make_learner(kind, **config)
        np.testing.assert_array_equal(learner(t, 9).predict_proba(t), learner(t, 9).predict_proba(t))

    def test_export(self, kind, config, tmp_path):
        t = noisy_table(40, seed=27)
        model = make_learner(kind, **config)(t, 1)
        d = model.to_dict()
        assert d["kind"] == kind and d["selected_features"] == t.predictors
        model.to_json(tmp_path / "model.json")


class TestEmbedSelection:
    def test_identity_selector_matches_plain_learner(self):
        from phic.modeling.selection import SelectionResult

        t = noisy_table(100, seed=28)
        everything = lambda tab: SelectionResult(tuple(tab.predictors), {}, "All")
        wrapped = embed_selection(make_learner("LR"), everything)(t, 0)
        plain = make_learner("LR")(t, 0)
        np.testing.assert_array_equal(wrapped.predict_proba(t), plain.predict_proba(t))

    def test_single_selected_predictor(self):
        from phic.modeling.selection import SelectionResult

        t = noisy_table(100, seed=29)
        only = lambda tab: SelectionResult(("x1",), {}, "Fixed")
        model = embed_selection(make_learner("LR"), only)(t, 0)
        assert isinstance(model, SelectedModel)
        assert model.feature_schema == ("x1",)
        assert model.model.encoder.feature_names == ["x1"]

    def test_selection_uses_training_rows_only(self):
        t = noisy_table(200, seed=30)
        train = t.take(np.arange(150))
        model = embed_selection(make_learner("LR"), cfs_select)(train, 0)
        assert model.selection.selected == cfs_select(train).selected
        model.predict_proba(t.take(np.arange(150, 200)))

    def test_unknown_learner(self):
        with pytest.raises(ValueError):
            make_learner("SVM")
