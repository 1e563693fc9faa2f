import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from countyshap import synthetic
from countyshap.data import MissingFeatureError
from countyshap.forest import (
    ConfigError,
    CorruptModelError,
    DecisionTree,
    Forest,
    ForestConfig,
    Internal,
    Leaf,
    best_split,
    bootstrap_indices,
    cross_validate,
    fit_forest_arrays,
    grow_tree,
    predict_tree,
    train_forest,
    tree_rng,
)
from countyshap.metrics import mae
from countyshap.ols import fit_wls

from conftest import forest_of


def brute_force_split(X, y, w):
    """Reference: try every midpoint on every feature, keep the first strict improvement.

    The reduction is expressed per unit of node weight, like the trained kernel.
    """
    def sse(idx):
        if not idx:
            return 0.0
        ww, yy = w[idx], y[idx]
        mu = np.dot(ww, yy) / ww.sum()
        return float(np.dot(ww, (yy - mu) ** 2))

    all_rows = list(range(len(y)))
    parent = sse(all_rows)
    best = None
    for f in range(X.shape[1]):
        vals = sorted(set(X[:, f]))
        for a, b in zip(vals, vals[1:]):
            thr = (a + b) / 2
            left = [i for i in all_rows if X[i, f] < thr]
            right = [i for i in all_rows if X[i, f] >= thr]
            red = (parent - sse(left) - sse(right)) / w.sum()
            if best is None or red > best[2] + 1e-12:
                best = (f, thr, red)
    return best


def test_best_split_matches_brute_force_six_rows():
    X = np.array([[0.1, 5.0], [0.4, 3.0], [0.2, 1.0], [0.9, 4.0], [0.7, 2.0], [0.5, 6.0]])
    y = np.array([1.0, 2.0, 1.2, 8.0, 7.5, 2.2])
    w = np.array([1.0, 2.0, 1.0, 3.0, 1.0, 1.0])
    got = best_split(X, y, w)
    f, thr, red = brute_force_split(X, y, w)
    assert (got.feature, got.threshold) == (f, thr)
    assert got.reduction == pytest.approx(red, rel=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 12), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_best_split_property(n, m, seed):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, (n, m)) / 5.0
    y = rng.normal(size=n)
    w = rng.integers(1, 5, n).astype(float)
    got = best_split(X, y, w)
    ref = brute_force_split(X, y, w)
    if ref is None or ref[2] <= 1e-12 * np.average((y - np.average(y, weights=w)) ** 2, weights=w):
        assert got is None or got.reduction == pytest.approx(ref[2], abs=1e-9)
        return
    assert got is not None
    assert got.reduction == pytest.approx(ref[2], rel=1e-9)
    assert (got.feature, got.threshold) == (ref[0], ref[1])


def test_perfect_separation():
    X = np.array([[0.0], [0.1], [0.2], [0.8], [0.9], [1.0]])
    y = np.array([0, 0, 0, 1, 1, 1], dtype=float)
    rule = best_split(X, y)
    assert rule.feature == 0 and rule.threshold == pytest.approx(0.5)
    assert rule.reduction == pytest.approx(0.25)


def test_constant_target_no_split():
    X = np.random.default_rng(0).random((8, 2))
    assert best_split(X, np.full(8, 0.4)) is None


def test_tie_goes_to_lowest_feature():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])
    y = np.array([0.0, 1.0, 0.0, 1.0])
    assert best_split(X, y).feature == 0
    assert best_split(X, y, candidate_features=[1]).feature == 1


def test_min_node_size_above_n_gives_single_leaf():
    ds = synthetic.counties(30, seed=1)
    f = train_forest(ds, ForestConfig(n_trees=3, min_node_size=100, seed=0))
    for t in f:
        assert t.n_nodes == 1
        assert t.is_leaf(0)
    no_boot = train_forest(ds, ForestConfig(n_trees=2, min_node_size=100, bootstrap=False))
    assert no_boot.predict(ds.X[:3]) == pytest.approx(np.full(3, ds.weighted_target_mean()), rel=1e-12)


def test_default_mtry():
    assert ForestConfig().resolved_mtry(7) == 2
    assert ForestConfig(mtry=7).resolved_mtry(7) == 7
    assert ForestConfig().resolved_mtry(1) == 1


@pytest.mark.parametrize("cfg", [ForestConfig(n_trees=0), ForestConfig(min_node_size=0), ForestConfig(mtry=9),
                                 ForestConfig(mtry=0), ForestConfig(max_depth=-1)])
def test_config_errors(cfg, county_ds):
    with pytest.raises(ConfigError):
        train_forest(county_ds, cfg)


def test_training_input_errors():
    X = np.random.default_rng(0).random((5, 2))
    with pytest.raises(ValueError, match="weights"):
        fit_forest_arrays(X, np.ones(5), np.array([1, 1, 0, 1, 1.0]), ["a", "b"])
    with pytest.raises(ValueError, match="finite"):
        fit_forest_arrays(np.where(X > 0.5, np.nan, X), np.ones(5), np.ones(5), ["a", "b"])
    with pytest.raises(ValueError, match="empty"):
        fit_forest_arrays(np.empty((0, 2)), np.empty(0), np.empty(0), ["a", "b"])


def test_serialization_byte_identical(tmp_path, county_ds):
    cfg = ForestConfig(n_trees=5, seed=42)
    a = train_forest(county_ds, cfg)
    b = train_forest(county_ds, cfg)
    for name in ("a.json", "a.json.gz"):
        pa, pb = tmp_path / ("1" + name), tmp_path / ("2" + name)
        a.save(pa)
        b.save(pb)
        assert pa.read_bytes() == pb.read_bytes()
        back = Forest.load(pa)
        np.testing.assert_array_equal(back.predict(county_ds), a.predict(county_ds))
        assert back.dumps() == a.dumps()


def test_different_seeds_differ(county_ds):
    a = train_forest(county_ds, ForestConfig(n_trees=3, seed=1))
    b = train_forest(county_ds, ForestConfig(n_trees=3, seed=2))
    assert a.dumps() != b.dumps()


def test_threads_do_not_change_model(county_ds):
    cfg = ForestConfig(n_trees=6, seed=5)
    assert train_forest(county_ds, cfg, n_jobs=3).dumps() == train_forest(county_ds, cfg).dumps()
    f = train_forest(county_ds, cfg)
    np.testing.assert_array_equal(f.predict(county_ds, n_jobs=3), f.predict(county_ds))


def test_load_rejects_foreign_files(tmp_path):
    p = tmp_path / "x.json"
    p.write_text(json.dumps({"format": "other"}))
    with pytest.raises(CorruptModelError):
        Forest.load(p)
    p.write_text(json.dumps({"format": "countyshap-forest", "version": 99}))
    with pytest.raises(CorruptModelError, match="version"):
        Forest.load(p)


def test_example_tree_routing(example_tree):
    names = ("perc_rep", "perc_black", "perc_old65")
    rec = {"perc_rep": 0.7, "perc_black": 0.2, "perc_old65": 0.25}
    assert predict_tree(example_tree, rec, names) == 0.40
    assert predict_tree(example_tree, [0.3, 0.05, 0.0]) == 0.66
    assert predict_tree(example_tree, [0.3, 0.2, 0.0]) == 0.55
    assert predict_tree(example_tree, [0.7, 0.5, 0.0]) == 0.27
    assert predict_tree(example_tree, [0.7, 0.2, 0.1]) == 0.32


def test_threshold_value_routes_right(stump):
    tree = DecisionTree.from_root(stump)
    assert predict_tree(tree, [0.5]) == 0.6
    assert predict_tree(tree, [np.nextafter(0.5, 0)]) == 0.2


def test_missing_feature(example_tree):
    with pytest.raises(MissingFeatureError):
        predict_tree(example_tree, {"perc_rep": 0.7}, ("perc_rep", "perc_black", "perc_old65"))


def test_forest_mean_of_trees(stump):
    other = Internal(0, 0.3, Leaf(1.0, 5.0), Leaf(0.0, 5.0))
    f = forest_of([stump, other], ["x0"])
    assert f.predict_one({"x0": 0.4}) == pytest.approx((0.2 + 0.0) / 2)
    assert f.predict_one({"x0": 0.1}) == pytest.approx((0.2 + 1.0) / 2)


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(6)))
def test_tree_order_invariance(order):
    ds = synthetic.counties(60, seed=9)
    f = train_forest(ds, ForestConfig(n_trees=6, seed=1))
    g = f.with_trees([f.trees[i] for i in order])
    np.testing.assert_allclose(g.predict(ds), f.predict(ds), rtol=0, atol=1e-15)


def test_predictions_within_training_range(small_forest, county_ds):
    p = small_forest.predict(np.random.default_rng(0).random((200, 7)))
    assert p.min() >= county_ds.y.min() and p.max() <= county_ds.y.max()


def test_weighted_bootstrap_frequencies():
    rng = np.random.default_rng(2024)
    draws = bootstrap_indices(rng, np.array([10.0, 1.0]), size=10_000)
    counts = np.bincount(draws, minlength=2)
    _, p = stats.chisquare(counts, f_exp=10_000 * np.array([10, 1]) / 11)
    assert p > 0.001


def test_bootstrap_equal_weights_uniform():
    draws = bootstrap_indices(np.random.default_rng(1), np.ones(4), size=40_000)
    _, p = stats.chisquare(np.bincount(draws, minlength=4))
    assert p > 0.001


def test_tree_baseline_equals_weighted_bootstrap_mean(county_ds):
    cfg = ForestConfig(n_trees=4, seed=3)
    X, y, w = county_ds.X, county_ds.y, county_ds.w
    for t in range(cfg.n_trees):
        tree = grow_tree(X, y, w, cfg, t)
        sample = bootstrap_indices(tree_rng(cfg.seed, t), w)
        assert tree.baseline() == pytest.approx(np.dot(w[sample], y[sample]) / w[sample].sum(), rel=1e-10)


def test_coverage_invariants(small_forest):
    for t in small_forest:
        internal = np.flatnonzero(t.feature >= 0)
        np.testing.assert_array_equal(t.coverage[internal], t.coverage[t.left[internal]] + t.coverage[t.right[internal]])
        assert np.all(t.coverage > 0)
        assert np.all(t.n_rows[internal] == t.n_rows[t.left[internal]] + t.n_rows[t.right[internal]])
        t.check()


def test_leaf_sizes_respect_min_node_size(county_ds):
    f = train_forest(county_ds, ForestConfig(n_trees=3, min_node_size=20, seed=0))
    for t in f:
        internal = np.flatnonzero(t.feature >= 0)
        assert np.all(t.n_rows[internal] > 20)


def test_max_depth(county_ds):
    f = train_forest(county_ds, ForestConfig(n_trees=2, max_depth=2, seed=0))
    for t in f:
        assert t.n_nodes <= 7


def test_forest_beats_ols_on_interaction():
    wins = 0
    for seed in range(3):
        ds = synthetic.interaction(600, seed=seed)
        train, test = ds.take(np.arange(500)), ds.take(np.arange(500, 600))
        ols = fit_wls(train)
        forest = train_forest(train, ForestConfig(n_trees=100, mtry=2, seed=seed))
        wins += mae(forest.predict(test), test.y) < mae(ols.predict_many(test.X), test.y)
    assert wins >= 2


def test_cross_validate_prefers_sensible_config():
    ds = synthetic.interaction(300, seed=4)
    res = cross_validate(ds, [ForestConfig(n_trees=20, min_node_size=5),
                              ForestConfig(n_trees=20, min_node_size=1000)], folds=3)
    assert res[0][1] < res[1][1]
    with pytest.raises(ValueError):
        cross_validate(ds, [ForestConfig()], folds=1)


def test_tree_dict_round_trip(example_tree):
    back = DecisionTree.from_dict(json.loads(json.dumps(example_tree.to_dict())))
    for a in ("feature", "threshold", "left", "right", "value", "coverage", "n_rows"):
        np.testing.assert_array_equal(getattr(back, a), getattr(example_tree, a))


def test_corrupt_tree_detected(example_tree):
    d = example_tree.to_dict()
    d["coverage"][1] = 0.0
    with pytest.raises(CorruptModelError):
        DecisionTree.from_dict(d).check()


def test_hand_built_coverage_sums(example_tree):
    assert example_tree.coverage[0] == 2238.0
    assert example_tree.used_features() == {0, 1, 2}
    assert len(example_tree.leaves()) == 5
    expected = (0.66 * 700 + 0.55 * 500 + 0.32 * 45 + 0.40 * 300 + 0.27 * 693) / 2238
    assert example_tree.baseline() == pytest.approx(expected, rel=1e-14)


def test_vectorised_predict_matches_scalar_routing(example_tree):
    f = forest_of([example_tree], ["a", "b", "c"])
    grid = np.array(list(itertools.product([0.0, 0.1, 0.2, 0.35, 0.5, 0.6], repeat=3)))
    expected = [predict_tree(example_tree, row) for row in grid]
    np.testing.assert_array_equal(f.predict(grid), expected)
