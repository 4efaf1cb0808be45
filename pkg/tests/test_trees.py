from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from kddbench.rng import SplitMix64
from kddbench.trees import (DecisionTreeModel, ForestConfig, RandomForestModel, RandomTreeModel, add_errs,
                            default_m_tries, entropy, information_gain, nominal_split, numeric_split)

from conftest import separable

counts = st.lists(st.integers(0, 50), min_size=1, max_size=6).filter(lambda c: sum(c) > 0)


@st.composite
def datasets(draw, max_rows=60, max_features=4, max_classes=3, nominal=False):
    n = draw(st.integers(2, max_rows))
    F = draw(st.integers(1, max_features))
    C = draw(st.integers(2, max_classes))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    X = rng.integers(0, draw(st.integers(2, 6)), (n, F)).astype(np.float64)
    branches = np.zeros(F, dtype=np.int64)
    if nominal:
        branches[0] = int(X[:, 0].max()) + 2
    y = rng.integers(0, C, n)
    return X, y, branches, C


def walk(tree, x, root, nominal):
    """Route one instance through flat tree arrays in plain Python."""
    node = int(root)
    while tree.n_children[node] > 0:
        f = int(tree.feature[node])
        k = int(tree.n_children[node])
        if nominal[f]:
            b = int(x[f]) if 0 <= x[f] < k else k - 1
        else:
            b = 0 if x[f] <= tree.threshold[node] else 1
        node = int(tree.child[node]) + b
    return node


def training_accuracy(model, X, y):
    return float((model.predict_class(X) == y).mean())


# entropy and gain ------------------------------------------------------------

def test_entropy_examples():
    assert entropy([0.5, 0.5]) == 1.0
    assert entropy([1.0]) == 0.0
    assert entropy([3, 0, 0]) == 0.0


def test_gain_examples():
    assert information_gain([4, 4], [[4, 0], [0, 4]]) == 1.0
    assert information_gain([6, 2], [[3, 1], [3, 1]]) == pytest.approx(0.0, abs=1e-12)


@given(counts)
def test_entropy_bounded_by_log_arity(c):
    k = len(c)
    h = entropy(c)
    assert -1e-12 <= h <= math.log2(k) + 1e-12
    uniform = len(set(c)) == 1
    assert (abs(h - math.log2(k)) < 1e-9) == uniform or k == 1


@given(st.lists(st.lists(st.integers(0, 30), min_size=3, max_size=3), min_size=2, max_size=4))
def test_gain_non_negative(children):
    parent = np.sum(children, axis=0)
    assume(parent.sum() > 0)
    assert information_gain(parent, children) >= -1e-12


@given(st.lists(st.integers(1, 20), min_size=2, max_size=4), st.lists(st.integers(1, 5), min_size=2, max_size=4))
def test_proportional_split_has_zero_gain(base, scales):
    children = [np.array(base) * s for s in scales]
    assert abs(information_gain(np.sum(children, axis=0), children)) < 1e-12


@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 2), st.integers(1, 3)), min_size=2, max_size=40),
       st.sampled_from([1.0, 2.0, 3.0]))
def test_numeric_split_matches_exhaustive_search(rows, min_leaf):
    x = np.array([r[0] for r in rows], dtype=np.float64)
    y = np.array([r[1] for r in rows], dtype=np.int64)
    w = np.array([r[2] for r in rows], dtype=np.float64)
    parent = np.bincount(y, weights=w, minlength=3)
    best = None
    values = np.unique(x)
    for a, b in zip(values[:-1], values[1:]):
        t = (a + b) / 2
        left = np.bincount(y[x <= t], weights=w[x <= t], minlength=3)
        right = parent - left
        if left.sum() < min_leaf or right.sum() < min_leaf:
            continue
        g = information_gain(parent, [left, right])
        if best is None or g > best[0] + 1e-9:
            best = (g, t)
    found, gain, thr, _ = numeric_split(x, y, w, 3, min_leaf)
    assert found == (best is not None)
    if best is not None:
        assert gain == pytest.approx(best[0], abs=1e-9)
        left = x <= thr
        assert information_gain(parent, [np.bincount(y[left], weights=w[left], minlength=3),
                                         np.bincount(y[~left], weights=w[~left], minlength=3)]) \
            == pytest.approx(best[0], abs=1e-9)


def test_nominal_split_is_multiway():
    codes = np.array([0, 0, 1, 1, 2, 2])
    y = np.array([0, 0, 1, 1, 2, 2])
    found, gain, _, _ = nominal_split(codes, y, np.ones(6), 4, 3, 1.0)
    assert found and gain == pytest.approx(math.log2(3))


def test_add_errs_reference_values():
    # Upper confidence bound with CF 0.25, evaluated by hand from the binomial.
    assert add_errs(6, 0, 0.25) == pytest.approx(6 * (1 - 0.25 ** (1 / 6)))
    assert add_errs(1, 0, 0.25) == pytest.approx(0.75)
    assert add_errs(10, 9.6, 0.25) == pytest.approx(0.4)


# decision tree ---------------------------------------------------------------

def test_tree_fits_separable_data():
    X, y = separable(300, n_features=4, n_classes=4)
    model, _ = DecisionTreeModel.fit(X, y)
    assert training_accuracy(model, X, y) == 1.0


def test_single_class_gives_single_leaf():
    X = np.random.default_rng(0).random((20, 3))
    model, _ = DecisionTreeModel.fit(X, np.zeros(20, dtype=np.int64), n_classes=3)
    assert model.flat.n_leaves == 1
    assert model.predict_distribution(X)[0].tolist() == [1.0, 0.0, 0.0]


def test_nominal_features_split_multiway():
    rng = np.random.default_rng(1)
    X = rng.integers(0, 3, (90, 1)).astype(np.float64)
    y = X[:, 0].astype(np.int64)
    model, _ = DecisionTreeModel.fit(X, y, branches=[4])
    assert training_accuracy(model, X, y) == 1.0
    assert model.flat.n_children[0] == 4
    # Unseen code 7 goes to the reserved branch, which inherits the parent's distribution.
    assert model.predict_distribution(np.array([[7.0]]))[0] == pytest.approx([1 / 3, 1 / 3, 1 / 3])


@given(datasets())
def test_pruning_never_adds_leaves_or_training_accuracy(d):
    X, y, br, C = d
    pruned, _ = DecisionTreeModel.fit(X, y, branches=br, n_classes=C)
    full, _ = DecisionTreeModel.fit(X, y, branches=br, n_classes=C, pruned=False, collapse_tree=False)
    assert pruned.flat.n_leaves <= full.flat.n_leaves
    assert training_accuracy(pruned, X, y) <= training_accuracy(full, X, y) + 1e-12


@given(datasets(nominal=True))
def test_tree_nodes_partition_parent(d):
    X, y, br, C = d
    model, _ = DecisionTreeModel.fit(X, y, branches=br, n_classes=C, pruned=False, collapse_tree=False)
    t = model.flat
    assert t.counts[0].sum() == len(y)
    for node in range(len(t.feature)):
        k = t.n_children[node]
        if k:
            assert k >= 2
            kids = t.counts[t.child[node]:t.child[node] + k]
            np.testing.assert_allclose(kids.sum(axis=0), t.counts[node])


def test_reduced_error_pruning_runs():
    X, y = separable(200)
    model, params = DecisionTreeModel.fit(X, y, reduced_error_pruning=True, num_folds=3)
    assert params["reduced_error_pruning"] and training_accuracy(model, X, y) > 0.9


def test_gain_ratio_criterion_fits_separable_data():
    X, y = separable(200)
    model, _ = DecisionTreeModel.fit(X, y, criterion="gain_ratio")
    assert training_accuracy(model, X, y) == 1.0


def test_dump_mentions_split_features():
    X, y = separable(100, n_classes=2)
    model, _ = DecisionTreeModel.fit(X, y)
    text = model.dump()
    assert text.startswith("x0 <=")


# random tree and forest ------------------------------------------------------

def test_default_m_tries():
    assert default_m_tries(41) == 6
    assert default_m_tries(1) == 1
    with pytest.raises(ValueError):
        RandomTreeModel.fit(np.zeros((4, 2)), np.array([0, 1, 0, 1]), m_tries=3)


@given(datasets(nominal=True))
def test_random_tree_with_all_features_is_full_tree(d):
    X, y, br, C = d
    F = X.shape[1]
    rt, _ = RandomTreeModel.fit(X, y, branches=br, n_classes=C, m_tries=F, min_gain=0.0, min_leaf=2)
    dt, _ = DecisionTreeModel.fit(X, y, branches=br, n_classes=C, pruned=False, collapse_tree=False,
                                  min_leaf=2)
    for field in ("feature", "threshold", "n_children", "counts"):
        assert np.array_equal(getattr(rt.flat, field), getattr(dt.flat, field))


def test_random_tree_deterministic():
    X, y = separable(200, n_features=8)
    a, _ = RandomTreeModel.fit(X, y, seed=4)
    b, _ = RandomTreeModel.fit(X, y, seed=4)
    assert a.dump() == b.dump()


def test_forest_default_size():
    assert ForestConfig().n_trees == 100
    assert ForestConfig().seed == 1
    with pytest.raises(ValueError):
        ForestConfig(n_trees=0)


@given(datasets(max_rows=40, nominal=True), st.integers(1, 9), st.integers(0, 1000))
def test_forest_vote_is_brute_force_majority(d, n_trees, seed):
    X, y, br, C = d
    model, _ = RandomForestModel.fit(X, y, branches=br, n_classes=C, n_trees=n_trees, seed=seed)
    rng = np.random.default_rng(seed)
    probe = np.vstack([X, rng.integers(-1, 8, (20, X.shape[1])).astype(np.float64)])
    t = model.flat
    for x, got in zip(probe, model.predict_class(probe)):
        votes = [0] * C
        for root in t.roots:
            leaf = walk(t, x, root, br > 0)
            dist = t.dist[leaf].tolist()
            votes[dist.index(max(dist))] += 1
        assert got == votes.index(max(votes))


def test_single_tree_forest_and_its_oob_records():
    X, y = separable(300, n_features=4)
    model, _ = RandomForestModel.fit(X, y, n_trees=1, seed=3)
    votes = model.tree_votes(X)[0]
    assert np.array_equal(model.predict_class(X), votes)
    # Bootstrap contract: n draws below n from the tree's own stream.
    draws = SplitMix64.derive(3, "tree", 0).below(len(y), len(y))
    oob = np.ones(len(y), dtype=bool)
    oob[draws] = False
    assert np.array_equal(model.out_of_bag()[0], oob)
    assert model.oob_error(X, y) == pytest.approx(float((votes[oob] != y[oob]).mean()))


def test_forest_deterministic_and_independent_of_jobs():
    X, y = separable(400, n_features=6, n_classes=3, seed=2)
    a, _ = RandomForestModel.fit(X, y, n_trees=12, seed=1)
    b, _ = RandomForestModel.fit(X, y, n_trees=12, seed=1)
    c, _ = RandomForestModel.fit(X, y, n_trees=12, seed=1, n_jobs=2)
    for other in (b, c):
        arrays_a, meta_a = a.to_arrays()
        arrays_o, meta_o = other.to_arrays()
        assert all(np.array_equal(arrays_a[k], arrays_o[k]) for k in arrays_a)
    assert not np.array_equal(a.flat.threshold, RandomForestModel.fit(X, y, n_trees=12, seed=2)[0].flat.threshold)
