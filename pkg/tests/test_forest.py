import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colonforest.errors import InvalidInputError
from colonforest.forest import (
    Forest,
    ForestParams,
    Tree,
    best_split,
    predict,
    predict_many,
    train_forest,
    train_tree,
)

from oracles import exhaustive_best_split, oracle_predict, oracle_preorder, oracle_tree

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def leaf_tree(mean, n=1):
    return Tree.from_nodes([("leaf", tuple(mean), n)])


def random_dataset(rng, n=None, d=None):
    n = n or int(rng.integers(2, 51))
    d = d or int(rng.integers(1, 7))
    X = rng.normal(size=(n, d)) * 10
    Y = np.c_[X[:, 0] ** 2, np.sin(X[:, -1]), X.sum(axis=1)] + rng.normal(size=(n, 3))
    return X, Y


# -- best_split ----------------------------------------------------------------


def test_pure_node_has_no_split():
    X = np.arange(6.0)[:, None]
    Y = np.tile([1.0, 2.0, 3.0], (6, 1))
    assert best_split(X, Y, [0]) is None


def test_split_between_clusters():
    X = [[0.0], [1.0], [10.0], [11.0]]
    Y = [[0, 0, 0], [0, 0, 0], [9, 9, 9], [9, 9, 9]]
    oracle = exhaustive_best_split(X, Y, [0], 1)
    f, thr, dec = best_split(X, Y, [0], min_samples_leaf=1)
    assert (f, thr) == (0, 5.5) == oracle[:2]
    assert dec == pytest.approx(oracle[2])
    left = [y for x, y in zip(X, Y) if x[0] <= thr]
    assert np.ptp(left, axis=0).max() == 0


def test_equal_decrease_prefers_lower_feature():
    rng = np.random.default_rng(0)
    col = rng.permutation(20).astype(float)
    X = np.c_[rng.normal(size=20), col, col]  # features 1 and 2 identical
    Y = np.c_[col, col, col]
    f, _, _ = best_split(X, Y, [2, 1])
    assert f == 1
    assert exhaustive_best_split(X.tolist(), Y.tolist(), [1, 2], 1)[0] == 1


def test_min_samples_leaf_respected():
    X = np.arange(10.0)[:, None]
    Y = np.zeros((10, 3))
    Y[0] = 100
    f, thr, _ = best_split(X, Y, [0], min_samples_leaf=3)
    assert thr == 2.5


@pytest.mark.parametrize("seed", range(30))
def test_best_split_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    X, Y = random_dataset(rng)
    leaf = int(rng.integers(1, 4))
    got = best_split(X, Y, range(X.shape[1]), leaf)
    want = exhaustive_best_split(X.tolist(), Y.tolist(), range(X.shape[1]), leaf)
    if want is None:
        assert got is None
    else:
        assert got[:2] == want[:2]
        assert got[2] == pytest.approx(want[2], rel=1e-9)


# -- train_tree ----------------------------------------------------------------


def test_single_sample_tree():
    t = train_tree([[1.0, 2.0]], [[4.0, 5.0, 6.0]], ForestParams(min_samples_leaf=1))
    assert t.node_count == 1
    assert t.value[0].tolist() == [4.0, 5.0, 6.0]


def test_empty_training_set_rejected():
    with pytest.raises(InvalidInputError):
        train_tree(np.zeros((0, 2)), np.zeros((0, 3)))


def test_full_tree_memorizes():
    rng = np.random.default_rng(5)
    X, Y = random_dataset(rng, n=200, d=5)
    t = train_tree(X, Y, ForestParams(min_samples_leaf=1, mtry=5))
    assert np.array_equal(t.predict(X), Y)


@pytest.mark.parametrize("seed", range(20))
def test_shallow_tree_matches_oracle(seed):
    rng = np.random.default_rng(1000 + seed)
    X, Y = random_dataset(rng)
    depth = int(rng.integers(0, 3))
    leaf = int(rng.integers(1, 4))
    d = X.shape[1]
    t = train_tree(X, Y, ForestParams(max_depth=depth, min_samples_leaf=leaf, mtry=d, bootstrap=False))
    ref = oracle_tree(X.tolist(), Y.tolist(), depth, leaf)
    got = [("split", r[1], r[2]) if r[0] == "split" else ("leaf", r[2]) for r in t.nodes()]
    assert got == oracle_preorder(ref)
    probe = np.vstack([X, rng.normal(size=(20, d)) * 10])
    want = np.array([oracle_predict(ref, x) for x in probe.tolist()])
    np.testing.assert_allclose(t.predict(probe), want, rtol=0, atol=1e-12)


def test_permuting_samples_keeps_structure():
    rng = np.random.default_rng(11)
    X, Y = random_dataset(rng, n=80, d=4)
    p = ForestParams(min_samples_leaf=2, mtry=4, bootstrap=False)
    perm = rng.permutation(80)
    a = train_tree(X, Y, p)
    b = train_tree(X[perm], Y[perm], p)
    assert [r[:2] if r[0] == "split" else (r[0], r[2]) for r in a.nodes()] == [
        r[:2] if r[0] == "split" else (r[0], r[2]) for r in b.nodes()
    ]
    np.testing.assert_array_equal(a.threshold, b.threshold)


def test_depth_limit():
    rng = np.random.default_rng(2)
    X, Y = random_dataset(rng, n=100, d=3)
    t = train_tree(X, Y, ForestParams(max_depth=3, min_samples_leaf=1, mtry=3))
    assert t.depth() <= 3


def test_leaf_size_invariant():
    rng = np.random.default_rng(9)
    X, Y = random_dataset(rng, n=300, d=6)
    t = train_tree(X, Y, ForestParams(min_samples_leaf=7))
    assert t.n_samples[t.feature < 0].min() >= 7
    # every split has two children
    splits = np.flatnonzero(t.feature >= 0)
    assert np.all(t.left[splits] > 0) and np.all(t.right[splits] > 0)


# -- forests -------------------------------------------------------------------


def test_same_seed_identical_forest():
    rng = np.random.default_rng(4)
    X, Y = random_dataset(rng, n=150, d=6)
    p = ForestParams(n_trees=10, seed=42)
    a, b = train_forest(X, Y, p), train_forest(X, Y, p)
    assert a == b
    assert np.array_equal(predict_many(a, X), predict_many(b, X))
    c = train_forest(X, Y, ForestParams(n_trees=10, seed=43))
    assert a != c


def test_threaded_training_matches_sequential():
    rng = np.random.default_rng(8)
    X, Y = random_dataset(rng, n=200, d=6)
    p = ForestParams(n_trees=12, seed=3)
    assert train_forest(X, Y, p, n_jobs=4) == train_forest(X, Y, p, n_jobs=1)


def test_constant_target_predicted_exactly():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(60, 4))
    Y = np.tile([0.1, -7.3, 1e3 / 3], (60, 1))
    f = train_forest(X, Y, ForestParams(n_trees=7))
    out = predict_many(f, rng.normal(size=(25, 4)) * 5)
    assert np.all(out == Y[0])


def test_single_unbagged_tree_equals_train_tree():
    rng = np.random.default_rng(6)
    X, Y = random_dataset(rng, n=120, d=5)
    p = ForestParams(n_trees=1, bootstrap=False, seed=9)
    f = train_forest(X, Y, p)
    from colonforest.forest import tree_key

    t = train_tree(X, Y, p, tree_key(9, 0))
    assert f.trees[0] == t
    assert np.array_equal(predict_many(f, X), t.predict(X))


def test_dimension_mismatch_rejected():
    rng = np.random.default_rng(0)
    X, Y = random_dataset(rng, n=30, d=3)
    f = train_forest(X, Y, ForestParams(n_trees=2))
    with pytest.raises(InvalidInputError):
        predict(f, np.zeros(4))
    with pytest.raises(InvalidInputError):
        train_forest(X, Y[:-1])
    with pytest.raises(InvalidInputError):
        train_forest(X, Y, ForestParams(mtry=4))


def test_predict_examples():
    one = Forest(ForestParams(n_trees=1), (leaf_tree((1, 2, 3)),), 2)
    assert predict(one, [0.0, 0.0]).tolist() == [1.0, 2.0, 3.0]
    two = Forest(ForestParams(n_trees=2), (leaf_tree((0, 0, 0)), leaf_tree((2, 2, 2))), 2)
    assert predict(two, [5.0, -5.0]).tolist() == [1.0, 1.0, 1.0]


def test_boundary_goes_left():
    t = Tree.from_nodes([("split", 0, 1.5), ("leaf", (0, 0, 0), 1), ("leaf", (1, 1, 1), 1)])
    f = Forest(ForestParams(n_trees=1), (t,), 1)
    assert predict(f, [1.5]).tolist() == [0, 0, 0]
    assert predict(f, [np.nextafter(1.5, 2)]).tolist() == [1, 1, 1]


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_predictions_stay_in_target_box(seed):
    rng = np.random.default_rng(seed)
    X, Y = random_dataset(rng, n=int(rng.integers(5, 120)), d=int(rng.integers(1, 8)))
    p = ForestParams(
        n_trees=int(rng.integers(1, 15)),
        min_samples_leaf=int(rng.integers(1, 6)),
        bootstrap=bool(rng.integers(0, 2)),
        seed=seed,
    )
    f = train_forest(X, Y, p)
    probe = rng.normal(size=(50, X.shape[1])) * 30
    out = predict_many(f, probe)
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    slack = 1e-9 * max(1.0, np.abs(Y).max())
    assert np.all(out >= lo - slack) and np.all(out <= hi + slack)


def test_params_validation():
    with pytest.raises(InvalidInputError):
        ForestParams(n_trees=0)
    with pytest.raises(InvalidInputError):
        ForestParams(min_samples_leaf=0)
    assert ForestParams().resolved_mtry(18) == 6


def test_same_partition_tie_goes_to_lower_feature():
    # features 0 and 1 induce the same best partition but visit the rows in
    # different orders, so the two decreases agree only up to rounding
    rng = np.random.default_rng(21)
    n = 40
    block = np.repeat([0.0, 1.0], n // 2)
    f1 = np.arange(n, dtype=float)
    f0 = np.concatenate([rng.permutation(n // 2), 100 + rng.permutation(n // 2)]).astype(float)
    Y = block[:, None] * 100 + rng.normal(0, 1, (n, 3)) * np.pi
    for X in (np.c_[f0, f1], np.c_[f1, f0]):
        f, thr, _ = best_split(X, Y, [0, 1])
        assert f == 0
        assert np.array_equal(X[:, 0] <= thr, block == 0)
