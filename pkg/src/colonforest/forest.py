"""CART regression trees with 3-D vector leaves and bagged forests of them.

Split quality is the summed per-coordinate squared deviation (trace of the
node's target scatter matrix). Routing sends ``x[f] <= threshold`` left.

Randomness is counter based: a tree is keyed by a 64-bit integer derived
from ``(seed, tree_index)`` and the candidate features at a node are a
pure function of ``(tree_key, node_index)`` where nodes are numbered in
pre-order. Trees therefore come out identical whether they are grown
sequentially or on worker threads.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np

from .errors import InvalidInputError

MIN_IMPURITY_DECREASE = 1e-12
TIE_RTOL = 1e-10  # relative to node SSE

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_NODE_STRIDE = np.uint64(0xD1B54A32D192ED03)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: Optional[int] = None
    min_samples_leaf: int = 5
    mtry: Optional[int] = None  # None -> ceil(D / 3)
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise InvalidInputError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise InvalidInputError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise InvalidInputError("max_depth must be >= 0 or None")
        if self.mtry is not None and self.mtry < 1:
            raise InvalidInputError("mtry must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must fit in an unsigned 64-bit integer")

    def resolved_mtry(self, n_features):
        mtry = math.ceil(n_features / 3) if self.mtry is None else self.mtry
        if not 1 <= mtry <= n_features:
            raise InvalidInputError(f"mtry={mtry} outside [1, {n_features}]")
        return mtry

    def to_dict(self):
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "mtry": self.mtry,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
        }


# -- numba kernels ---------------------------------------------------------


@nb.njit(cache=True, inline="always")
def _splitmix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, inline="always")
def _counter_draw(key, node, j):
    return _splitmix64(_splitmix64(key ^ (np.uint64(node) * _NODE_STRIDE)) + np.uint64(j))


@nb.njit(cache=True, nogil=True)
def _candidate_features(key, node, n_features, mtry):
    perm = np.arange(n_features)
    for j in range(mtry):
        r = _counter_draw(key, node, j) % np.uint64(n_features - j)
        k = j + np.int64(r)
        tmp = perm[j]
        perm[j] = perm[k]
        perm[k] = tmp
    return np.sort(perm[:mtry])


@nb.njit(cache=True, nogil=True)
def _presort(X):
    """Stable per-feature argsort, shape ``(D, n)``."""
    n, d = X.shape
    out = np.empty((d, n), dtype=np.int64)
    for f in range(d):
        out[f] = np.argsort(X[:, f], kind="mergesort")
    return out


@nb.njit(cache=True, nogil=True)
def _expand_order(presorted, rows, n_total):
    """Per-feature sorted positions into ``rows`` (ascending, may repeat).

    Each original index contributes one entry per copy in ``rows``, so a
    bootstrap resample inherits the sort without re-sorting.
    """
    counts = np.zeros(n_total, dtype=np.int64)
    first = np.full(n_total, -1, dtype=np.int64)
    for p in range(rows.shape[0]):
        r = rows[p]
        counts[r] += 1
        if first[r] < 0:
            first[r] = p
    d = presorted.shape[0]
    out = np.empty((d, rows.shape[0]), dtype=np.int64)
    for f in range(d):
        k = 0
        for i in presorted[f]:
            for j in range(counts[i]):
                out[f, k] = first[i] + j
                k += 1
    return out


@nb.njit(cache=True, nogil=True)
def _find_split(X, Y, order, start, end, cand, min_leaf, yc):
    """Best (feature, threshold, decrease) over ``cand`` for one node.

    ``order[f, start:end]`` lists the node's rows sorted by feature ``f``.
    ``yc`` is scratch space of shape ``(n, 3)``. Returns feature -1 when no
    legal split beats MIN_IMPURITY_DECREASE.
    """
    m = end - start
    members = order[0, start:end]
    mu = np.zeros(3)
    for i in range(m):
        for c in range(3):
            mu[c] += Y[members[i], c]
    for c in range(3):
        mu[c] /= m
    tot = np.zeros(3)
    sse = 0.0
    for i in range(m):
        p = members[i]
        for c in range(3):
            v = Y[p, c] - mu[c]
            yc[p, c] = v
            tot[c] += v
            sse += v * v
    parent_term = (tot[0] * tot[0] + tot[1] * tot[1] + tot[2] * tot[2]) / m
    # gains equal up to rounding count as ties, so the earliest candidate wins
    tie_tol = TIE_RTOL * sse

    best_f = -1
    best_thr = 0.0
    best_gain = MIN_IMPURITY_DECREASE
    for fi in range(cand.shape[0]):
        f = cand[fi]
        seq = order[f, start:end]
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        for i in range(1, m):
            prev = seq[i - 1]
            s0 += yc[prev, 0]
            s1 += yc[prev, 1]
            s2 += yc[prev, 2]
            lo = X[prev, f]
            hi = X[seq[i], f]
            if hi == lo or i < min_leaf or m - i < min_leaf:
                continue
            r0 = tot[0] - s0
            r1 = tot[1] - s1
            r2 = tot[2] - s2
            gain = (
                (s0 * s0 + s1 * s1 + s2 * s2) / i
                + (r0 * r0 + r1 * r1 + r2 * r2) / (m - i)
                - parent_term
            )
            if gain > best_gain and (best_f < 0 or gain > best_gain + tie_tol):
                best_gain = gain
                best_f = f
                thr = 0.5 * (lo + hi)
                if thr == hi:
                    thr = lo
                best_thr = thr
    return best_f, best_thr, best_gain


@nb.njit(cache=True, nogil=True)
def _leaf_mean(Y, members, out):
    m = members.shape[0]
    for c in range(3):
        ref = Y[members[0], c]
        lo = ref
        hi = ref
        acc = 0.0
        for i in range(m):
            v = Y[members[i], c]
            acc += v - ref
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        out[c] = min(max(ref + acc / m, lo), hi)


@nb.njit(cache=True, nogil=True)
def _grow_tree(X, Y, order, mtry, min_leaf, max_depth, key):
    """Grow one tree over rows of ``X``/``Y`` given their per-feature order.

    Nodes are emitted in pre-order; the node index doubles as the counter
    for the feature-subsampling stream.
    """
    n_features, n = order.shape
    cap = 2 * n - 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros((cap, 3))
    n_samples = np.zeros(cap, dtype=np.int64)

    yc = np.empty((n, 3))
    goes_left = np.zeros(n, dtype=np.bool_)
    buf = np.empty(n, dtype=np.int64)
    # rows of (start, end, depth, parent, is_left)
    stack = np.empty((cap + 1, 5), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = 0
    stack[0, 3] = -1
    stack[0, 4] = 0
    sp = 1
    count = 0
    while sp > 0:
        sp -= 1
        start = stack[sp, 0]
        end = stack[sp, 1]
        depth = stack[sp, 2]
        parent = stack[sp, 3]
        node = count
        count += 1
        if parent >= 0:
            if stack[sp, 4] == 1:
                left[parent] = node
            else:
                right[parent] = node
        m = end - start
        n_samples[node] = m
        _leaf_mean(Y, order[0, start:end], value[node])
        if m < 2 or m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        cand = _candidate_features(key, node, n_features, mtry)
        f, thr, gain = _find_split(X, Y, order, start, end, cand, min_leaf, yc)
        if f < 0:
            continue
        nl = 0
        for i in range(start, end):
            p = order[0, i]
            goes_left[p] = X[p, f] <= thr
            if goes_left[p]:
                nl += 1
        # stable partition of every feature's ordering
        for g in range(n_features):
            a = 0
            b = nl
            for i in range(start, end):
                p = order[g, i]
                if goes_left[p]:
                    buf[a] = p
                    a += 1
                else:
                    buf[b] = p
                    b += 1
            for i in range(m):
                order[g, start + i] = buf[i]
        feature[node] = f
        threshold[node] = thr
        stack[sp, 0] = start + nl
        stack[sp, 1] = end
        stack[sp, 2] = depth + 1
        stack[sp, 3] = node
        stack[sp, 4] = 0
        sp += 1
        stack[sp, 0] = start
        stack[sp, 1] = start + nl
        stack[sp, 2] = depth + 1
        stack[sp, 3] = node
        stack[sp, 4] = 1
        sp += 1
    return (
        feature[:count].copy(),
        threshold[:count].copy(),
        left[:count].copy(),
        right[:count].copy(),
        value[:count].copy(),
        n_samples[:count].copy(),
    )


@nb.njit(cache=True, nogil=True)
def _predict_packed(X, roots, feature, threshold, left, right, value):
    n = X.shape[0]
    n_trees = roots.shape[0]
    out = np.empty((n, 3))
    for i in range(n):
        ref0 = 0.0
        ref1 = 0.0
        ref2 = 0.0
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        for t in range(n_trees):
            node = roots[t]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            if t == 0:
                ref0 = value[node, 0]
                ref1 = value[node, 1]
                ref2 = value[node, 2]
            a0 += value[node, 0] - ref0
            a1 += value[node, 1] - ref1
            a2 += value[node, 2] - ref2
        out[i, 0] = ref0 + a0 / n_trees
        out[i, 1] = ref1 + a1 / n_trees
        out[i, 2] = ref2 + a2 / n_trees
    return out


# -- Python surface ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat pre-order node arrays; ``feature == -1`` marks a leaf.

    Child indices are absolute positions in the arrays. ``value`` holds the
    mean target for every node (only leaf values are used for prediction).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    def __post_init__(self):
        for name in ("feature", "threshold", "left", "right", "value", "n_samples"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def node_count(self):
        return len(self.feature)

    def is_leaf(self, node):
        return self.feature[node] < 0

    def depth(self):
        def _depth(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(_depth(self.left[node]), _depth(self.right[node]))

        return _depth(0)

    def nodes(self):
        """Pre-order node records: ``("split", f, thr)`` or ``("leaf", mean, n)``."""
        out = []
        for i in range(self.node_count):
            if self.feature[i] >= 0:
                out.append(("split", int(self.feature[i]), float(self.threshold[i])))
            else:
                out.append(("leaf", tuple(float(v) for v in self.value[i]), int(self.n_samples[i])))
        return out

    @classmethod
    def from_nodes(cls, records):
        """Rebuild from a pre-order record list; raises ValueError if malformed."""
        records = list(records)
        n = len(records)
        if n == 0:
            raise ValueError("tree has no nodes")
        feature = np.full(n, -1, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        value = np.zeros((n, 3))
        n_samples = np.zeros(n, dtype=np.int64)
        # iterative pre-order walk: each pending slot is (parent, is_left)
        pending = [(-1, False)]
        for i, rec in enumerate(records):
            if not pending:
                raise ValueError(f"node {i} is not reachable from the root")
            parent, is_left = pending.pop()
            if parent >= 0:
                if is_left:
                    left[parent] = i
                else:
                    right[parent] = i
            if rec[0] == "split":
                feature[i] = rec[1]
                threshold[i] = rec[2]
                pending.append((i, False))
                pending.append((i, True))
            elif rec[0] == "leaf":
                value[i] = rec[1]
                n_samples[i] = rec[2]
            else:
                raise ValueError(f"unknown node kind {rec[0]!r}")
        if pending:
            raise ValueError("node list ends before every split has two children")
        _fill_internal_values(feature, left, right, value, n_samples)
        return cls(feature, threshold, left, right, value, n_samples)

    def __eq__(self, other):
        if not isinstance(other, Tree):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("feature", "threshold", "left", "right", "n_samples")
        ) and np.array_equal(self.leaf_values(), other.leaf_values())

    def leaf_values(self):
        return self.value[self.feature < 0]

    def predict(self, X):
        return _predict_packed(
            _as_2d(X, None), np.zeros(1, dtype=np.int64), self.feature, self.threshold,
            self.left, self.right, self.value,
        )


def _fill_internal_values(feature, left, right, value, n_samples):
    # internal-node means are not persisted; recompute them from the leaves
    for i in range(len(feature) - 1, -1, -1):
        if feature[i] >= 0:
            nl, nr = n_samples[left[i]], n_samples[right[i]]
            n_samples[i] = nl + nr
            if n_samples[i] > 0:
                value[i] = (value[left[i]] * nl + value[right[i]] * nr) / n_samples[i]


@dataclass(frozen=True, eq=False)
class Forest:
    params: ForestParams
    trees: tuple
    feature_dim: int
    _packed: tuple = field(default=None, repr=False)

    def __post_init__(self):
        trees = tuple(self.trees)
        if not trees:
            raise InvalidInputError("a forest needs at least one tree")
        for t in trees:
            if t.node_count and t.feature.max() >= self.feature_dim:
                raise InvalidInputError("tree splits on a feature beyond feature_dim")
        object.__setattr__(self, "trees", trees)
        offsets = np.cumsum([0] + [t.node_count for t in trees])
        roots = offsets[:-1].astype(np.int64)
        packed = (
            roots,
            np.concatenate([t.feature for t in trees]),
            np.concatenate([t.threshold for t in trees]),
            np.concatenate([t.left + o for t, o in zip(trees, offsets)]),
            np.concatenate([t.right + o for t, o in zip(trees, offsets)]),
            np.concatenate([t.value for t in trees]),
        )
        object.__setattr__(self, "_packed", packed)

    @property
    def n_trees(self):
        return len(self.trees)

    def __eq__(self, other):
        if not isinstance(other, Forest):
            return NotImplemented
        return (
            self.params == other.params
            and self.feature_dim == other.feature_dim
            and self.trees == other.trees
        )


def _as_2d(X, dim):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise InvalidInputError(f"feature array must be 1-D or 2-D, got {X.ndim}-D")
    if dim is not None and X.shape[1] != dim:
        raise InvalidInputError(f"feature dimension {X.shape[1]} != forest feature_dim {dim}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("features contain non-finite values")
    return X


def _as_targets(Y, n):
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != 3:
        raise InvalidInputError(f"targets must have shape (n, 3), got {Y.shape}")
    if Y.shape[0] != n:
        raise InvalidInputError(f"{n} feature rows but {Y.shape[0]} targets")
    if not np.all(np.isfinite(Y)):
        raise InvalidInputError("targets contain non-finite values")
    return Y


def best_split(X, Y, candidate_features, min_samples_leaf=1):
    """Best CART split of all rows of ``(X, Y)`` among ``candidate_features``.

    Returns ``(feature_index, threshold, impurity_decrease)`` or ``None``
    when no split with both children holding ``min_samples_leaf`` rows
    lowers the impurity by more than ``MIN_IMPURITY_DECREASE``. Ties go
    to the lowest feature index, then the lowest threshold; decreases
    within ``TIE_RTOL`` times the node SSE of each other count as ties.
    """
    X = _as_2d(X, None)
    Y = _as_targets(Y, X.shape[0])
    n = X.shape[0]
    if n < 2:
        raise InvalidInputError("best_split needs at least 2 samples")
    cand = np.unique(np.asarray(candidate_features, dtype=np.int64))
    if cand.size == 0 or cand[0] < 0 or cand[-1] >= X.shape[1]:
        raise InvalidInputError("candidate feature indices out of range")
    order = _presort(X)
    f, thr, gain = _find_split(X, Y, order, 0, n, cand, int(min_samples_leaf), np.empty((n, 3)))
    if f < 0:
        return None
    return int(f), float(thr), float(gain)


def presort(X):
    """Per-feature stable sort order of ``X``; reusable across trees and forests."""
    return _presort(_as_2d(X, None))


def tree_key(seed, tree_index):
    """64-bit key of the counter-based stream for one tree."""
    ss = np.random.SeedSequence([int(seed), int(tree_index)])
    return int(ss.generate_state(1, np.uint64)[0])


def train_tree(X, Y, params=None, key=0, rows=None, presorted=None):
    """Grow one CART tree on rows ``rows`` (default: all) of ``(X, Y)``.

    ``rows`` may repeat indices, which is how bootstrap resamples are
    passed in. ``key`` selects the counter-based stream that picks the
    ``mtry`` candidate features at every node.
    """
    params = params or ForestParams()
    X = _as_2d(X, None)
    Y = _as_targets(Y, X.shape[0])
    if X.shape[0] == 0:
        raise InvalidInputError("cannot train a tree on an empty sample set")
    if rows is None:
        rows = np.arange(X.shape[0], dtype=np.int64)
    else:
        rows = np.sort(np.asarray(rows, dtype=np.int64))
        if rows.size == 0:
            raise InvalidInputError("cannot train a tree on an empty sample set")
        if rows[0] < 0 or rows[-1] >= X.shape[0]:
            raise InvalidInputError("row index out of range")
    mtry = params.resolved_mtry(X.shape[1])
    max_depth = -1 if params.max_depth is None else int(params.max_depth)
    if presorted is None:
        presorted = _presort(X)
    order = _expand_order(presorted, rows, X.shape[0])
    arrays = _grow_tree(
        np.ascontiguousarray(X[rows]), np.ascontiguousarray(Y[rows]), order,
        mtry, params.min_samples_leaf, max_depth, np.uint64(key),
    )
    return Tree(*arrays)


def bootstrap_rows(seed, tree_index, n):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(tree_index), 1]))
    return np.sort(rng.integers(0, n, size=n)).astype(np.int64)


def train_forest(X, Y, params=None, n_jobs=1, presorted=None):
    """Bagged forest of ``params.n_trees`` trees.

    Tree ``i`` uses streams keyed by ``(params.seed, i)`` for both its
    bootstrap resample and its feature subsampling, so ``n_jobs`` changes
    wall time only.
    """
    params = params or ForestParams()
    X = _as_2d(X, None)
    Y = _as_targets(Y, X.shape[0])
    if X.shape[0] == 0:
        raise InvalidInputError("cannot train a forest on an empty sample set")
    n = X.shape[0]
    params.resolved_mtry(X.shape[1])
    if presorted is None:
        presorted = _presort(X)

    def _one(i):
        rows = bootstrap_rows(params.seed, i, n) if params.bootstrap else None
        return train_tree(X, Y, params, tree_key(params.seed, i), rows, presorted)

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(_one, range(params.n_trees)))
    else:
        trees = [_one(i) for i in range(params.n_trees)]
    return Forest(params, tuple(trees), X.shape[1])


def predict(forest, x):
    """Mean over trees of the leaf reached by ``x``; one ``(3,)`` point."""
    X = _as_2d(x, forest.feature_dim)
    if X.shape[0] != 1:
        raise InvalidInputError("predict takes one feature vector; use predict_many")
    return predict_many(forest, X)[0]


def predict_many(forest, X):
    X = _as_2d(X, forest.feature_dim)
    return _predict_packed(X, *forest._packed)


