"""Independent slow reference implementations used as test oracles.

Nothing here imports the code under test.
"""
import math


def sse(targets):
    """Sum over the 3 coordinates of squared deviation from the mean (two-pass)."""
    n = len(targets)
    if n == 0:
        return 0.0
    total = 0.0
    for c in range(3):
        mean = sum(t[c] for t in targets) / n
        total += sum((t[c] - mean) ** 2 for t in targets)
    return total


def exhaustive_best_split(X, Y, features, min_leaf, tie_rtol=1e-10):
    """Enumerate every (feature, midpoint) split and score it directly.

    Returns (feature, threshold, decrease) or None. Ties keep the first
    candidate in (feature ascending, threshold ascending) order; a later
    candidate must beat the incumbent by more than tie_rtol * parent SSE.
    """
    n = len(X)
    parent = sse(Y)
    best = None
    for f in sorted(features):
        values = sorted(set(row[f] for row in X))
        for lo, hi in zip(values, values[1:]):
            thr = 0.5 * (lo + hi)
            if thr == hi:
                thr = lo
            left = [Y[i] for i in range(n) if X[i][f] <= thr]
            right = [Y[i] for i in range(n) if X[i][f] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            dec = parent - sse(left) - sse(right)
            if dec > 1e-12 and (best is None or dec > best[2] + tie_rtol * parent):
                best = (f, thr, dec)
    return best


def oracle_tree(X, Y, max_depth, min_leaf, depth=0):
    """Nested-dict CART tree using all features at every node."""
    n = len(X)
    mean = tuple(sum(t[c] for t in Y) / n for c in range(3))
    leaf = {"leaf": mean, "n": n}
    if n < 2 or n < 2 * min_leaf or (max_depth is not None and depth >= max_depth):
        return leaf
    split = exhaustive_best_split(X, Y, range(len(X[0])), min_leaf)
    if split is None:
        return leaf
    f, thr, _ = split
    li = [i for i in range(n) if X[i][f] <= thr]
    ri = [i for i in range(n) if X[i][f] > thr]
    return {
        "feature": f,
        "threshold": thr,
        "left": oracle_tree([X[i] for i in li], [Y[i] for i in li], max_depth, min_leaf, depth + 1),
        "right": oracle_tree([X[i] for i in ri], [Y[i] for i in ri], max_depth, min_leaf, depth + 1),
    }


def oracle_preorder(node):
    if "leaf" in node:
        return [("leaf", node["n"])]
    return (
        [("split", node["feature"], node["threshold"])]
        + oracle_preorder(node["left"])
        + oracle_preorder(node["right"])
    )


def oracle_predict(node, x):
    while "leaf" not in node:
        node = node["left"] if x[node["feature"]] <= node["threshold"] else node["right"]
    return node["leaf"]


def loop_rmsd(a, b):
    total = 0.0
    for p, q in zip(a, b):
        total += (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2
    return math.sqrt(total / len(a))


def brute_nearest(source, target):
    out = []
    for p in source:
        best_i, best_d = 0, None
        for i, q in enumerate(target):
            d = (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2
            if best_d is None or d < best_d:
                best_i, best_d = i, d
        out.append(best_i)
    return out
