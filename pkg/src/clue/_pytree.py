"""Numpy reference kernels for regression trees.

These mirror ``_ctree.pyx`` operation for operation (stable sort, sequential
prefix sums, same score expression) so both backends grow bit-identical trees.
"""

import numpy as np

TIE_TOL = 1e-12


def best_split(X, y, idx, features, min_leaf):
    """Best variance-reduction split of the rows ``idx`` over ``features``.

    Returns ``(feature, threshold, score)`` where ``score`` is
    ``sum_L^2/n_L + sum_R^2/n_R``; feature is -1 when no valid split exists.
    Scores within a relative ``TIE_TOL`` count as equal, since the same
    partition reached through two features can differ by rounding; ties keep
    the earliest feature in ``features`` and the lowest threshold.
    """
    n = len(idx)
    best_f, best_thr, best_score = -1, 0.0, -np.inf
    if n < 2 * min_leaf:
        return best_f, best_thr, best_score
    y_node = y[idx]
    n_left = np.arange(1, n, dtype=np.float64)
    n_right = n - n_left
    size_ok = (n_left >= min_leaf) & (n_right >= min_leaf)
    for f in features:
        vals = X[idx, f]
        order = np.argsort(vals, kind="stable")
        keys = vals[order]
        csum = np.cumsum(y_node[order])
        total = csum[-1]
        s_left = csum[:-1]
        s_right = total - s_left
        score = s_left * s_left / n_left + s_right * s_right / n_right
        valid = size_ok & (keys[:-1] < keys[1:])
        if not valid.any():
            continue
        score = np.where(valid, score, -np.inf)
        top = float(score.max())
        if top > best_score + TIE_TOL * abs(best_score) or best_f < 0:
            i = int(np.argmax(score >= top - TIE_TOL * abs(top)))
            best_score = top
            best_f = int(f)
            thr = 0.5 * (keys[i] + keys[i + 1])
            if not keys[i] <= thr < keys[i + 1]:
                thr = keys[i]
            best_thr = float(thr)
    return best_f, best_thr, best_score


def predict_forest(X, feature, threshold, left, right, value, roots):
    """Mean leaf value over the trees whose root nodes are listed in ``roots``, clamped to the leaf range."""
    X = np.asarray(X, dtype=np.float64)
    m = X.shape[0]
    rows = np.arange(m)
    acc = np.zeros(m)
    lo = np.full(m, np.inf)
    hi = np.full(m, -np.inf)
    for root in roots:
        node = np.full(m, root, dtype=np.int64)
        active = feature[node] >= 0
        while active.any():
            sel = np.flatnonzero(active)
            nd = node[sel]
            go_left = X[rows[sel], feature[nd]] <= threshold[nd]
            node[sel] = np.where(go_left, left[nd], right[nd])
            active[sel] = feature[node[sel]] >= 0
        leaf = value[node]
        acc += leaf
        np.minimum(lo, leaf, out=lo)
        np.maximum(hi, leaf, out=hi)
    # The mean of equal leaves must come back exactly equal.
    return np.minimum(np.maximum(acc / len(roots), lo), hi)
