"""Slow, obviously-correct reference implementations used only by the tests."""

import itertools
import math

import numpy as np


def direct_dft(x):
    """O(n^2) DFT straight from the definition."""
    x = np.asarray(x, dtype=complex)
    n = len(x)
    k = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * f * k / n)) for f in range(n)])


def direct_dct2_ortho(v):
    """Orthonormal DCT-II by the defining sum."""
    v = np.asarray(v, dtype=float)
    n = len(v)
    out = np.empty(n)
    for k in range(n):
        s = sum(v[i] * math.cos(math.pi * k * (2 * i + 1) / (2 * n)) for i in range(n))
        out[k] = s * math.sqrt((1 if k == 0 else 2) / n)
    return out


def sse(values):
    values = np.asarray(values, dtype=float)
    return float(np.sum((values - values.mean()) ** 2)) if len(values) else 0.0


def exhaustive_best_split(X, y, idx, features, min_leaf):
    """Try every (feature, observed value) cut and keep the lowest total SSE.

    Thresholds are midpoints of adjacent distinct values; ties prefer the
    lowest feature, then the lowest threshold. Returns (feature, threshold)
    or None.
    """
    best = None
    for f in sorted(features):
        vals = sorted(set(X[idx, f].tolist()))
        for a, b in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (a + b)
            left = [i for i in idx if X[i, f] <= thr]
            right = [i for i in idx if X[i, f] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            cost = sse(y[left]) + sse(y[right])
            if best is None or cost < best[0] - 1e-12:
                best = (cost, f, thr)
    return None if best is None else (best[1], best[2])


def shapley_by_permutations(value, n):
    """Average marginal contribution over all n! orderings; ``value`` maps a frozenset to a float."""
    phi = np.zeros(n)
    perms = list(itertools.permutations(range(n)))
    for order in perms:
        current = frozenset()
        for i in order:
            nxt = current | {i}
            phi[i] += value(nxt) - value(current)
            current = nxt
    return phi / len(perms)


def interventional_value(predictor, x, background):
    def value(subset):
        rows = np.array(background, dtype=float)
        for i in subset:
            rows[:, i] = x[i]
        return float(np.mean(predictor(rows)))

    return value


def central_difference(f, x, eps):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g
