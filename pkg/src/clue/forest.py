"""Random-forest regressor from text features to a unit-interval engagement score.

Trees are CART regressors grown on bootstrap resamples with the variance
reduction criterion. Every tree is stored as flat node arrays, which is the
layout the split and traversal kernels in ``_kernels`` operate on.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .corpus import FeatureTable
from .errors import SchemaError
from .textfeat import FEATURE_NAMES, TextFeatureVector

FORMAT_VERSION = 1
LEAF = -1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    min_samples_leaf: int = 2
    max_depth: int | None = None
    features_per_split: int | None = None  # None: ceil(n_features / 3)
    bootstrap: bool = True

    def __post_init__(self):
        for name in ("n_trees", "min_samples_leaf", "max_depth", "features_per_split"):
            value = getattr(self, name)
            if value is not None and (not isinstance(value, int) or value < 1):
                raise SchemaError(f"forest config {name} must be a positive integer, got {value!r}")

    def resolved_features_per_split(self, n_features: int) -> int:
        k = self.features_per_split or math.ceil(n_features / 3)
        return min(k, n_features)


@dataclass
class RegressionTree:
    """Flat binary tree; ``feature[i] == -1`` marks node ``i`` as a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=np.float64)
        n = len(self.feature)
        if n == 0 or not all(len(a) == n for a in (self.threshold, self.left, self.right, self.value)):
            raise SchemaError("tree node arrays must be nonempty and equally long")
        internal = self.feature != LEAF
        if np.any(internal & ((self.left < 0) | (self.left >= n) | (self.right < 0) | (self.right >= n))):
            raise SchemaError("tree child index out of range")

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.feature[node] != LEAF:
                stack += [(int(self.left[node]), d + 1), (int(self.right[node]), d + 1)]
        return best

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"])

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: float, right_value: float) -> "RegressionTree":
        return cls([feature, LEAF, LEAF], [threshold, 0.0, 0.0], [1, -1, -1], [2, -1, -1], [0.0, left_value, right_value])


@dataclass
class ForestModel:
    trees: list[RegressionTree]
    config: ForestConfig = field(default_factory=ForestConfig)
    feature_names: tuple[str, ...] = FEATURE_NAMES
    seed: int = 0
    background: np.ndarray | None = None

    def __post_init__(self):
        if not self.trees:
            raise SchemaError("a forest needs at least one tree")
        p = len(self.feature_names)
        for tree in self.trees:
            used = tree.feature[tree.feature != LEAF]
            if np.any((used < 0) | (used >= p)):
                raise SchemaError("split feature index out of range")
            leaves = tree.value[tree.feature == LEAF]
            if np.any((leaves < 0) | (leaves > 1)):
                raise SchemaError("leaf values must lie in [0, 1]")
        if self.background is not None:
            self.background = np.asarray(self.background, dtype=np.float64).reshape(-1, p)
        self._flat = None

    def _flatten(self):
        if self._flat is None:
            offsets = np.cumsum([0] + [t.n_nodes for t in self.trees[:-1]]).astype(np.int64)

            def shift(child, off):
                return np.where(child >= 0, child + off, -1)

            self._flat = (
                np.concatenate([t.feature for t in self.trees]),
                np.concatenate([t.threshold for t in self.trees]),
                np.concatenate([shift(t.left, o) for t, o in zip(self.trees, offsets)]),
                np.concatenate([shift(t.right, o) for t, o in zip(self.trees, offsets)]),
                np.concatenate([t.value for t in self.trees]),
                offsets,
            )
        return self._flat

    def predict_batch(self, X, backend: str | None = None) -> np.ndarray:
        """Forest predictions for a (rows, n_features) matrix."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise SchemaError(f"expected shape (n, {len(self.feature_names)}), got {X.shape}")
        if X.shape[0] == 0:
            return np.empty(0)
        kernels = _kernels.get_kernels(backend)
        out = kernels.predict_forest(X, *self._flatten())
        return np.clip(out, 0.0, 1.0)

    __call__ = predict_batch

    def to_dict(self) -> dict:
        d = {
            "format_version": FORMAT_VERSION,
            "config": asdict(self.config),
            "seed": self.seed,
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }
        if self.background is not None:
            d["background"] = self.background.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise SchemaError(f"unsupported forest format_version {d.get('format_version')!r}")
        try:
            return cls(
                trees=[RegressionTree.from_dict(t) for t in d["trees"]],
                config=ForestConfig(**d["config"]),
                feature_names=tuple(d["feature_names"]),
                seed=int(d["seed"]),
                background=d.get("background"),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed forest model: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ForestModel":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from exc


def _leaf_value(ys: np.ndarray) -> float:
    # The mean can drift an ulp outside the label range; clamp it back.
    return float(min(max(ys.mean(), ys.min()), ys.max()))


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    rows: np.ndarray,
    config: ForestConfig,
    rng: np.random.Generator,
    backend: str | None = None,
) -> RegressionTree:
    """Grow one CART regression tree on ``X[rows]``.

    Nodes are split while they hold at least ``2 * min_samples_leaf`` rows,
    labels vary, the depth limit allows it, and the best split reduces the
    squared error by more than a relative 1e-12.
    """
    kernels = _kernels.get_kernels(backend)
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    p = X.shape[1]
    k = config.resolved_features_per_split(p)
    all_features = np.arange(p, dtype=np.int64)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    stack = [(new_node(), np.ascontiguousarray(rows, dtype=np.int64), 0)]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        value[node] = _leaf_value(ys)
        if (
            len(idx) < 2 * config.min_samples_leaf
            or (config.max_depth is not None and depth >= config.max_depth)
            or ys.max() == ys.min()
        ):
            continue
        if k < p:
            candidates = np.sort(rng.choice(p, size=k, replace=False)).astype(np.int64)
        else:
            candidates = all_features
        f, thr, score = kernels.best_split(X, y, idx, candidates, config.min_samples_leaf)
        if f < 0:
            continue
        total = float(np.cumsum(ys)[-1])
        parent = total * total / len(idx)
        if not score - parent > 1e-12 * max(1.0, abs(parent)):
            continue
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(), new_node()
        stack.append((right[node], idx[~mask], depth + 1))
        stack.append((left[node], idx[mask], depth + 1))

    return RegressionTree(feature, threshold, left, right, value)


def train_forest(
    table: FeatureTable,
    config: ForestConfig | None = None,
    seed: int = 0,
    n_jobs: int = 1,
    backend: str | None = None,
    background_rows: int = 10,
) -> ForestModel:
    """Fit a forest; tree ``i`` draws all of its randomness from ``seed + i``.

    Because each tree owns its generator, ``n_jobs > 1`` grows trees in
    threads without changing the result.
    """
    config = config or ForestConfig()
    n = len(table)
    if n == 0:
        raise SchemaError("cannot train a forest on an empty table")
    if n < 2:
        raise SchemaError("cannot train a forest on a single row")
    X, y = table.features, table.labels

    def build(i: int) -> RegressionTree:
        rng = np.random.default_rng(seed + i)
        rows = rng.integers(0, n, size=n) if config.bootstrap else np.arange(n)
        return grow_tree(X, y, rows, config, rng, backend)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(build, range(config.n_trees)))
    else:
        trees = [build(i) for i in range(config.n_trees)]

    bg_idx = np.random.default_rng(seed).choice(n, size=min(background_rows, n), replace=False)
    return ForestModel(trees, config, FEATURE_NAMES, seed, background=X[np.sort(bg_idx)])


def predict_forest(model: ForestModel, features: TextFeatureVector | np.ndarray) -> float:
    x = features.to_array() if isinstance(features, TextFeatureVector) else np.asarray(features, dtype=float)
    return float(model.predict_batch(x.reshape(1, -1))[0])


def forest_mse(model: ForestModel, table: FeatureTable) -> float:
    if len(table) == 0:
        raise SchemaError("cannot compute MSE on an empty table")
    resid = model.predict_batch(table.features) - table.labels
    return float(np.mean(resid * resid))


def train_test_split(table: FeatureTable, train_fraction: float = 0.67, seed: int = 0) -> tuple[FeatureTable, FeatureTable]:
    """Seeded shuffle split; the training side gets ``round(train_fraction * n)`` rows."""
    n = len(table)
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(n - 1, max(1, int(round(train_fraction * n))))
    return table.subset(np.sort(perm[:n_train])), table.subset(np.sort(perm[n_train:]))
