"""Weighted random forest regression.

Each tree is grown on a weighted bootstrap sample (rows drawn with replacement
with probability proportional to their population weight) and, at every node,
only ``mtry`` randomly chosen features compete for the split. Weights are used
a second time inside the node statistics: leaf values are weighted means and
split quality is weighted variance reduction.
"""
from __future__ import annotations

import gzip
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from . import _kernels
from .data import Dataset, MissingFeatureError, feature_vector

log = logging.getLogger(__name__)

MODEL_FORMAT = "countyshap-forest"
MODEL_VERSION = 1
_TOL_REL = 1e-12


class ConfigError(ValueError):
    pass


class CorruptModelError(ValueError):
    pass


@dataclass(frozen=True)
class ForestConfig:
    """Hyper-parameters of the forest.

    ``mtry=None`` resolves to ``floor(sqrt(M))``; ``max_depth=None`` means
    unlimited. ``bootstrap=False`` grows every tree on the full training set.
    """

    n_trees: int = 2000
    min_node_size: int = 5
    mtry: int | None = None
    seed: int = 0
    max_depth: int | None = None
    bootstrap: bool = True

    def resolved_mtry(self, n_features: int) -> int:
        return self.mtry if self.mtry is not None else max(1, math.isqrt(n_features))

    def check(self, n_features: int) -> None:
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_node_size < 1:
            raise ConfigError(f"min_node_size must be >= 1, got {self.min_node_size}")
        mtry = self.resolved_mtry(n_features)
        if not 1 <= mtry <= n_features:
            raise ConfigError(f"mtry must lie in [1, {n_features}], got {mtry}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError(f"max_depth must be >= 0, got {self.max_depth}")


# Node classes for hand-built trees (fixtures, tests); trained trees stay as arrays.
@dataclass
class Leaf:
    value: float
    coverage_weight: float
    n_rows: int = 0


@dataclass
class Internal:
    feature: int
    threshold: float
    left: Internal | Leaf
    right: Internal | Leaf
    coverage_weight: float | None = None

    def __post_init__(self):
        if self.coverage_weight is None:
            self.coverage_weight = self.left.coverage_weight + self.right.coverage_weight


TreeNode = Internal | Leaf


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """A regression tree stored as parallel node arrays (node 0 is the root)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    coverage: np.ndarray
    n_rows: np.ndarray
    sample_id: tuple[int, int] = (0, 0)

    @classmethod
    def from_root(cls, root: TreeNode, sample_id: tuple[int, int] = (0, 0)) -> DecisionTree:
        feat, thr, lft, rgt, val, cov, nr = [], [], [], [], [], [], []

        def visit(node: TreeNode) -> int:
            i = len(feat)
            feat.append(_kernels.LEAF)
            thr.append(0.0)
            lft.append(-1)
            rgt.append(-1)
            val.append(0.0)
            cov.append(float(node.coverage_weight))
            nr.append(0)
            if isinstance(node, Leaf):
                val[i] = float(node.value)
                nr[i] = int(node.n_rows)
                return i
            feat[i] = int(node.feature)
            thr[i] = float(node.threshold)
            lft[i] = visit(node.left)
            rgt[i] = visit(node.right)
            nr[i] = nr[lft[i]] + nr[rgt[i]]
            lc, rc = cov[lft[i]], cov[rgt[i]]
            val[i] = (val[lft[i]] * lc + val[rgt[i]] * rc) / (lc + rc) if lc + rc > 0 else 0.0
            return i

        visit(root)
        return cls(
            np.array(feat, dtype=np.int64), np.array(thr), np.array(lft, dtype=np.int64),
            np.array(rgt, dtype=np.int64), np.array(val), np.array(cov), np.array(nr, dtype=np.int64),
            sample_id,
        )

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] == _kernels.LEAF

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature == _kernels.LEAF)

    def used_features(self) -> set[int]:
        return set(int(f) for f in self.feature[self.feature != _kernels.LEAF])

    def baseline(self) -> float:
        """Coverage-weighted mean of the leaf values."""
        lv = self.leaves()
        return float(np.dot(self.coverage[lv], self.value[lv]) / self.coverage[lv].sum())

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _kernels.route(self.feature, self.threshold, self.left, self.right, _as_matrix(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(len(X))
        _kernels.accumulate_predictions(self.feature, self.threshold, self.left, self.right, self.value,
                                        _as_matrix(X), out)
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": list(self.sample_id),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "coverage": self.coverage.tolist(),
            "n_rows": self.n_rows.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DecisionTree:
        ints = ("feature", "left", "right", "n_rows")
        arrs = {k: np.asarray(d[k], dtype=np.int64 if k in ints else np.float64)
                for k in ("feature", "threshold", "left", "right", "value", "coverage", "n_rows")}
        tree = cls(**arrs, sample_id=tuple(d.get("sample_id", (0, 0))))
        tree.check()
        return tree

    def check(self) -> None:
        """Structural sanity checks; raises :class:`CorruptModelError`."""
        n = self.n_nodes
        if n == 0 or any(len(a) != n for a in (self.threshold, self.left, self.right, self.value,
                                               self.coverage, self.n_rows)):
            raise CorruptModelError("node arrays are empty or of unequal length")
        internal = self.feature != _kernels.LEAF
        kids = np.concatenate([self.left[internal], self.right[internal]])
        if np.any(kids <= 0) or np.any(kids >= n) or len(set(kids.tolist())) != len(kids):
            raise CorruptModelError("invalid child pointers")
        if np.any(self.left[internal] <= np.flatnonzero(internal)):
            raise CorruptModelError("children must follow their parent")
        if not np.all(np.isfinite(self.coverage)) or np.any(self.coverage <= 0):
            raise CorruptModelError("every node needs a positive coverage weight")
        summed = self.coverage[self.left[internal]] + self.coverage[self.right[internal]]
        if not np.allclose(self.coverage[internal], summed, rtol=1e-9, atol=0):
            raise CorruptModelError("internal coverage differs from the sum of its children")


def _as_matrix(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    return np.ascontiguousarray(X)


def predict_tree(tree: DecisionTree, record: Any, feature_names: Sequence[str] | None = None) -> float:
    """Value of the leaf ``record`` routes to."""
    x = feature_vector(record, feature_names) if feature_names is not None else np.asarray(record, float)
    node = 0
    while not tree.is_leaf(node):
        f = int(tree.feature[node])
        if f >= len(x):
            raise MissingFeatureError(f"feature index {f}")
        node = int(tree.left[node] if x[f] < tree.threshold[node] else tree.right[node])
    return float(tree.value[node])


@dataclass(frozen=True)
class SplitRule:
    feature: int
    threshold: float
    reduction: float


def best_split(X: np.ndarray, y: np.ndarray, w: np.ndarray | None = None,
               candidate_features: Sequence[int] | None = None) -> SplitRule | None:
    """Weighted-variance-reducing split over all rows, or ``None``.

    Thresholds sit at midpoints between consecutive distinct values; ties in
    reduction go to the lowest feature index, then the smallest threshold.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=np.float64)
    feats = np.arange(X.shape[1]) if candidate_features is None else np.asarray(sorted(candidate_features))
    if len(y) < 2 or np.all(y == y[0]):
        return None
    idx = np.arange(len(y), dtype=np.int64)
    f, thr, red = _kernels.best_split(X, y, w, idx, 0, len(y), feats.astype(np.int64), _TOL_REL)
    if f < 0:
        return None
    return SplitRule(int(f), float(thr), float(red))


def tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    """Independent stream per (seed, tree index), so trees can be grown in any order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), int(tree_index)]))


def bootstrap_indices(rng: np.random.Generator, w: np.ndarray, size: int | None = None) -> np.ndarray:
    """Draw ``size`` row ids with replacement, probability proportional to ``w``."""
    w = np.asarray(w, dtype=np.float64)
    size = len(w) if size is None else size
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    ids = np.searchsorted(cdf, rng.random(size), side="right")
    return np.minimum(ids, len(w) - 1).astype(np.int64)


def grow_tree(X: np.ndarray, y: np.ndarray, w: np.ndarray, config: ForestConfig, tree_index: int) -> DecisionTree:
    n, m = X.shape
    rng = tree_rng(config.seed, tree_index)
    sample = bootstrap_indices(rng, w) if config.bootstrap else np.arange(n, dtype=np.int64)
    keys = rng.random((2 * n + 1, m))
    max_depth = -1 if config.max_depth is None else config.max_depth
    arrays = _kernels.grow_tree(X, y, w, sample, keys, config.resolved_mtry(m), config.min_node_size,
                                max_depth, _TOL_REL)
    return DecisionTree(*arrays, sample_id=(config.seed, tree_index))


@dataclass(frozen=True, eq=False)
class Forest:
    """Trained ensemble; prediction is the arithmetic mean over trees."""

    trees: tuple[DecisionTree, ...]
    config: ForestConfig
    feature_names: tuple[str, ...]
    target_mean: float = float("nan")
    n_train: int = 0
    train_keys: tuple[str, ...] = ()
    timings: tuple[float, ...] = field(default=(), repr=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def __iter__(self) -> Iterator[DecisionTree]:
        return iter(self.trees)

    def __len__(self) -> int:
        return len(self.trees)

    def with_trees(self, trees: Sequence[DecisionTree]) -> Forest:
        return Forest(tuple(trees), self.config, self.feature_names, self.target_mean, self.n_train,
                      self.train_keys)

    def matrix(self, records: Any) -> np.ndarray:
        if isinstance(records, Dataset):
            return np.ascontiguousarray(records.frame[list(self.feature_names)].to_numpy(dtype=np.float64))
        X = _as_matrix(records)
        if X.shape[1] != self.n_features:
            raise MissingFeatureError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def predict(self, records: Any, n_jobs: int = 1) -> np.ndarray:
        X = self.matrix(records)
        if n_jobs > 1 and len(X) > 1:
            chunks = np.array_split(np.arange(len(X)), n_jobs)
            with ThreadPoolExecutor(n_jobs) as pool:
                parts = list(pool.map(lambda c: self._predict(X[c]), chunks))
            return np.concatenate(parts)
        return self._predict(X)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(len(X))
        for t in self.trees:
            _kernels.accumulate_predictions(t.feature, t.threshold, t.left, t.right, t.value, X, out)
        return out / len(self.trees)

    def predict_one(self, record: Any) -> float:
        x = feature_vector(record, self.feature_names)
        return float(self._predict(x[None, :])[0])

    def baseline(self) -> float:
        return float(np.mean([t.baseline() for t in self.trees]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "feature_names": list(self.feature_names),
            "config": asdict(self.config),
            "training": {"target_mean": self.target_mean, "n_train": self.n_train,
                         "train_keys": list(self.train_keys)},
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Forest:
        if d.get("format") != MODEL_FORMAT:
            raise CorruptModelError(f"not a forest model file (format={d.get('format')!r})")
        if d.get("version") != MODEL_VERSION:
            raise CorruptModelError(f"unsupported model version {d.get('version')!r}")
        tr = d.get("training", {})
        return cls(
            trees=tuple(DecisionTree.from_dict(t) for t in d["trees"]),
            config=ForestConfig(**d["config"]),
            feature_names=tuple(d["feature_names"]),
            target_mean=float(tr.get("target_mean", float("nan"))),
            n_train=int(tr.get("n_train", 0)),
            train_keys=tuple(tr.get("train_keys", ())),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def save(self, path: str | Path) -> None:
        """Write the model file; a ``.gz`` suffix selects a reproducible gzip stream."""
        data = self.dumps().encode("utf-8")
        path = Path(path)
        if path.suffix == ".gz":
            with open(path, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as gz:
                gz.write(data)
        else:
            path.write_bytes(data)

    @classmethod
    def load(cls, path: str | Path) -> Forest:
        path = Path(path)
        raw = path.read_bytes()
        if path.suffix == ".gz":
            raw = gzip.GzipFile(fileobj=io.BytesIO(raw)).read()
        return cls.from_dict(json.loads(raw.decode("utf-8")))


def fit_forest_arrays(X: np.ndarray, y: np.ndarray, w: np.ndarray, feature_names: Sequence[str],
                      config: ForestConfig = ForestConfig(), n_jobs: int = 1,
                      train_keys: Sequence[str] = ()) -> Forest:
    X = _as_matrix(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    n, m = X.shape
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(feature_names) != m or len(y) != n or len(w) != n:
        raise ValueError("X, y, w and feature_names disagree in shape")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("features and target must be finite")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be finite and strictly positive")
    config.check(m)

    def one(t: int) -> tuple[DecisionTree, float]:
        t0 = time.perf_counter()
        tree = grow_tree(X, y, w, config, t)
        return tree, time.perf_counter() - t0

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            grown = list(pool.map(one, range(config.n_trees)))
    else:
        grown = [one(t) for t in range(config.n_trees)]
    for t, (_, secs) in enumerate(grown):
        log.debug("tree %d grown in %.4fs", t, secs)
    return Forest(
        trees=tuple(g[0] for g in grown),
        config=config,
        feature_names=tuple(feature_names),
        target_mean=float(np.dot(w, y) / w.sum()),
        n_train=n,
        train_keys=tuple(str(k) for k in train_keys),
        timings=tuple(g[1] for g in grown),
    )


def train_forest(train: Dataset, config: ForestConfig = ForestConfig(), n_jobs: int = 1) -> Forest:
    """Train a forest on ``train`` using its schema's predictors, target and weights."""
    if len(train) == 0:
        raise ValueError("cannot train on an empty dataset")
    return fit_forest_arrays(train.X, train.y, train.w, train.predictors, config, n_jobs,
                             train_keys=[str(k) for k in train.keys])


def predict_forest(forest: Forest, record: Any) -> float:
    return forest.predict_one(record)


def cross_validate(ds: Dataset, configs: Sequence[ForestConfig], folds: int = 5, seed: int = 0,
                   n_jobs: int = 1) -> list[tuple[ForestConfig, float]]:
    """Mean held-out MAE of each config over ``folds`` seeded folds of ``ds``."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    perm = np.random.default_rng(np.random.SeedSequence(seed)).permutation(len(ds))
    parts = np.array_split(perm, folds)
    X, y, w = ds.X, ds.y, ds.w
    results = []
    for cfg in configs:
        errs = []
        for k in range(folds):
            test = parts[k]
            train = np.concatenate([parts[j] for j in range(folds) if j != k])
            f = fit_forest_arrays(X[train], y[train], w[train], ds.predictors, cfg, n_jobs)
            errs.append(float(np.mean(np.abs(f.predict(X[test]) - y[test]))))
        results.append((cfg, float(np.mean(errs))))
    return results
