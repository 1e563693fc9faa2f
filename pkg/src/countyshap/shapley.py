"""Exact Shapley attributions for forest predictions.

A coalition is a bitmask over features (bit j set: feature j is known). Its
value for one record is the forest's expected prediction when only the
coalition's features are known: at a split on a known feature the record is
routed as usual, at a split on an unknown feature both subtrees are averaged
in proportion to the training mass (coverage) that went each way.

Attributions use the exact factorial kernel over all 2**M coalitions, so
``baseline + sum(phi) == prediction`` holds up to rounding.
"""
from __future__ import annotations

import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from numba import njit

from .data import Dataset, feature_vector
from .forest import CorruptModelError, DecisionTree, Forest

log = logging.getLogger(__name__)

MAX_FEATURES = 25


class TooManyFeaturesError(ValueError):
    pass


@dataclass(frozen=True)
class ShapExplanation:
    """Attribution of one prediction to its features."""

    obs_id: str
    baseline: float
    phi: tuple[float, ...]
    prediction: float
    feature_names: tuple[str, ...] = ()
    feature_values: tuple[float, ...] = ()
    n_coalitions: int = 0

    @property
    def additivity_gap(self) -> float:
        return self.baseline + math.fsum(self.phi) - self.prediction

    def as_dict(self) -> dict[str, Any]:
        return {
            "fips": self.obs_id,
            "baseline": self.baseline,
            "prediction": self.prediction,
            "features": [
                {"name": n, "value": v, "shap": p}
                for n, v, p in zip(self.feature_names, self.feature_values, self.phi)
            ],
        }


def tree_expected_value(tree: DecisionTree, record: Any, mask: int) -> float:
    """Expected tree output given only the features in ``mask``.

    Straight recursive descent; the vectorised :class:`ForestExplainer` computes
    the same quantity for all masks at once.
    """
    x = np.asarray(record, dtype=float)
    feature, thr, left, right, cov, val = (tree.feature, tree.threshold, tree.left, tree.right,
                                           tree.coverage, tree.value)

    def descend(node: int) -> float:
        f = feature[node]
        if f < 0:
            return float(val[node])
        if (mask >> int(f)) & 1:
            return descend(int(left[node]) if x[f] < thr[node] else int(right[node]))
        lc, rc = cov[left[node]], cov[right[node]]
        if not lc + rc > 0:
            raise CorruptModelError(f"internal node {node} has zero coverage")
        return (descend(int(left[node])) * lc + descend(int(right[node])) * rc) / (lc + rc)

    return descend(0)


def coalition_value(forest: Forest, record: Any, mask: int) -> float:
    """Mean of :func:`tree_expected_value` over the forest's trees."""
    x = feature_vector(record, forest.feature_names)
    return math.fsum(tree_expected_value(t, x, mask) for t in forest.trees) / len(forest.trees)


def baseline(forest: Forest) -> float:
    """v(empty coalition): mean over trees of each tree's coverage-weighted leaf mean."""
    return forest.baseline()


def shapley_kernel(m: int) -> np.ndarray:
    """Weight |S|! (M-|S|-1)! / M! indexed by coalition size |S| = 0..M-1."""
    return np.array([math.factorial(s) * math.factorial(m - s - 1) / math.factorial(m) for s in range(m)])


def popcounts(m: int) -> np.ndarray:
    masks = np.arange(1 << m)
    return np.array([bin(int(k)).count("1") for k in masks], dtype=np.int64)


def phi_from_values(v: np.ndarray, m: int) -> np.ndarray:
    """Shapley values from a table of all 2**m coalition values (indexed by mask)."""
    if len(v) != 1 << m:
        raise ValueError(f"need {1 << m} coalition values, got {len(v)}")
    kernel = shapley_kernel(m)
    masks = np.arange(1 << m)
    size = popcounts(m)
    phi = np.empty(m)
    for j in range(m):
        bit = 1 << j
        without = masks[(masks & bit) == 0]
        phi[j] = np.sum(kernel[size[without]] * (v[without | bit] - v[without]))
    return phi


@njit(cache=True)
def _leaf_boxes(feature, threshold, left, right, coverage, m):
    """Per-leaf interval [lo, hi) on each feature and product of coverage ratios.

    A record satisfies every split on a leaf's path iff lo <= x < hi for each
    feature; ``ratio[j]`` is the probability mass of reaching the leaf through
    the splits on feature j when j is unknown.
    """
    n = feature.shape[0]
    lo = np.empty((n, m))
    hi = np.empty((n, m))
    ratio = np.empty((n, m))
    lo[0, :] = -np.inf
    hi[0, :] = np.inf
    ratio[0, :] = 1.0
    bad = -1
    for node in range(n):
        f = feature[node]
        if f < 0:
            continue
        lc = left[node]
        rc = right[node]
        tot = coverage[lc] + coverage[rc]
        if not tot > 0:
            bad = node
            break
        lo[lc, :] = lo[node, :]
        hi[lc, :] = hi[node, :]
        ratio[lc, :] = ratio[node, :]
        lo[rc, :] = lo[node, :]
        hi[rc, :] = hi[node, :]
        ratio[rc, :] = ratio[node, :]
        t = threshold[node]
        if t < hi[lc, f]:
            hi[lc, f] = t
        if t > lo[rc, f]:
            lo[rc, f] = t
        ratio[lc, f] *= coverage[lc] / tot
        ratio[rc, f] *= coverage[rc] / tot
    return lo, hi, ratio, bad


@njit(cache=True, nogil=True)
def _coalition_values(lo, hi, ratio, leaf_value, x, m):
    """All 2**m coalition values of record ``x``.

    A leaf adds to coalition S only when x lies inside the leaf's interval on
    every feature of S. With P the set of such features, the leaf adds
    value * prod(ratio[j], j not in S) to every S contained in P, so only the
    2**|P| submasks of P are visited. Leaves are accumulated in a fixed order,
    which keeps a feature that never splits at identical values with and
    without it.
    """
    n_masks = 1 << m
    v = np.zeros(n_masks)
    idx = np.empty(n_masks, dtype=np.int64)
    wt = np.empty(n_masks)
    for leaf in range(leaf_value.shape[0]):
        base = leaf_value[leaf]
        inside = 0
        for j in range(m):
            if lo[leaf, j] <= x[j] and x[j] < hi[leaf, j]:
                inside |= 1 << j
            else:
                base *= ratio[leaf, j]
        if base == 0.0:
            continue
        idx[0] = 0
        wt[0] = base
        count = 1
        for j in range(m):
            if (inside >> j) & 1:
                r = ratio[leaf, j]
                bit = 1 << j
                for k in range(count):
                    idx[count + k] = idx[k] | bit
                    wt[count + k] = wt[k]
                    wt[k] *= r
                count *= 2
        for k in range(count):
            v[idx[k]] += wt[k]
    return v


class ForestExplainer:
    """Computes all coalition values of a record in one compiled pass over the leaves.

    Leaves of every tree are flattened into tables (interval bounds, coverage
    ratio products, value / n_trees). For a coalition mask the weight of a leaf
    is the product over features of either its interval indicator (feature
    known) or its coverage ratio (feature unknown); the coalition value is the
    weighted sum of leaf values. Masks for which some indicator is zero are
    skipped, see :func:`_coalition_values`.

    ``evaluations`` counts coalition values computed (2**M per record).
    """

    def __init__(self, forest: Forest):
        m = forest.n_features
        if m > MAX_FEATURES:
            raise TooManyFeaturesError(f"{m} features exceeds the enumeration limit of {MAX_FEATURES}")
        self.forest = forest
        self.m = m
        los, his, ratios, vals = [], [], [], []
        scale = 1.0 / len(forest.trees)
        for k, t in enumerate(forest.trees):
            lo, hi, ratio, bad = _leaf_boxes(t.feature, t.threshold, t.left, t.right, t.coverage, m)
            if bad >= 0:
                raise CorruptModelError(f"tree {k}: internal node {bad} has zero coverage")
            leaves = t.leaves()
            los.append(lo[leaves])
            his.append(hi[leaves])
            ratios.append(ratio[leaves])
            vals.append(t.value[leaves] * scale)
        self.lo = np.ascontiguousarray(np.concatenate(los))
        self.hi = np.ascontiguousarray(np.concatenate(his))
        self.ratio = np.ascontiguousarray(np.concatenate(ratios))
        self.leaf_value = np.ascontiguousarray(np.concatenate(vals))
        self.n_leaves = len(self.leaf_value)
        self._kernel = shapley_kernel(m) if m else np.zeros(0)
        self._lock = threading.Lock()
        self.evaluations = 0

    def coalition_values(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.m,):
            raise ValueError(f"expected {self.m} feature values, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("feature values must be finite")
        v = _coalition_values(self.lo, self.hi, self.ratio, self.leaf_value, x, self.m)
        with self._lock:
            self.evaluations += len(v)
        return v

    def explain_vector(self, x: np.ndarray, obs_id: str = "", prediction: float | None = None) -> ShapExplanation:
        v = self.coalition_values(x)
        phi = phi_from_values(v, self.m)
        if prediction is None:
            prediction = float(self.forest.predict(x[None, :])[0])
        return ShapExplanation(
            obs_id=str(obs_id),
            baseline=float(v[0]),
            phi=tuple(float(p) for p in phi),
            prediction=float(prediction),
            feature_names=self.forest.feature_names,
            feature_values=tuple(float(a) for a in x),
            n_coalitions=len(v),
        )

    def explain(self, record: Any, obs_id: str = "") -> ShapExplanation:
        return self.explain_vector(feature_vector(record, self.forest.feature_names), obs_id)


def shap_values(forest: Forest, record: Any, explainer: ForestExplainer | None = None,
                obs_id: str = "") -> ShapExplanation:
    """Exact Shapley attribution of ``forest``'s prediction for ``record``."""
    explainer = explainer or ForestExplainer(forest)
    return explainer.explain(record, obs_id)


@dataclass
class BatchExplanation:
    explanations: list[ShapExplanation]
    failures: list[tuple[int, str, str]] = field(default_factory=list)
    elapsed: float = 0.0
    coalition_evaluations: int = 0

    def __len__(self) -> int:
        return len(self.explanations)

    def __iter__(self):
        return iter(self.explanations)


def batch_explain(forest: Forest, ds: Dataset | np.ndarray, ids: Sequence[str] | None = None, n_jobs: int = 1,
                  explainer: ForestExplainer | None = None,
                  progress: Callable[[int, int], None] | None = None) -> BatchExplanation:
    """Explain every row of ``ds`` in order.

    A row that fails is listed in ``failures`` and the batch carries on.
    Rows are independent, so ``n_jobs > 1`` spreads them over threads.
    """
    t0 = time.perf_counter()
    explainer = explainer or ForestExplainer(forest)
    start_evals = explainer.evaluations
    X = forest.matrix(ds)
    if ids is None:
        ids = [str(k) for k in ds.keys] if isinstance(ds, Dataset) else [str(i) for i in range(len(X))]
    preds = forest.predict(X, n_jobs=n_jobs)
    done = 0
    done_lock = threading.Lock()

    def one(i: int):
        nonlocal done
        try:
            out = explainer.explain_vector(X[i], ids[i], preds[i])
        except Exception as exc:  # reported per row, batch continues
            out = exc
        if progress is not None:
            with done_lock:
                done += 1
                progress(done, len(X))
        return out

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(one, range(len(X))))
    else:
        results = [one(i) for i in range(len(X))]
    batch = BatchExplanation([])
    for i, r in enumerate(results):
        if isinstance(r, Exception):
            batch.failures.append((i, str(ids[i]), f"{type(r).__name__}: {r}"))
        else:
            batch.explanations.append(r)
    batch.elapsed = time.perf_counter() - t0
    batch.coalition_evaluations = explainer.evaluations - start_evals
    log.info("explained %d rows (%d failed) in %.2fs", len(batch.explanations), len(batch.failures),
             batch.elapsed)
    return batch
