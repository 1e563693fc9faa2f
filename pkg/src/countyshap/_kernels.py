"""Compiled inner loops for tree growth and routing.

Trees are flat arrays indexed by node id; ``feature[i] == -1`` marks a leaf.
Rows go left when ``x[feature] < threshold``.
"""
import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True, nogil=True)
def best_split(X, y, w, idx, start, end, features, tol_rel):
    """Best (feature, threshold, reduction) over ``idx[start:end]``.

    ``reduction`` is the drop in weighted variance,
    V(parent) - (W_L V(L) + W_R V(R)) / (W_L + W_R). Features are scanned in the
    given order and thresholds ascending; only a strictly larger reduction
    replaces the incumbent, so ties keep the earlier candidate.
    Returns feature -1 when no split lowers the variance by more than
    ``tol_rel * V(parent)``.
    """
    n = end - start
    W = 0.0
    S = 0.0
    for k in range(start, end):
        i = idx[k]
        W += w[i]
        S += w[i] * y[i]
    mean = S / W
    var = 0.0
    for k in range(start, end):
        i = idx[k]
        d = y[i] - mean
        var += w[i] * d * d
    var /= W

    vals = np.empty(n)
    pw = np.empty(n)
    ps = np.empty(n)
    sw = np.empty(n)
    ss = np.empty(n)
    best_f = -1
    best_thr = 0.0
    best_gain = 0.0
    for fi in range(features.shape[0]):
        f = features[fi]
        for k in range(n):
            vals[k] = X[idx[start + k], f]
        order = np.argsort(vals, kind="mergesort")
        acc_w = 0.0
        acc_s = 0.0
        for r in range(n):
            i = idx[start + order[r]]
            acc_w += w[i]
            acc_s += w[i] * (y[i] - mean)
            pw[r] = acc_w
            ps[r] = acc_s
        acc_w = 0.0
        acc_s = 0.0
        for r in range(n - 1, -1, -1):
            i = idx[start + order[r]]
            acc_w += w[i]
            acc_s += w[i] * (y[i] - mean)
            sw[r] = acc_w
            ss[r] = acc_s
        for r in range(n - 1):
            a = vals[order[r]]
            b = vals[order[r + 1]]
            if not a < b:
                continue
            wl = pw[r]
            wr = sw[r + 1]
            sl = ps[r]
            sr = ss[r + 1]
            # centred sums: the parent term (sl + sr)^2 / W is ~0 but kept for exactness
            gain = (sl * sl / wl + sr * sr / wr - (sl + sr) * (sl + sr) / (wl + wr)) / W
            if gain > best_gain:
                best_gain = gain
                best_f = f
                thr = 0.5 * (a + b)
                if not (a < thr and thr <= b):
                    thr = b
                best_thr = thr
    if best_f < 0 or not best_gain > tol_rel * var:
        return -1, 0.0, 0.0
    return best_f, best_thr, best_gain


@njit(cache=True, nogil=True)
def grow_tree(X, y, w, sample, keys, mtry, min_node_size, max_depth, tol_rel):
    """Grow one regression tree depth-first on the (bootstrap) row list ``sample``.

    ``keys`` holds one row of uniforms per split attempt; the ``mtry`` smallest
    keys pick that node's candidate features.
    """
    n = sample.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    coverage = np.zeros(cap)
    n_rows = np.zeros(cap, dtype=np.int64)

    idx = sample.copy()
    buf = np.empty(n, dtype=np.int64)
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    st_depth[0] = 0
    sp = 1
    count = 1
    attempts = 0
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        depth = st_depth[sp]
        W = 0.0
        S = 0.0
        ymin = np.inf
        ymax = -np.inf
        for k in range(start, end):
            i = idx[k]
            W += w[i]
            S += w[i] * y[i]
            if y[i] < ymin:
                ymin = y[i]
            if y[i] > ymax:
                ymax = y[i]
        value[node] = S / W
        coverage[node] = W
        n_rows[node] = end - start
        if end - start <= min_node_size or ymin == ymax:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue
        cand = np.sort(np.argsort(keys[attempts])[:mtry])
        attempts += 1
        f, thr, red = best_split(X, y, w, idx, start, end, cand, tol_rel)
        if f < 0:
            continue
        nl = 0
        nr = 0
        for k in range(start, end):
            i = idx[k]
            if X[i, f] < thr:
                idx[start + nl] = i
                nl += 1
            else:
                buf[nr] = i
                nr += 1
        for k in range(nr):
            idx[start + nl + k] = buf[k]
        feature[node] = f
        threshold[node] = thr
        left[node] = count
        right[node] = count + 1
        # right pushed first so the left subtree is built first
        st_node[sp] = count + 1
        st_start[sp] = start + nl
        st_end[sp] = end
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = count
        st_start[sp] = start
        st_end[sp] = start + nl
        st_depth[sp] = depth + 1
        sp += 1
        count += 2
    # internal coverage is re-derived bottom-up so parent == left + right exactly
    for node in range(count - 1, -1, -1):
        if feature[node] != LEAF:
            coverage[node] = coverage[left[node]] + coverage[right[node]]
    return (feature[:count].copy(), threshold[:count].copy(), left[:count].copy(),
            right[:count].copy(), value[:count].copy(), coverage[:count].copy(), n_rows[:count].copy())


@njit(cache=True, nogil=True)
def route(feature, threshold, left, right, X):
    """Leaf id reached by every row of ``X``."""
    out = np.empty(X.shape[0], dtype=np.int64)
    for r in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[r, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out


@njit(cache=True, nogil=True)
def accumulate_predictions(feature, threshold, left, right, value, X, out):
    for r in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[r, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] += value[node]
