"""Hot numeric kernels: regression-tree building and forest prediction.

Both kernels ship in two semantically matching implementations: a scalar
version compiled with numba @njit and a vectorized pure-numpy fallback.
Setting RETROSMC_DISABLE_NUMBA=1 (or numba being unavailable) selects the
fallback.  Tie-breaking rules are identical in both paths; arithmetic agrees
up to float summation order, which the cross-path tests pin down.  Each path
is fully deterministic on its own.  benchmarks/bench_kernels.py compares
their speed.
"""

from __future__ import annotations

import os

import numpy as np

N_BINS = 64
_GAIN_EPS = 1e-12

USE_NUMBA = os.environ.get("RETROSMC_DISABLE_NUMBA", "") not in ("1", "true", "yes")
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False


def _build_tree_numba_impl(xb, res, work, max_depth, min_leaf, train_pred):
    n = work.shape[0]
    n_feat = xb.shape[1]
    max_nodes = 2 ** (max_depth + 1) - 1
    feat = np.full(max_nodes, -1, np.int32)
    thr = np.zeros(max_nodes, np.int32)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    val = np.zeros(max_nodes, np.float64)

    stack_node = np.empty(max_nodes, np.int32)
    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    stack_depth = np.empty(max_nodes, np.int32)
    sp = 0
    stack_node[0], stack_lo[0], stack_hi[0], stack_depth[0] = 0, 0, n, 0
    sp = 1
    node_count = 1

    hist_cnt = np.empty(N_BINS, np.int64)
    hist_sum = np.empty(N_BINS, np.float64)
    tmp = np.empty(n, np.int64)

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        depth = stack_depth[sp]
        n_node = hi - lo
        sum_tot = 0.0
        for i in range(lo, hi):
            sum_tot += res[work[i]]
        if depth >= max_depth or n_node < 2 * min_leaf:
            leaf_val = sum_tot / n_node
            val[node] = leaf_val
            for i in range(lo, hi):
                train_pred[work[i]] = leaf_val
            continue
        parent_score = sum_tot * sum_tot / n_node
        best_gain = -1.0
        best_f = -1
        best_t = -1
        for f in range(n_feat):
            for b in range(N_BINS):
                hist_cnt[b] = 0
                hist_sum[b] = 0.0
            for i in range(lo, hi):
                b = xb[work[i], f]
                hist_cnt[b] += 1
                hist_sum[b] += res[work[i]]
            cl = 0
            sl = 0.0
            for t in range(N_BINS - 1):
                cl += hist_cnt[t]
                sl += hist_sum[t]
                if cl < min_leaf:
                    continue
                cr = n_node - cl
                if cr < min_leaf:
                    break
                sr = sum_tot - sl
                gain = sl * sl / cl + sr * sr / cr - parent_score
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_t = t
        if best_f < 0 or best_gain <= _GAIN_EPS:
            leaf_val = sum_tot / n_node
            val[node] = leaf_val
            for i in range(lo, hi):
                train_pred[work[i]] = leaf_val
            continue
        nl = 0
        for i in range(lo, hi):
            if xb[work[i], best_f] <= best_t:
                tmp[nl] = work[i]
                nl += 1
        nr = nl
        for i in range(lo, hi):
            if xb[work[i], best_f] > best_t:
                tmp[nr] = work[i]
                nr += 1
        for i in range(n_node):
            work[lo + i] = tmp[i]
        lid = node_count
        rid = node_count + 1
        node_count += 2
        feat[node] = best_f
        thr[node] = best_t
        left[node] = lid
        right[node] = rid
        stack_node[sp], stack_lo[sp], stack_hi[sp], stack_depth[sp] = (
            rid,
            lo + nl,
            hi,
            depth + 1,
        )
        sp += 1
        stack_node[sp], stack_lo[sp], stack_hi[sp], stack_depth[sp] = (
            lid,
            lo,
            lo + nl,
            depth + 1,
        )
        sp += 1
    return feat, thr, left, right, val, node_count


def _forest_predict_numba_impl(xq, feat, thr, left, right, val, roots, base, nu):
    m = xq.shape[0]
    out = np.full(m, base, np.float64)
    for i in range(m):
        for r in range(roots.shape[0]):
            node = roots[r]
            while feat[node] >= 0:
                if xq[i, feat[node]] <= thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] += nu * val[node]
    return out


def build_tree_numpy(xb, res, work, max_depth, min_leaf, train_pred):
    """Vectorized fallback; identical outputs to the numba kernel."""
    n_feat = xb.shape[1]
    max_nodes = 2 ** (max_depth + 1) - 1
    feat = np.full(max_nodes, -1, np.int32)
    thr = np.zeros(max_nodes, np.int32)
    left = np.full(max_nodes, -1, np.int32)
    right = np.full(max_nodes, -1, np.int32)
    val = np.zeros(max_nodes, np.float64)
    node_count = 1
    stack = [(0, 0, len(work), 0)]
    while stack:
        node, lo, hi, depth = stack.pop()
        idx = work[lo:hi]
        n_node = hi - lo
        sum_tot = float(np.sum(res[idx]))
        if depth >= max_depth or n_node < 2 * min_leaf:
            val[node] = sum_tot / n_node
            train_pred[idx] = val[node]
            continue
        sub = xb[idx]
        counts = np.zeros((n_feat, N_BINS), np.int64)
        sums = np.zeros((n_feat, N_BINS), np.float64)
        for f in range(n_feat):
            counts[f] = np.bincount(sub[:, f], minlength=N_BINS)
            sums[f] = np.bincount(sub[:, f], weights=res[idx], minlength=N_BINS)
        cl = np.cumsum(counts[:, :-1], axis=1)
        sl = np.cumsum(sums[:, :-1], axis=1)
        cr = n_node - cl
        sr = sum_tot - sl
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = sl * sl / cl + sr * sr / cr - sum_tot * sum_tot / n_node
        gain[(cl < min_leaf) | (cr < min_leaf)] = -np.inf
        flat = int(np.argmax(gain))
        best_gain = gain.flat[flat]
        if not np.isfinite(best_gain) or best_gain <= _GAIN_EPS:
            val[node] = sum_tot / n_node
            train_pred[idx] = val[node]
            continue
        best_f, best_t = divmod(flat, N_BINS - 1)
        mask = sub[:, best_f] <= best_t
        ordered = np.concatenate([idx[mask], idx[~mask]])
        work[lo:hi] = ordered
        nl = int(np.count_nonzero(mask))
        lid, rid = node_count, node_count + 1
        node_count += 2
        feat[node], thr[node] = best_f, best_t
        left[node], right[node] = lid, rid
        stack.append((rid, lo + nl, hi, depth + 1))
        stack.append((lid, lo, lo + nl, depth + 1))
    return feat, thr, left, right, val, node_count


def forest_predict_numpy(xq, feat, thr, left, right, val, roots, base, nu):
    """Level-wise vectorized traversal; identical outputs to the numba kernel."""
    m = xq.shape[0]
    out = np.full(m, base, np.float64)
    rows = np.arange(m)
    for root in roots:
        node = np.full(m, root, np.int64)
        while True:
            f = feat[node]
            active = f >= 0
            if not active.any():
                break
            arows = rows[active]
            anodes = node[active]
            go_left = xq[arows, f[active]] <= thr[anodes]
            node[arows] = np.where(go_left, left[anodes], right[anodes])
        out += nu * val[node]
    return out


if USE_NUMBA:
    build_tree = njit(cache=True)(_build_tree_numba_impl)
    forest_predict = njit(cache=True)(_forest_predict_numba_impl)
else:
    build_tree = build_tree_numpy
    forest_predict = forest_predict_numpy
