"""Hot numeric kernels for tree fitting.

Two interchangeable implementations are provided: a numba ``@njit``
fast path and a vectorized pure-numpy fallback.  The fallback is
selected by setting the environment variable ``TQSREG_NO_NUMBA=1``
(or automatically when numba is not importable).  Both paths apply
the same split rule and tie-breaking, so the fitted trees are
identical either way; only floating-point summation order differs.
"""

from __future__ import annotations

import os

import numpy as np

_NO_NUMBA = os.environ.get("TQSREG_NO_NUMBA", "").lower() in ("1", "true", "yes")


def _best_split_numpy(x, y, min_leaf):
    """Exhaustive best split over all features of ``x`` for squared error.

    Returns (sse, feature, threshold); feature is -1 when no valid
    split exists.  Ties broken by lowest feature index, then lowest
    threshold (first candidate encountered wins under strict '<').
    """
    m, d = x.shape
    best_sse = np.inf
    best_f = -1
    best_thr = 0.0
    for f in range(d):
        order = np.argsort(x[:, f])
        xs = x[order, f]
        ys = y[order]
        c1 = np.cumsum(ys)
        c2 = np.cumsum(ys * ys)
        tot1 = c1[-1]
        tot2 = c2[-1]
        cut = np.nonzero(xs[:-1] < xs[1:])[0]
        if cut.size == 0:
            continue
        nl = cut + 1.0
        nr = m - nl
        ok = (nl >= min_leaf) & (nr >= min_leaf)
        if not np.any(ok):
            continue
        cut = cut[ok]
        nl = nl[ok]
        nr = nr[ok]
        sl = c1[cut]
        s2l = c2[cut]
        sse = (s2l - sl * sl / nl) + ((tot2 - s2l) - (tot1 - sl) ** 2 / nr)
        j = int(np.argmin(sse))
        if sse[j] < best_sse:
            i = int(cut[j])
            thr = 0.5 * (xs[i] + xs[i + 1])
            if thr >= xs[i + 1]:
                # midpoint rounded up to the right value; split on the left one
                thr = xs[i]
            best_sse = float(sse[j])
            best_f = f
            best_thr = float(thr)
    return best_sse, best_f, best_thr


def _best_split_loops(x, y, min_leaf):
    m, d = x.shape
    best_sse = np.inf
    best_f = -1
    best_thr = 0.0
    for f in range(d):
        order = np.argsort(x[:, f])
        s1 = 0.0
        s2 = 0.0
        tot1 = 0.0
        tot2 = 0.0
        for i in range(m):
            v = y[order[i]]
            tot1 += v
            tot2 += v * v
        for i in range(m - 1):
            v = y[order[i]]
            s1 += v
            s2 += v * v
            a = x[order[i], f]
            b = x[order[i + 1], f]
            if a < b:
                nl = i + 1.0
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                sse = (s2 - s1 * s1 / nl) + ((tot2 - s2) - (tot1 - s1) ** 2 / nr)
                if sse < best_sse:
                    thr = 0.5 * (a + b)
                    if thr >= b:
                        thr = a
                    best_sse = sse
                    best_f = f
                    best_thr = thr
    return best_sse, best_f, best_thr


def _tree_predict_numpy(feature, threshold, left, right, value, x):
    out = np.empty(x.shape[0])
    stack = [(0, np.arange(x.shape[0]))]
    while stack:
        node, idx = stack.pop()
        f = feature[node]
        if f < 0:
            out[idx] = value[node]
        else:
            go_left = x[idx, f] <= threshold[node]
            stack.append((left[node], idx[go_left]))
            stack.append((right[node], idx[~go_left]))
    return out


def _tree_predict_loops(feature, threshold, left, right, value, x):
    m = x.shape[0]
    out = np.empty(m)
    for i in range(m):
        node = 0
        while feature[node] >= 0:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


USING_NUMBA = False
if not _NO_NUMBA:
    try:
        from numba import njit

        best_split = njit(cache=True)(_best_split_loops)
        tree_predict = njit(cache=True)(_tree_predict_loops)
        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass

if not USING_NUMBA:
    best_split = _best_split_numpy
    tree_predict = _tree_predict_numpy
