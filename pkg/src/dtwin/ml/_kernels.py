"""Hot inner loops: Gini split search, forest traversal, Pegasos epochs,
MLP inference.

Each kernel exists twice: a numba ``@njit`` version and a pure-numpy one.
The numba versions are used unless numba is missing or ``DTW_NUMBA=0``.
Both versions are importable by name (``*_nb`` / ``*_np``) so tests and
``benchmarks/bench_kernels.py`` can compare them directly.
"""
from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("DTW_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)


# --------------------------------------------------------------------------
# split search
#
# Score to maximise is (l0^2 + l1^2)/nl + (r0^2 + r1^2)/nr, which is the
# weighted Gini impurity of the children up to an affine transform.
# Samples with x <= threshold go left.


def best_split_np(X, y, idx, features):
    best_f = -1
    best_thr = 0.0
    best_score = -np.inf
    yn = y[idx]
    n = idx.shape[0]
    tot1 = int(yn.sum())
    tot0 = n - tot1
    for f in features:
        col = X[idx, f]
        order = np.argsort(col, kind="quicksort")
        xs = col[order]
        ys = yn[order]
        c1 = np.cumsum(ys)[:-1]
        nl = np.arange(1, n, dtype=np.int64)
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        l1 = c1.astype(np.float64)
        l0 = (nl - c1).astype(np.float64)
        r1 = (tot1 - c1).astype(np.float64)
        r0 = (tot0 - (nl - c1)).astype(np.float64)
        nlf = nl.astype(np.float64)
        nrf = (n - nl).astype(np.float64)
        score = (l0 * l0 + l1 * l1) / nlf + (r0 * r0 + r1 * r1) / nrf
        score = np.where(valid, score, -np.inf)
        k = int(np.argmax(score))
        if score[k] > best_score:
            best_score = score[k]
            best_f = int(f)
            a = xs[k]
            b = xs[k + 1]
            thr = (a + b) / 2.0
            if thr >= b:
                thr = a
            best_thr = thr
    return best_f, best_thr, best_score


def forest_votes_np(X, feature, threshold, left, right, value, roots):
    n = X.shape[0]
    votes = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    for r in roots:
        node = np.full(n, r, dtype=np.int64)
        while True:
            f = feature[node]
            inner = f >= 0
            if not inner.any():
                break
            fi = np.where(inner, f, 0)
            go_left = X[rows, fi] <= threshold[node]
            nxt = np.where(go_left, left[node], right[node])
            node = np.where(inner, nxt, node)
        votes += value[node]
    return votes


def pegasos_np(Xa, ypm, order, lam):
    n, d = Xa.shape
    alpha = np.zeros(n, dtype=np.int64)
    v = np.zeros(d, dtype=np.float64)
    for t in range(1, order.shape[0] + 1):
        i = order[t - 1]
        if t == 1:
            margin = 0.0
        else:
            s = 0.0
            row = Xa[i]
            for j in range(d):
                s += v[j] * row[j]
            margin = ypm[i] * s / (lam * (t - 1))
        if margin < 1.0:
            alpha[i] += 1
            v += ypm[i] * Xa[i]
    return alpha, v


def mlp_scores_np(X, flat, widths):
    h = X
    off = 0
    last = widths.shape[0] - 2
    for layer in range(widths.shape[0] - 1):
        a, b = int(widths[layer]), int(widths[layer + 1])
        W = flat[off : off + a * b].reshape(a, b)
        off += a * b
        bias = flat[off : off + b]
        off += b
        h = h @ W + bias
        if layer < last:
            h = np.maximum(h, 0.0)
    z = h[:, 0]
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --------------------------------------------------------------------------
# numba versions

if HAVE_NUMBA:

    @njit(cache=True)
    def best_split_nb(X, y, idx, features):
        n = idx.shape[0]
        best_f = -1
        best_thr = 0.0
        best_score = -np.inf
        tot1 = 0
        for i in range(n):
            tot1 += y[idx[i]]
        tot0 = n - tot1
        col = np.empty(n, dtype=np.float64)
        for fpos in range(features.shape[0]):
            f = features[fpos]
            for i in range(n):
                col[i] = X[idx[i], f]
            order = np.argsort(col)
            c1 = 0
            for k in range(n - 1):
                c1 += y[idx[order[k]]]
                a = col[order[k]]
                b = col[order[k + 1]]
                if not (b > a):
                    continue
                nl = k + 1
                l1 = float(c1)
                l0 = float(nl - c1)
                r1 = float(tot1 - c1)
                r0 = float(tot0 - (nl - c1))
                score = (l0 * l0 + l1 * l1) / float(nl) + (r0 * r0 + r1 * r1) / float(n - nl)
                if score > best_score:
                    best_score = score
                    best_f = f
                    thr = (a + b) / 2.0
                    if thr >= b:
                        thr = a
                    best_thr = thr
        return best_f, best_thr, best_score

    @njit(cache=True)
    def forest_votes_nb(X, feature, threshold, left, right, value, roots):
        n = X.shape[0]
        votes = np.zeros(n, dtype=np.int64)
        for i in range(n):
            acc = 0
            for r in roots:
                node = r
                while feature[node] >= 0:
                    if X[i, feature[node]] <= threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                acc += value[node]
            votes[i] = acc
        return votes

    @njit(cache=True)
    def pegasos_nb(Xa, ypm, order, lam):
        n, d = Xa.shape
        alpha = np.zeros(n, dtype=np.int64)
        v = np.zeros(d, dtype=np.float64)
        for t in range(1, order.shape[0] + 1):
            i = order[t - 1]
            if t == 1:
                margin = 0.0
            else:
                s = 0.0
                for j in range(d):
                    s += v[j] * Xa[i, j]
                margin = ypm[i] * s / (lam * (t - 1))
            if margin < 1.0:
                alpha[i] += 1
                for j in range(d):
                    v[j] += ypm[i] * Xa[i, j]
        return alpha, v

    @njit(cache=True)
    def mlp_scores_nb(X, flat, widths):
        n = X.shape[0]
        n_layers = widths.shape[0] - 1
        wmax = 0
        for k in range(widths.shape[0]):
            if widths[k] > wmax:
                wmax = widths[k]
        cur = np.empty(wmax, dtype=np.float64)
        nxt = np.empty(wmax, dtype=np.float64)
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            for j in range(widths[0]):
                cur[j] = X[i, j]
            off = 0
            for layer in range(n_layers):
                a = widths[layer]
                b = widths[layer + 1]
                for q in range(b):
                    nxt[q] = 0.0
                for p in range(a):
                    xp = cur[p]
                    base = off + p * b
                    for q in range(b):
                        nxt[q] += xp * flat[base + q]
                off += a * b
                for q in range(b):
                    v = nxt[q] + flat[off + q]
                    if layer < n_layers - 1 and v < 0.0:
                        v = 0.0
                    cur[q] = v
                off += b
            z = cur[0]
            if z >= 0:
                out[i] = 1.0 / (1.0 + np.exp(-z))
            else:
                ez = np.exp(z)
                out[i] = ez / (1.0 + ez)
        return out

else:  # pragma: no cover
    mlp_scores_nb = mlp_scores_np
    best_split_nb = best_split_np
    forest_votes_nb = forest_votes_np
    pegasos_nb = pegasos_np


if USE_NUMBA:
    best_split = best_split_nb
    forest_votes = forest_votes_nb
    pegasos = pegasos_nb
    mlp_scores = mlp_scores_nb
else:
    best_split = best_split_np
    forest_votes = forest_votes_np
    pegasos = pegasos_np
    mlp_scores = mlp_scores_np

BACKEND = "numba" if USE_NUMBA else "numpy"
