"""Linear SVM trained with Pegasos stochastic subgradient descent.

The bias is learned as the weight of a constant input column. Training is
run in the dual-count form: ``alpha[i]`` counts the steps on which sample
``i`` violated the margin, and the final primal weights are

    w = sum_i alpha[i] * y[i] * x[i] / (lambda * T)

The samples with ``alpha > 0`` are kept as the model's support set, so the
stored model carries both the primal vector used for prediction and the
support vectors it was built from.
"""
from __future__ import annotations

import numpy as np

from . import _kernels
from .tree import _check_xy


def train_svm(X, y, *, lam=1e-3, epochs=20, seed=0):
    X, y = _check_xy(X, y)
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    ypm = (2 * y - 1).astype(np.float64)
    rng = np.random.default_rng(seed)
    if epochs > 0:
        order = np.concatenate([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)
    else:
        order = np.zeros(0, dtype=np.int64)
    T = order.shape[0]
    if T == 0:
        return {
            "weights": np.zeros(d),
            "bias": np.zeros(1),
            "support_vectors": np.zeros((0, d)),
            "dual_coef": np.zeros(0),
        }
    alpha, _ = _kernels.pegasos(Xa, ypm, order, float(lam))
    sv = alpha > 0
    coef = alpha[sv] * ypm[sv] / (lam * T)
    w_aug = coef @ Xa[sv]
    return {
        "weights": np.ascontiguousarray(w_aug[:d]),
        "bias": np.asarray([w_aug[d]]),
        "support_vectors": np.ascontiguousarray(X[sv]),
        "dual_coef": np.ascontiguousarray(coef),
    }


def svm_margin(params, X):
    return np.asarray(X, dtype=np.float64) @ params["weights"] + params["bias"][0]
