"""Feed-forward binary classifier: ReLU hidden layers, one sigmoid output.

Trained on mean binary cross-entropy with mini-batch gradient steps scaled
by Adam moment estimates.
"""
from __future__ import annotations

import numpy as np

from ..errors import NonFiniteLoss
from .tree import _check_xy

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def layer_names(n_layers):
    return [(f"W{i}", f"b{i}") for i in range(n_layers)]


def param_count(d, hidden):
    widths = [d, *hidden, 1]
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def init_params(d, hidden, rng):
    """Glorot-uniform weights, zero biases."""
    widths = [d, *hidden, 1]
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[f"W{i}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    return params


def zero_params(d, hidden):
    widths = [d, *hidden, 1]
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"W{i}"] = np.zeros((fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    return params


def _n_layers(params):
    return sum(1 for k in params if k.startswith("W"))


def sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logits(params, X):
    h = np.asarray(X, dtype=np.float64)
    n = _n_layers(params)
    for i in range(n - 1):
        h = np.maximum(h @ params[f"W{i}"] + params[f"b{i}"], 0.0)
    return (h @ params[f"W{n - 1}"] + params[f"b{n - 1}"])[:, 0]


def forward(params, X):
    return sigmoid(logits(params, X))


def loss_and_grad(params, X, y):
    """Mean binary cross-entropy and its gradient w.r.t. every parameter."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = _n_layers(params)
    acts = [X]
    pre = []
    h = X
    for i in range(n):
        z = h @ params[f"W{i}"] + params[f"b{i}"]
        pre.append(z)
        h = np.maximum(z, 0.0) if i < n - 1 else z
        acts.append(h)
    z = pre[-1][:, 0]
    # softplus(z) - y*z, computed stably
    loss = float(np.mean(np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z))) - y * z))

    m = X.shape[0]
    delta = ((sigmoid(z) - y) / m)[:, None]
    grads = {}
    for i in range(n - 1, -1, -1):
        grads[f"W{i}"] = acts[i].T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[f"W{i}"].T) * (pre[i - 1] > 0)
    return loss, grads


def train_mlp(X, y, *, hidden=(11, 11, 11), epochs=50, learning_rate=0.01, batch_size=32, seed=0):
    X, y = _check_xy(X, y)
    rng = np.random.default_rng(seed)
    params = init_params(X.shape[1], hidden, rng)
    n = X.shape[0]
    # Adam moment estimates
    m1 = {k: np.zeros_like(v) for k, v in params.items()}
    m2 = {k: np.zeros_like(v) for k, v in params.items()}
    step = 0
    loss = float("nan")
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            b = perm[start : start + batch_size]
            loss, grads = loss_and_grad(params, X[b], y[b])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss diverged to {loss}")
            step += 1
            c1 = 1.0 - ADAM_BETA1**step
            c2 = 1.0 - ADAM_BETA2**step
            for k, g in grads.items():
                m1[k] = ADAM_BETA1 * m1[k] + (1.0 - ADAM_BETA1) * g
                m2[k] = ADAM_BETA2 * m2[k] + (1.0 - ADAM_BETA2) * g * g
                params[k] -= learning_rate * (m1[k] / c1) / (np.sqrt(m2[k] / c2) + ADAM_EPS)
    return params, loss


def pack(params):
    """Flatten layer parameters for the fused forward kernel.

    Returns ``(flat, widths)`` with each layer stored as its weight matrix
    (row-major, fan_in x fan_out) followed by its bias.
    """
    n = _n_layers(params)
    widths = [params["W0"].shape[0]] + [params[f"W{i}"].shape[1] for i in range(n)]
    flat = np.concatenate(
        [np.concatenate([params[f"W{i}"].ravel(), params[f"b{i}"]]) for i in range(n)]
    )
    return np.ascontiguousarray(flat), np.asarray(widths, dtype=np.int64)
