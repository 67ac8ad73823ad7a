"""Fully connected ReLU networks with hand-written reverse mode.

Weights use the ``(fan_in, fan_out)`` layout, so a layer computes
``h @ W + b``. Hidden layers apply ReLU; the output layer is linear.
"""

import numpy as np


def init_params(sizes, generator):
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W = generator.uniform(-bound, bound, size=(fan_in, fan_out))
        b = generator.uniform(-bound, bound, size=fan_out)
        params.append((W, b))
    return params


def n_params(sizes):
    return sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))


def flatten(params):
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in params])


def unflatten(vec, sizes):
    params, pos = [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = vec[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = vec[pos:pos + fan_out]
        pos += fan_out
        params.append((W.copy(), b.copy()))
    return params


def forward(params, X):
    """Return the output and a cache of (layer inputs, pre-activations)."""
    inputs, pre = [], []
    h = X
    last = len(params) - 1
    for i, (W, b) in enumerate(params):
        inputs.append(h)
        a = h @ W + b
        if i < last:
            pre.append(a)
            h = np.maximum(a, 0.0)
        else:
            h = a
    return h, (inputs, pre)


def backward(params, cache, grad_out):
    """Vector-Jacobian product: gradients for each (W, b) and for the input."""
    inputs, pre = cache
    grads = [None] * len(params)
    G = grad_out
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        grads[i] = (inputs[i].T @ G, G.sum(axis=0))
        G = G @ W.T
        if i > 0:
            G = G * (pre[i - 1] > 0.0)
    return grads, G


def min_preactivation_margin(params, X):
    """Smallest |pre-activation| over hidden units; ReLU kinks sit at zero."""
    _, (_, pre) = forward(params, X)
    if not pre:
        return np.inf
    return float(min(np.abs(a).min() for a in pre))


def input_jacobian(params, X):
    """Per-sample Jacobians of the network output, shape (n, out, d)."""
    _, (_, pre) = forward(params, X)
    n, d = X.shape
    F = np.broadcast_to(np.eye(d), (n, d, d))
    for (W, _), a in zip(params[:-1], pre):
        F = np.einsum("io,nid->nod", W, F) * (a > 0.0)[:, :, None]
    W_last = params[-1][0]
    return np.einsum("io,nid->nod", W_last, F)


def jacobian_penalty(params, X, target=1.0):
    """Mean of (||J(x)||_F - target)^2 over rows of ``X`` and its weight gradients.

    Bias gradients are identically zero: with the ReLU pattern fixed the
    Jacobian does not depend on them.
    """
    _, (_, pre) = forward(params, X)
    n, d = X.shape
    masks = [(a > 0.0)[:, :, None] for a in pre]
    F = [np.broadcast_to(np.eye(d), (n, d, d))]
    for (W, _), m in zip(params[:-1], masks):
        F.append(np.einsum("io,nid->nod", W, F[-1]) * m)
    W_last = params[-1][0]
    J = np.einsum("io,nid->nod", W_last, F[-1])
    norms = np.sqrt(np.einsum("nod,nod->n", J, J))
    value = float(np.mean((norms - target) ** 2))
    safe = np.where(norms > 0.0, norms, 1.0)
    R = (2.0 / n) * ((norms - target) / safe)[:, None, None] * J
    R = np.where(norms[:, None, None] > 0.0, R, 0.0)
    grads = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        W = params[i][0]
        # J = ... M_i F_i with M_i = W_i^T, so dP/dW_i = sum_n F_i R^T
        grads[i] = (np.einsum("nid,nod->io", F[i], R), np.zeros_like(params[i][1]))
        if i > 0:
            R = np.einsum("io,nod->nid", W, R) * masks[i - 1]
    return value, grads
