"""Pure-numpy minibatch gradient kernels.

These are the hot inner-loop functions of the whole simulator: one call per
prox step per local iteration per client per round.  The numba twins in
``_kernels_numba`` implement bit-for-bit the same math; ``backend`` picks one
pair at import time.  Both operate on the flat parameter layouts documented
in ``models``.

Gradients are of the mean cross-entropy (softmax negative log-likelihood)
over the batch.
"""

from __future__ import annotations

import numpy as np


def _softmax_delta(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """(softmax(logits) - onehot(labels)) / n, the shared backprop seed."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    p[np.arange(n), labels] -= 1.0
    p /= n
    return p


def mclr_grad(
    params: np.ndarray, inputs: np.ndarray, labels: np.ndarray, num_classes: int
) -> np.ndarray:
    """Gradient for the linear softmax model; layout [W(d*C) row-major, b(C)]."""
    n, d = inputs.shape
    wsize = d * num_classes
    w = params[:wsize].reshape(d, num_classes)
    b = params[wsize:]
    delta = _softmax_delta(inputs @ w + b, labels)
    grad = np.empty_like(params)
    grad[:wsize] = (inputs.T @ delta).ravel()
    grad[wsize:] = delta.sum(axis=0)
    return grad


def dnn_grad(
    params: np.ndarray,
    inputs: np.ndarray,
    labels: np.ndarray,
    hidden_dim: int,
    num_classes: int,
    leaky_slope: float,
) -> np.ndarray:
    """Gradient for the one-hidden-layer leaky-ReLU model.

    Layout [W1(d*H) row-major, b1(H), W2(H*C) row-major, b2(C)].
    """
    n, d = inputs.shape
    s1 = d * hidden_dim
    s2 = s1 + hidden_dim
    s3 = s2 + hidden_dim * num_classes
    w1 = params[:s1].reshape(d, hidden_dim)
    b1 = params[s1:s2]
    w2 = params[s2:s3].reshape(hidden_dim, num_classes)
    b2 = params[s3:]

    z1 = inputs @ w1 + b1
    act = np.where(z1 > 0, z1, leaky_slope * z1)
    delta = _softmax_delta(act @ w2 + b2, labels)

    grad = np.empty_like(params)
    grad[s2:s3] = (act.T @ delta).ravel()
    grad[s3:] = delta.sum(axis=0)
    dact = delta @ w2.T
    dz1 = dact * np.where(z1 > 0, 1.0, leaky_slope)
    grad[:s1] = (inputs.T @ dz1).ravel()
    grad[s1:s2] = dz1.sum(axis=0)
    return grad
