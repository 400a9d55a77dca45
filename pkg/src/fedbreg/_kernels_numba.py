"""Numba-compiled minibatch gradient kernels.

Same contracts and parameter layouts as ``_kernels_numpy``; see that module.
Matmuls go through np.dot (BLAS under numba) on contiguous operands, the
softmax and scatter stages are fused loops.  Compilation is lazy with an
on-disk cache, so the first call per signature pays the jit cost once.
"""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _softmax_delta_inplace(logits, labels):
    # logits is overwritten with (softmax - onehot) / n.
    n, c = logits.shape
    for i in range(n):
        mx = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > mx:
                mx = logits[i, j]
        ssum = 0.0
        for j in range(c):
            v = np.exp(logits[i, j] - mx)
            logits[i, j] = v
            ssum += v
        for j in range(c):
            logits[i, j] /= ssum
        logits[i, labels[i]] -= 1.0
        for j in range(c):
            logits[i, j] /= n


@nb.njit(cache=True)
def mclr_grad(params, inputs, labels, num_classes):
    n, d = inputs.shape
    wsize = d * num_classes
    w = np.ascontiguousarray(params[:wsize]).reshape(d, num_classes)
    logits = np.dot(inputs, w)
    for i in range(n):
        for j in range(num_classes):
            logits[i, j] += params[wsize + j]
    _softmax_delta_inplace(logits, labels)
    grad = np.empty(params.shape[0])
    gw = np.dot(np.ascontiguousarray(inputs.T), logits)
    grad[:wsize] = gw.ravel()
    for j in range(num_classes):
        acc = 0.0
        for i in range(n):
            acc += logits[i, j]
        grad[wsize + j] = acc
    return grad


@nb.njit(cache=True)
def dnn_grad(params, inputs, labels, hidden_dim, num_classes, leaky_slope):
    n, d = inputs.shape
    s1 = d * hidden_dim
    s2 = s1 + hidden_dim
    s3 = s2 + hidden_dim * num_classes
    w1 = np.ascontiguousarray(params[:s1]).reshape(d, hidden_dim)
    w2 = np.ascontiguousarray(params[s2:s3]).reshape(hidden_dim, num_classes)

    z1 = np.dot(inputs, w1)
    act = np.empty_like(z1)
    for i in range(n):
        for h in range(hidden_dim):
            z = z1[i, h] + params[s1 + h]
            z1[i, h] = z
            act[i, h] = z if z > 0 else leaky_slope * z

    logits = np.dot(act, w2)
    for i in range(n):
        for j in range(num_classes):
            logits[i, j] += params[s3 + j]
    _softmax_delta_inplace(logits, labels)

    grad = np.empty(params.shape[0])
    gw2 = np.dot(np.ascontiguousarray(act.T), logits)
    grad[s2:s3] = gw2.ravel()
    for j in range(num_classes):
        acc = 0.0
        for i in range(n):
            acc += logits[i, j]
        grad[s3 + j] = acc

    dact = np.dot(logits, np.ascontiguousarray(w2.T))
    for i in range(n):
        for h in range(hidden_dim):
            if z1[i, h] <= 0:
                dact[i, h] *= leaky_slope
    gw1 = np.dot(np.ascontiguousarray(inputs.T), dact)
    grad[:s1] = gw1.ravel()
    for h in range(hidden_dim):
        acc = 0.0
        for i in range(n):
            acc += dact[i, h]
        grad[s1 + h] = acc
    return grad
