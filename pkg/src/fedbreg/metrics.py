"""Evaluation: per-client tests, global tests, per-class loss deviation.

local_test scores each client's evaluation model on that client's own test
shard and aggregates with data-count weights.  global_test scores one model
on the pooled test set.  loss_deviation builds, per client i and class c,

    L[i, c]  mean loss of client i's model on ITS OWN test rows of class c
    G[i, c]  mean loss of client i's model on the POOLED test rows of class c

and centers both against their across-client weighted means.  Weights are
chosen so that the weighted deviations sum to zero per class exactly: L uses
per-(client, class) test counts, G uses each client's share of the pooled
test set.  A client with no class-c rows gets L[i, c] = 0 with zero weight
(its deviation is minus the class mean); a class absent from the entire
federation is flagged in ``federation_missing`` and its column stays zero
rather than NaN.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import models

__all__ = ["EvalReport", "LossDeviation", "global_test", "local_test", "loss_deviation"]


@dataclass
class LossDeviation:
    local_matrix: np.ndarray        # (N, C) L[i, c]
    global_matrix: np.ndarray       # (N, C) G[i, c]
    local_weights: np.ndarray       # (N, C) per-class test counts
    client_weights: np.ndarray      # (N,)  pooled-share weights, sum 1
    local_mean: np.ndarray          # (C,)
    global_mean: np.ndarray         # (C,)
    local_deviation: np.ndarray     # (N, C) L - local_mean
    global_deviation: np.ndarray    # (N, C) G - global_mean
    federation_missing: np.ndarray  # (C,) bool; class absent from pooled test set


@dataclass
class EvalReport:
    round_index: int
    client_accuracy: np.ndarray
    client_loss: np.ndarray
    client_weight: np.ndarray
    personalized_accuracy: float
    personalized_loss: float
    global_accuracy: float
    global_loss: float
    deviation: LossDeviation | None = None


def _score(spec: models.ModelSpec, params: np.ndarray, features, labels, rows) -> tuple[float, float]:
    batch = models.Batch(features[rows], labels[rows])
    acc = float(np.mean(models.predict(spec, params, batch.inputs) == batch.labels))
    return acc, models.forward_loss(spec, params, batch)


def local_test(
    spec: models.ModelSpec,
    client_params: Sequence[np.ndarray],
    features: np.ndarray,
    labels: np.ndarray,
    test_indices: Sequence[np.ndarray],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-client (accuracy, loss, weight) on each client's own test shard.

    Clients with empty shards are excluded: they get NaN scores and zero
    weight, a warning is emitted, and the remaining weights renormalize.
    """
    if len(client_params) != len(test_indices):
        raise ValueError(
            f"got {len(client_params)} parameter vectors but {len(test_indices)} test shards"
        )
    n = len(client_params)
    acc = np.full(n, np.nan)
    loss = np.full(n, np.nan)
    weight = np.zeros(n)
    for i, (params, rows) in enumerate(zip(client_params, test_indices)):
        if rows.size == 0:
            warnings.warn(f"client {i} has an empty test shard; excluded from local_test")
            continue
        acc[i], loss[i] = _score(spec, params, features, labels, rows)
        weight[i] = rows.size
    total = weight.sum()
    if total <= 0:
        raise ValueError("every client has an empty test shard")
    return acc, loss, weight / total


def weighted_aggregate(values: np.ndarray, weights: np.ndarray) -> float:
    """Weighted mean ignoring zero-weight (NaN-scored) entries."""
    mask = weights > 0
    return float(np.sum(values[mask] * weights[mask]))


def global_test(
    spec: models.ModelSpec,
    params: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    pool: np.ndarray,
) -> tuple[float, float]:
    """(accuracy, loss) of one model on the pooled test rows."""
    if pool.size == 0:
        raise ValueError("global test pool is empty")
    return _score(spec, params, features, labels, pool)


def loss_deviation(
    spec: models.ModelSpec,
    client_params: Sequence[np.ndarray],
    features: np.ndarray,
    labels: np.ndarray,
    test_indices: Sequence[np.ndarray],
    num_classes: int,
) -> LossDeviation:
    n = len(client_params)
    if n == 0:
        raise ValueError("loss_deviation needs at least one client")
    pool = np.concatenate([np.asarray(t, dtype=np.int64) for t in test_indices])
    if pool.size == 0:
        raise ValueError("pooled test set is empty")
    pool_labels = labels[pool]

    local = np.zeros((n, num_classes))
    glob = np.zeros((n, num_classes))
    local_w = np.zeros((n, num_classes))
    missing = np.ones(num_classes, dtype=bool)

    pool_rows_by_class = [pool[pool_labels == c] for c in range(num_classes)]
    for c in range(num_classes):
        if pool_rows_by_class[c].size:
            missing[c] = False

    for i, params in enumerate(client_params):
        own = np.asarray(test_indices[i], dtype=np.int64)
        own_labels = labels[own]
        for c in range(num_classes):
            own_c = own[own_labels == c]
            if own_c.size:
                batch = models.Batch(features[own_c], labels[own_c])
                local[i, c] = models.forward_loss(spec, params, batch)
                local_w[i, c] = own_c.size
            if pool_rows_by_class[c].size:
                rows = pool_rows_by_class[c]
                batch = models.Batch(features[rows], labels[rows])
                glob[i, c] = models.forward_loss(spec, params, batch)

    client_w = np.array([t.size for t in test_indices], dtype=np.float64)
    client_w /= client_w.sum()

    local_mean = np.zeros(num_classes)
    for c in range(num_classes):
        col_total = local_w[:, c].sum()
        if col_total > 0:
            local_mean[c] = float(np.dot(local_w[:, c] / col_total, local[:, c]))
    global_mean = client_w @ glob
    global_mean[missing] = 0.0

    local_dev = local - local_mean
    global_dev = glob - global_mean
    local_dev[:, missing] = 0.0
    global_dev[:, missing] = 0.0
    return LossDeviation(
        local_matrix=local,
        global_matrix=glob,
        local_weights=local_w,
        client_weights=client_w,
        local_mean=local_mean,
        global_mean=global_mean,
        local_deviation=local_dev,
        global_deviation=global_dev,
        federation_missing=missing,
    )
