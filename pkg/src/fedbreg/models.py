"""Prediction models over flat parameter vectors.

Two model kinds share one interface:

    mclr  multinomial logistic regression; params [W(d*C) row-major, b(C)]
    dnn   one hidden leaky-ReLU layer; params [W1(d*H), b1(H), W2(H*C), b2(C)]

All losses are the mean softmax cross-entropy over a batch, computed with
log-sum-exp shifting.  ``gradient`` dispatches to the active kernel backend;
``fd_gradient`` is a deliberately independent central-difference probe that
only ever calls ``forward_loss``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backend

__all__ = ["Batch", "ModelSpec", "fd_gradient", "forward_loss", "gradient", "predict"]

KINDS = ("mclr", "dnn")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int = 100
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.input_dim < 1 or self.num_classes < 1:
            raise ValueError(
                f"input_dim and num_classes must be >= 1, got {self.input_dim}, {self.num_classes}"
            )
        if self.kind == "dnn" and self.hidden_dim < 1:
            raise ValueError(f"hidden_dim must be >= 1, got {self.hidden_dim}")

    @property
    def param_dim(self) -> int:
        d, c, h = self.input_dim, self.num_classes, self.hidden_dim
        if self.kind == "mclr":
            return d * c + c
        return d * h + h + h * c + c


@dataclass
class Batch:
    """A minibatch view: float64 inputs (n, d) and int64 labels (n,)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError(f"batch inputs must be 2-D, got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError(
                f"batch labels shape {self.labels.shape} does not match "
                f"{self.inputs.shape[0]} input rows"
            )
        if self.inputs.shape[0] == 0:
            raise ValueError("batch must contain at least one example")
        if np.any(self.labels < 0):
            bad = int(np.flatnonzero(self.labels < 0)[0])
            raise ValueError(f"negative label at row {bad}: {self.labels[bad]}")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def _check_params(spec: ModelSpec, params: np.ndarray) -> np.ndarray:
    p = np.asarray(params, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] != spec.param_dim:
        raise ValueError(
            f"parameter vector has shape {p.shape}, expected ({spec.param_dim},) for {spec.kind}"
        )
    return p


def _check_labels(spec: ModelSpec, labels: np.ndarray):
    if labels.size and int(labels.max()) >= spec.num_classes:
        bad = int(np.flatnonzero(labels >= spec.num_classes)[0])
        raise ValueError(
            f"label out of range at row {bad}: {labels[bad]} >= num_classes={spec.num_classes}"
        )


def _logits(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    d, c = spec.input_dim, spec.num_classes
    if inputs.ndim != 2 or inputs.shape[1] != d:
        raise ValueError(f"inputs have shape {inputs.shape}, expected (n, {d})")
    if spec.kind == "mclr":
        w = params[: d * c].reshape(d, c)
        return inputs @ w + params[d * c :]
    h = spec.hidden_dim
    s1, s2, s3 = d * h, d * h + h, d * h + h + h * c
    z1 = inputs @ params[:s1].reshape(d, h) + params[s1:s2]
    act = np.where(z1 > 0, z1, spec.leaky_slope * z1)
    return act @ params[s2:s3].reshape(h, c) + params[s3:]


def forward_loss(spec: ModelSpec, params: np.ndarray, batch: Batch) -> float:
    """Mean cross-entropy of the batch under the model."""
    p = _check_params(spec, params)
    _check_labels(spec, batch.labels)
    logits = _logits(spec, p, batch.inputs)
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    picked = logits[np.arange(len(batch)), batch.labels]
    return float(np.mean(lse - picked))


def gradient(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Exact gradient of forward_loss in the flat parameter layout."""
    p = _check_params(spec, params)
    _check_labels(spec, batch.labels)
    p = np.ascontiguousarray(p)
    if spec.kind == "mclr":
        return backend.mclr_grad(p, batch.inputs, batch.labels, spec.num_classes)
    return backend.dnn_grad(
        p, batch.inputs, batch.labels, spec.hidden_dim, spec.num_classes, spec.leaky_slope
    )


def predict(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    p = _check_params(spec, params)
    return np.argmax(_logits(spec, p, np.asarray(inputs, dtype=np.float64)), axis=1)


def fd_gradient(
    spec: ModelSpec,
    params: np.ndarray,
    batch: Batch,
    coords: np.ndarray | None = None,
    step: float = 1e-5,
) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient estimate on selected coordinates.

    Independent check path: touches forward_loss only, never the kernels.
    Returns (coords, estimates).
    """
    p = np.array(params, dtype=np.float64, copy=True)
    if coords is None:
        coords = np.arange(p.shape[0])
    coords = np.asarray(coords, dtype=np.int64)
    est = np.empty(coords.shape[0])
    for k, j in enumerate(coords):
        orig = p[j]
        p[j] = orig + step
        hi = forward_loss(spec, p, batch)
        p[j] = orig - step
        lo = forward_loss(spec, p, batch)
        p[j] = orig
        est[k] = (hi - lo) / (2.0 * step)
    return coords, est
