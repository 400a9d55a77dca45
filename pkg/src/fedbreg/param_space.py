"""Flat parameter vectors and named deterministic random streams.

Every model, prior mean, and server state in this package is a 1-D float64
numpy array.  Arrays handed across module boundaries are frozen (read-only)
so that no component can mutate another's state in place; computations copy.

Randomness is never drawn from global numpy state.  Each consumer owns an
``RngStream`` keyed by ``(seed, stream_id)``; identical keys and call
sequences reproduce identical outputs on every platform because the
underlying PCG64 bit stream is fully specified by numpy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "RngStream",
    "as_params",
    "freeze",
    "linear_combine",
    "norm_sq",
    "seeded_init",
]


def freeze(values: np.ndarray) -> np.ndarray:
    """Mark ``values`` read-only and return it (no copy)."""
    values.flags.writeable = False
    return values


def as_params(values: Iterable[float] | np.ndarray, *, copy: bool = True) -> np.ndarray:
    """Coerce to a frozen 1-D float64 parameter vector.

    Rejects non-finite entries; every public operation in this package
    maintains the all-finite invariant, so it is enforced at the boundary.
    """
    arr = np.array(values, dtype=np.float64, copy=copy)
    if arr.ndim != 1:
        raise ValueError(f"parameter vector must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ValueError(f"non-finite parameter at coordinate {bad}: {arr[bad]!r}")
    return freeze(arr)


def linear_combine(terms: Sequence[tuple[float, np.ndarray]]) -> np.ndarray:
    """Return sum of coefficient * vector over ``terms``.

    All vectors must share one dimension; the result is a fresh frozen array.
    Pure float64 arithmetic, so integer-representable inputs combine exactly.
    """
    if len(terms) == 0:
        raise ValueError("linear_combine requires at least one (coefficient, vector) term")
    dim = terms[0][1].shape[0] if terms[0][1].ndim == 1 else -1
    out = np.zeros(dim if dim >= 0 else 0, dtype=np.float64)
    for coeff, vec in terms:
        if vec.ndim != 1 or vec.shape[0] != dim:
            raise ValueError(
                f"dimension mismatch in linear_combine: expected {dim}, got {vec.shape}"
            )
        out += float(coeff) * vec
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise ValueError(f"non-finite result at coordinate {bad} in linear_combine")
    return freeze(out)


def norm_sq(vec: np.ndarray) -> float:
    """Squared Euclidean norm as a Python float."""
    v = np.asarray(vec, dtype=np.float64)
    return float(np.dot(v, v))


@dataclass
class RngStream:
    """Deterministic random stream derived from ``(seed, stream_id)``.

    Uses ``SeedSequence(entropy=seed, spawn_key=(stream_id,))`` feeding PCG64,
    so distinct stream ids under one experiment seed are statistically
    independent and their draw order is isolated from one another.
    """

    seed: int
    stream_id: int
    gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.stream_id < 0:
            raise ValueError(f"stream_id must be non-negative, got {self.stream_id}")
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.gen = np.random.Generator(np.random.PCG64(seq))


# Stream id layout used by the experiment driver.  Kept here so every module
# that builds an RngStream agrees on the map.
STREAM_SERVER = 0
STREAM_DATA = 1
STREAM_PARTITION = 2
STREAM_INIT = 3
STREAM_CLIENT_BASE = 10


def client_stream_id(client_id: int) -> int:
    return STREAM_CLIENT_BASE + client_id


def seeded_init(
    dim: int,
    stream: RngStream,
    scheme: str = "zeros",
    *,
    low: float = -0.05,
    high: float = 0.05,
    sigma: float = 0.05,
) -> np.ndarray:
    """Draw an initial parameter vector from ``stream``.

    scheme: ``zeros`` | ``uniform`` (on [low, high)) | ``normal`` (mean 0,
    standard deviation sigma).
    """
    if dim <= 0:
        raise ValueError(f"dim must be positive, got {dim}")
    if scheme == "zeros":
        out = np.zeros(dim, dtype=np.float64)
    elif scheme == "uniform":
        if not (high > low):
            raise ValueError(f"uniform init requires high > low, got low={low}, high={high}")
        out = stream.gen.uniform(low, high, size=dim)
    elif scheme == "normal":
        if not (sigma > 0):
            raise ValueError(f"normal init requires sigma > 0, got {sigma}")
        out = sigma * stream.gen.standard_normal(dim)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}; expected zeros, uniform, or normal")
    return freeze(out)
