"""Datasets and non-iid client partitioning.

A Dataset is an in-memory pool of float64 feature rows scaled to [0, 1] with
int64 class labels.  Partitioners slice the pool into per-client train/test
index shards; both are deterministic functions of an RngStream.

Two sources: the classic big-endian IDX image/label file pair, and a
synthetic gaussian-blob generator whose class separation is tunable (0 means
label-independent features, i.e. chance-level is the best any model can do
on fresh draws).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .param_space import RngStream

__all__ = [
    "Dataset",
    "IdxCountMismatchError",
    "IdxFormatError",
    "IdxMagicError",
    "IdxTruncatedError",
    "Partition",
    "PartitionError",
    "load_idx",
    "partition_dirichlet",
    "partition_label_skew",
    "synth_generate",
]

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


class IdxFormatError(ValueError):
    """Malformed IDX file."""


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


class PartitionError(ValueError):
    """A partition draw could not satisfy its constraints."""


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match {self.features.shape[0]} rows"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        lo, hi = float(self.features.min()), float(self.features.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"features must lie in [0, 1], got range [{lo}, {hi}]")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if np.any(self.labels < 0) or np.any(self.labels >= self.num_classes):
            bad = int(np.flatnonzero((self.labels < 0) | (self.labels >= self.num_classes))[0])
            raise ValueError(
                f"label out of range at row {bad}: {self.labels[bad]} "
                f"(num_classes={self.num_classes})"
            )
        self.class_counts = np.bincount(self.labels, minlength=self.num_classes)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class Partition:
    """Per-client train/test index shards into one Dataset."""

    train_indices: list[np.ndarray]
    test_indices: list[np.ndarray]

    def __post_init__(self):
        if len(self.train_indices) != len(self.test_indices):
            raise ValueError(
                f"train/test client counts differ: "
                f"{len(self.train_indices)} vs {len(self.test_indices)}"
            )
        seen: set[int] = set()
        total = 0
        for shard in list(self.train_indices) + list(self.test_indices):
            total += shard.size
            seen.update(int(i) for i in shard)
        if len(seen) != total:
            raise ValueError("partition shards overlap: some index appears twice")

    @property
    def num_clients(self) -> int:
        return len(self.train_indices)


def _read_exact(fh, nbytes: int, what: str, path: str) -> bytes:
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise IdxTruncatedError(
            f"{path}: truncated while reading {what} (wanted {nbytes} bytes, got {len(buf)})"
        )
    return buf


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load a big-endian IDX image/label pair; pixels scale to [0, 1]."""
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(fh, 16, "image header", images_path))
        if magic != IDX_IMAGE_MAGIC:
            raise IdxMagicError(
                f"{images_path}: bad image magic {magic}, expected {IDX_IMAGE_MAGIC}"
            )
        payload = _read_exact(fh, count * rows * cols, f"{count} images", images_path)
    images = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)

    with open(labels_path, "rb") as fh:
        magic, lcount = struct.unpack(">ii", _read_exact(fh, 8, "label header", labels_path))
        if magic != IDX_LABEL_MAGIC:
            raise IdxMagicError(
                f"{labels_path}: bad label magic {magic}, expected {IDX_LABEL_MAGIC}"
            )
        labels = np.frombuffer(_read_exact(fh, lcount, f"{lcount} labels", labels_path), dtype=np.uint8)

    if count != lcount:
        raise IdxCountMismatchError(
            f"image/label count mismatch: {images_path} has {count}, {labels_path} has {lcount}"
        )
    labels64 = labels.astype(np.int64)
    return Dataset(images.astype(np.float64) / 255.0, labels64, int(labels64.max()) + 1)


def synth_generate(
    num_classes: int,
    examples_per_class: int,
    input_dim: int,
    separation: float,
    stream: RngStream,
) -> Dataset:
    """Gaussian blobs: class means at distance ``separation`` from the origin
    along random unit directions, unit isotropic noise, then one global affine
    rescale into [0, 1] (which preserves class geometry)."""
    if num_classes < 1 or examples_per_class < 1 or input_dim < 1:
        raise ValueError("num_classes, examples_per_class, and input_dim must be >= 1")
    if separation < 0:
        raise ValueError(f"separation must be >= 0, got {separation}")
    directions = stream.gen.standard_normal((num_classes, input_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = separation * directions
    feats = np.empty((num_classes * examples_per_class, input_dim))
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), examples_per_class)
    for c in range(num_classes):
        block = slice(c * examples_per_class, (c + 1) * examples_per_class)
        feats[block] = means[c] + stream.gen.standard_normal((examples_per_class, input_dim))
    lo, hi = feats.min(), feats.max()
    feats = (feats - lo) / (hi - lo)
    return Dataset(feats, labels, num_classes)


def _split_round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _stratified_split(
    class_chunks: list[np.ndarray], train_fraction: float
) -> tuple[np.ndarray, np.ndarray]:
    """Split one client's class-grouped (already shuffled) chunks into
    train/test so the train total equals round(train_fraction * n) exactly,
    apportioned across classes by largest remainder."""
    n = sum(ch.size for ch in class_chunks)
    target = _split_round_half_up(train_fraction * n)
    quotas = [train_fraction * ch.size for ch in class_chunks]
    take = [int(np.floor(q)) for q in quotas]
    fractional = sorted(
        range(len(class_chunks)),
        key=lambda i: (-(quotas[i] - take[i]), i),
    )
    deficit = target - sum(take)
    for i in fractional:
        if deficit == 0:
            break
        if take[i] < class_chunks[i].size:
            take[i] += 1
            deficit -= 1
    # Rare cap spillover (train_fraction near 1): hand leftovers to any class
    # that still has room.
    for i in range(len(class_chunks)):
        if deficit == 0:
            break
        room = class_chunks[i].size - take[i]
        grab = min(room, deficit)
        take[i] += grab
        deficit -= grab
    train = [ch[: take[i]] for i, ch in enumerate(class_chunks)]
    test = [ch[take[i] :] for i, ch in enumerate(class_chunks)]
    empty = np.empty(0, dtype=np.int64)
    return (
        np.sort(np.concatenate(train)) if train else empty,
        np.sort(np.concatenate(test)) if test else empty,
    )


def _check_fraction(train_fraction: float):
    if not (0.0 < train_fraction < 1.0):
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")


def partition_label_skew(
    dataset: Dataset,
    num_clients: int,
    classes_per_client: int,
    train_fraction: float,
    stream: RngStream,
) -> Partition:
    """Pathological label skew: client i holds classes
    {(i*k + j) mod C : j < k}, and each class's examples are shuffled and
    split as evenly as integer division allows among its holders."""
    c_total = dataset.num_classes
    if not (1 <= classes_per_client <= c_total):
        raise ValueError(
            f"classes_per_client must lie in [1, {c_total}], got {classes_per_client}"
        )
    if num_clients < 1:
        raise ValueError(f"num_clients must be >= 1, got {num_clients}")
    _check_fraction(train_fraction)

    holders: list[list[int]] = [[] for _ in range(c_total)]
    for i in range(num_clients):
        for j in range(classes_per_client):
            holders[(i * classes_per_client + j) % c_total].append(i)

    client_chunks: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for c in range(c_total):
        if not holders[c]:
            continue
        idx_c = np.flatnonzero(dataset.labels == c)
        perm = stream.gen.permutation(idx_c)
        for owner, chunk in zip(holders[c], np.array_split(perm, len(holders[c]))):
            client_chunks[owner].append(chunk.astype(np.int64))

    train, test = [], []
    for chunks in client_chunks:
        tr, te = _stratified_split(chunks, train_fraction)
        train.append(tr)
        test.append(te)
    return Partition(train, test)


def partition_dirichlet(
    dataset: Dataset,
    num_clients: int,
    alpha: float,
    min_samples: int,
    train_fraction: float,
    stream: RngStream,
    max_retries: int = 100,
) -> Partition:
    """Dirichlet(alpha) label skew: per class, client proportions are drawn
    from a symmetric Dirichlet and counts rounded by largest remainder.  The
    whole draw is retried until every client holds at least ``min_samples``
    examples; exhausting ``max_retries`` raises PartitionError."""
    if not (alpha > 0):
        raise ValueError(f"alpha must be positive, got {alpha}")
    if num_clients < 1:
        raise ValueError(f"num_clients must be >= 1, got {num_clients}")
    if min_samples < 0:
        raise ValueError(f"min_samples must be >= 0, got {min_samples}")
    _check_fraction(train_fraction)

    for _ in range(max_retries):
        client_chunks: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        for c in range(dataset.num_classes):
            idx_c = np.flatnonzero(dataset.labels == c)
            if idx_c.size == 0:
                continue
            props = stream.gen.dirichlet(np.full(num_clients, alpha))
            quotas = props * idx_c.size
            counts = np.floor(quotas).astype(np.int64)
            order = np.argsort(-(quotas - counts), kind="stable")
            for i in order[: idx_c.size - int(counts.sum())]:
                counts[i] += 1
            perm = stream.gen.permutation(idx_c)
            offsets = np.concatenate(([0], np.cumsum(counts)))
            for i in range(num_clients):
                chunk = perm[offsets[i] : offsets[i + 1]]
                if chunk.size:
                    client_chunks[i].append(chunk.astype(np.int64))
        totals = [sum(ch.size for ch in chunks) for chunks in client_chunks]
        if min(totals) >= min_samples:
            train, test = [], []
            for chunks in client_chunks:
                tr, te = _stratified_split(chunks, train_fraction)
                train.append(tr)
                test.append(te)
            return Partition(train, test)
    raise PartitionError(
        f"could not give every one of {num_clients} clients >= {min_samples} samples "
        f"after {max_retries} Dirichlet draws (alpha={alpha}, n={len(dataset)})"
    )
