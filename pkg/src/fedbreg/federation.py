"""Server loop: client sampling, damped aggregation, round orchestration.

One round: sample a client subset, run every client's local update from the
current global parameters (all clients train by default so personalized
state keeps advancing; set train_only_sampled to restrict work to the
sampled set), then move the server by

    w  <-  (1 - beta) * w + beta * weighted_mean(sampled final iterates).

beta = 1 is plain averaging; beta > 1 extrapolates past the mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .param_space import RngStream, freeze

__all__ = [
    "ClientState",
    "RoundConfig",
    "ServerState",
    "aggregate",
    "run_round",
    "run_training",
    "sample_clients",
]

WEIGHTINGS = ("uniform", "by_data_count")


@dataclass
class ClientState:
    """One client's persistent slots between rounds.

    theta: personalized parameters (prox family warm start and eval model).
    memorized_w: the client's final local iterate from its last training
    pass, consumed by memory-based prior means.  Both frozen; updates
    replace the arrays wholesale.
    """

    client_id: int
    theta: np.ndarray
    memorized_w: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    rng: RngStream

    def __post_init__(self):
        self.theta = freeze(np.array(self.theta, dtype=np.float64, copy=True))
        self.memorized_w = freeze(np.array(self.memorized_w, dtype=np.float64, copy=True))
        self.train_idx = np.ascontiguousarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.ascontiguousarray(self.test_idx, dtype=np.int64)
        if self.train_idx.size == 0:
            raise ValueError(f"client {self.client_id} has an empty train shard")


@dataclass(frozen=True)
class RoundConfig:
    total_rounds: int
    sample_ratio: float = 0.2
    beta: float = 1.0
    aggregation_weighting: str = "by_data_count"
    train_only_sampled: bool = False

    def __post_init__(self):
        if self.total_rounds < 1:
            raise ValueError(f"total_rounds must be >= 1, got {self.total_rounds}")
        if not (0.0 < self.sample_ratio <= 1.0):
            raise ValueError(f"sample_ratio must lie in (0, 1], got {self.sample_ratio}")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be finite and positive, got {self.beta}")
        if self.aggregation_weighting not in WEIGHTINGS:
            raise ValueError(
                f"aggregation_weighting must be one of {WEIGHTINGS}, "
                f"got {self.aggregation_weighting!r}"
            )


@dataclass
class ServerState:
    w: np.ndarray
    round_index: int = 0

    def __post_init__(self):
        self.w = freeze(np.array(self.w, dtype=np.float64, copy=True))


def sample_clients(num_clients: int, ratio: float, stream: RngStream) -> np.ndarray:
    """ceil(num_clients * ratio) distinct ids, sorted ascending.

    The epsilon guards against float artifacts like 100 * 0.2 landing a hair
    above 20 and ceiling to 21.
    """
    if num_clients < 1:
        raise ValueError(f"num_clients must be >= 1, got {num_clients}")
    if not (0.0 < ratio <= 1.0):
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    count = min(num_clients, max(1, math.ceil(num_clients * ratio - 1e-9)))
    picked = stream.gen.choice(num_clients, size=count, replace=False)
    return np.sort(picked.astype(np.int64))


def aggregate(
    prev_w: np.ndarray, updates: Sequence[tuple[float, np.ndarray]], beta: float
) -> np.ndarray:
    """(1 - beta) * prev_w + beta * (weight-normalized mean of updates)."""
    if len(updates) == 0:
        raise ValueError("aggregate needs at least one update")
    weights = np.array([w for w, _ in updates], dtype=np.float64)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError(f"update weights must be finite and >= 0, got {weights}")
    total = weights.sum()
    if total <= 0:
        raise ValueError("update weights sum to zero")
    mean = np.zeros_like(np.asarray(prev_w, dtype=np.float64))
    for weight, vec in updates:
        if vec.shape != prev_w.shape:
            raise ValueError(f"update shape {vec.shape} does not match server {prev_w.shape}")
        mean += (weight / total) * vec
    out = (1.0 - beta) * np.asarray(prev_w, dtype=np.float64) + beta * mean
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("aggregation produced non-finite parameters")
    return out


def run_round(
    server: ServerState,
    clients: Sequence[ClientState],
    trainer,
    cfg: RoundConfig,
    server_stream: RngStream,
) -> ServerState:
    """Advance the federation by one round; client states update in place."""
    round_index = server.round_index + 1
    sampled = sample_clients(len(clients), cfg.sample_ratio, server_stream)
    sampled_set = set(int(i) for i in sampled)
    to_train = (
        [clients[i] for i in sampled] if cfg.train_only_sampled else list(clients)
    )
    for client in to_train:
        try:
            w_out, theta_out = trainer.train(client, server.w)
        except Exception as err:
            raise RuntimeError(
                f"round {round_index}: client {client.client_id} failed: {err}"
            ) from err
        client.memorized_w = freeze(np.array(w_out, dtype=np.float64, copy=True))
        client.theta = freeze(np.array(theta_out, dtype=np.float64, copy=True))

    updates = []
    for i in sampled_set:
        client = clients[i]
        weight = float(client.train_idx.size) if cfg.aggregation_weighting == "by_data_count" else 1.0
        updates.append((weight, client.memorized_w))
    return ServerState(aggregate(server.w, updates, cfg.beta), round_index)


def run_training(
    server: ServerState,
    clients: Sequence[ClientState],
    trainer,
    cfg: RoundConfig,
    server_stream: RngStream,
    eval_hook: Callable[[ServerState, Sequence[ClientState], int], object] | None = None,
    eval_cadence: int = 1,
) -> tuple[ServerState, list]:
    """Run total_rounds rounds; an eval_hook fires every ``eval_cadence``
    rounds and always at the final round.  Returns the final server state and
    the collected hook outputs."""
    if eval_cadence < 1:
        raise ValueError(f"eval_cadence must be >= 1, got {eval_cadence}")
    history: list = []
    for t in range(server.round_index + 1, server.round_index + cfg.total_rounds + 1):
        server = run_round(server, clients, trainer, cfg, server_stream)
        if eval_hook is not None and (t % eval_cadence == 0 or t == cfg.total_rounds):
            history.append(eval_hook(server, clients, t))
    return server, history
