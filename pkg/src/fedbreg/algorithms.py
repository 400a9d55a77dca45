"""Local update rules for every supported strategy.

The personalized family optimizes, per client, the envelope of the local
loss around a strategy-chosen prior mean mu:

    per local iteration r = 1..R on a fresh minibatch
        mu      <- select_prior_mean(...)                       (see below)
        theta   <- bregman_prox(loss_batch, anchor=mu,          (K steps,
                                warm start at previous theta)    stepsize alpha)
        w       <- w - alpha_m * lambda * (w - theta)

Prior mean selection, given the current w, the minibatch gradient at w, the
client's memorized final iterate from its previous participation, and the
previous personalized theta:

    pfedme      mu = w                           (plain proximal personalization)
    fo          mu = w - eta_alpha * grad
    mfo         mu = w - eta * (memorized_w - theta_prev)
    mg          mu = w - eta_alpha * grad - eta * (memorized_w - theta_prev)
    mg_variant  mu = w - eta * tilde_eta_alpha * grad_at(w - tilde_eta * grad)
                       - eta * (memorized_w - theta_prev)

Reference-point baselines:

    fedavg        R plain SGD steps, stepsize alpha
    perfedavg_fo  per iteration, two fresh batches B1, B2:
                  w_tmp = w - alpha * grad_B1(w);  w = w - alpha_m * grad_B2(w_tmp)

The update functions take a ``draw_batch`` callable returning one minibatch
gradient closure per call, so they are testable against closed-form losses;
``LocalTrainer`` wires them to a model and a client's data shard.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import models
from .bregman import ConvexGenerator, PriorSpec, bregman_prox

__all__ = [
    "STRATEGIES",
    "LocalTrainer",
    "TrainerConfig",
    "fine_tune",
    "local_update_fedavg",
    "local_update_perfedavg_fo",
    "local_update_pfedbred",
    "local_update_pfedme",
    "select_prior_mean",
]

STRATEGIES = (
    "pfedbred_fo",
    "pfedbred_mfo",
    "pfedbred_mg",
    "pfedbred_mg_variant",
    "pfedme",
    "fedavg",
    "perfedavg_fo",
)
_PROX_STRATEGIES = ("pfedbred_fo", "pfedbred_mfo", "pfedbred_mg", "pfedbred_mg_variant", "pfedme")
_MEMORY_STRATEGIES = ("pfedbred_mfo", "pfedbred_mg", "pfedbred_mg_variant")
GradFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TrainerConfig:
    """Knobs of one local optimization pass.

    tilde_eta_alpha / tilde_eta are the mg_variant lookahead stepsizes; left
    unset they default to eta_alpha / eta (lookahead shift) and eta_alpha
    (inner scale) derived so the variant collapses toward mg for a vanishing
    shift.
    """

    strategy: str
    lambda_reg: float = 15.0
    eta: float = 0.05
    eta_alpha: float = 0.01
    alpha_m: float = 0.01
    alpha: float = 0.01
    prox_steps: int = 5
    local_iters: int = 20
    batch_size: int = 20
    ft_enabled: bool = False
    tilde_eta_alpha: float | None = None
    tilde_eta: float | None = None
    memorized_outer_step: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if not (np.isfinite(self.lambda_reg) and self.lambda_reg > 0):
            raise ValueError(f"lambda_reg must be finite and positive, got {self.lambda_reg}")
        for name in ("eta", "eta_alpha", "alpha_m", "alpha"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        for name in ("prox_steps", "local_iters", "batch_size"):
            v = getattr(self, name)
            if v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
        for name in ("tilde_eta_alpha", "tilde_eta"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0 when set, got {v}")

    def resolved_tilde(self) -> tuple[float, float]:
        """(tilde_eta_alpha, tilde_eta) with defaults filled in."""
        tea = self.tilde_eta_alpha
        if tea is None:
            tea = self.eta_alpha / self.eta if self.eta > 0 else 0.0
        te = self.tilde_eta if self.tilde_eta is not None else self.eta_alpha
        return tea, te


def select_prior_mean(
    strategy: str,
    w: np.ndarray,
    *,
    eta: float = 0.0,
    eta_alpha: float = 0.0,
    grad_at_w: np.ndarray | None = None,
    memorized_w: np.ndarray | None = None,
    theta_prev: np.ndarray | None = None,
    tilde_eta_alpha: float = 0.0,
    tilde_eta: float = 0.0,
    grad_fn: GradFn | None = None,
) -> np.ndarray:
    """Prior mean mu for one local iteration (formulas in module docstring)."""
    if strategy == "pfedme":
        return w
    if strategy not in _PROX_STRATEGIES:
        raise ValueError(f"strategy {strategy!r} has no prior mean")
    if strategy == "pfedbred_fo":
        if grad_at_w is None:
            raise ValueError("pfedbred_fo needs grad_at_w")
        return w - eta_alpha * grad_at_w
    if memorized_w is None or theta_prev is None:
        raise ValueError(f"{strategy} needs memorized_w and theta_prev")
    memory_pull = eta * (memorized_w - theta_prev)
    if strategy == "pfedbred_mfo":
        return w - memory_pull
    if grad_at_w is None:
        raise ValueError(f"{strategy} needs grad_at_w")
    if strategy == "pfedbred_mg":
        return w - eta_alpha * grad_at_w - memory_pull
    # mg_variant: gradient re-evaluated at a lookahead-shifted point.
    if grad_fn is None:
        raise ValueError("pfedbred_mg_variant needs grad_fn")
    shifted_grad = grad_fn(w - tilde_eta * grad_at_w)
    return w - eta * tilde_eta_alpha * shifted_grad - memory_pull


def _check_finite(vec: np.ndarray, what: str, local_iter: int):
    if not np.all(np.isfinite(vec)):
        j = int(np.flatnonzero(~np.isfinite(vec))[0])
        raise FloatingPointError(
            f"non-finite {what} at local iteration {local_iter}, coordinate {j}"
        )


def local_update_pfedbred(
    w_in: np.ndarray,
    theta_in: np.ndarray,
    memorized_w: np.ndarray,
    cfg: TrainerConfig,
    draw_batch: Callable[[], GradFn],
) -> tuple[np.ndarray, np.ndarray]:
    """One client's R local iterations of the personalized prox family.

    Returns (final w, final theta); inputs are never mutated.
    """
    if cfg.strategy not in _PROX_STRATEGIES:
        raise ValueError(f"local_update_pfedbred got strategy {cfg.strategy!r}")
    prior = PriorSpec(ConvexGenerator("gaussian"), cfg.lambda_reg)
    tilde_eta_alpha, tilde_eta = cfg.resolved_tilde()
    needs_grad = cfg.strategy in ("pfedbred_fo", "pfedbred_mg", "pfedbred_mg_variant")
    w = np.array(w_in, dtype=np.float64, copy=True)
    theta = np.array(theta_in, dtype=np.float64, copy=True)
    for r in range(1, cfg.local_iters + 1):
        grad_fn = draw_batch()
        grad_w = grad_fn(w) if needs_grad else None
        mu = select_prior_mean(
            cfg.strategy,
            w,
            eta=cfg.eta,
            eta_alpha=cfg.eta_alpha,
            grad_at_w=grad_w,
            memorized_w=memorized_w,
            theta_prev=theta,
            tilde_eta_alpha=tilde_eta_alpha,
            tilde_eta=tilde_eta,
            grad_fn=grad_fn,
        )
        theta = bregman_prox(prior, grad_fn, mu, cfg.prox_steps, cfg.alpha, start=theta)
        if cfg.memorized_outer_step and cfg.strategy in _MEMORY_STRATEGIES:
            w -= cfg.alpha_m * cfg.eta * (memorized_w - theta)
        else:
            w -= cfg.alpha_m * cfg.lambda_reg * (w - theta)
        _check_finite(theta, "personalized parameters", r)
        _check_finite(w, "local parameters", r)
    return w, theta


def local_update_pfedme(
    w_in: np.ndarray,
    theta_in: np.ndarray,
    cfg: TrainerConfig,
    draw_batch: Callable[[], GradFn],
) -> tuple[np.ndarray, np.ndarray]:
    """Identity-mean special case of the prox family (mu = w throughout)."""
    if cfg.strategy != "pfedme":
        raise ValueError(f"local_update_pfedme got strategy {cfg.strategy!r}")
    return local_update_pfedbred(w_in, theta_in, w_in, cfg, draw_batch)


def local_update_fedavg(
    w_in: np.ndarray, cfg: TrainerConfig, draw_batch: Callable[[], GradFn]
) -> np.ndarray:
    """R plain SGD steps with stepsize alpha on fresh minibatches."""
    w = np.array(w_in, dtype=np.float64, copy=True)
    for r in range(1, cfg.local_iters + 1):
        w -= cfg.alpha * draw_batch()(w)
        _check_finite(w, "local parameters", r)
    return w


def local_update_perfedavg_fo(
    w_in: np.ndarray, cfg: TrainerConfig, draw_batch: Callable[[], GradFn]
) -> np.ndarray:
    """First-order meta-SGD: inner step on one batch, outer step on another."""
    w = np.array(w_in, dtype=np.float64, copy=True)
    for r in range(1, cfg.local_iters + 1):
        inner = draw_batch()
        outer = draw_batch()
        w_look = w - cfg.alpha * inner(w)
        w -= cfg.alpha_m * outer(w_look)
        _check_finite(w, "local parameters", r)
    return w


def fine_tune(
    spec: models.ModelSpec,
    params: np.ndarray,
    batch: models.Batch,
    steps: int = 1,
    step_size: float = 0.01,
) -> np.ndarray:
    """``steps`` full-batch gradient steps from ``params``; input untouched.

    steps == 0 returns an identical copy, so callers can use it
    unconditionally.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    out = np.array(params, dtype=np.float64, copy=True)
    for _ in range(steps):
        out -= step_size * models.gradient(spec, out, batch)
    return out


class LocalTrainer:
    """Binds a strategy to a model and the shared data pool.

    ``train`` advances one client from the incoming global parameters;
    ``eval_params`` produces the parameters that client should be evaluated
    with (its personalized theta for the prox family, the global vector for
    fedavg, a two-step adaptation for perfedavg_fo, plus one extra
    fine-tuning step for any strategy when ft_enabled).  Evaluation-time
    batches are deterministic slices of the train shard so that running an
    evaluation never advances a client's random stream.
    """

    def __init__(
        self,
        model_spec: models.ModelSpec,
        features: np.ndarray,
        labels: np.ndarray,
        cfg: TrainerConfig,
    ):
        self.model_spec = model_spec
        self.features = features
        self.labels = labels
        self.cfg = cfg

    def _batch_from_rows(self, rows: np.ndarray) -> models.Batch:
        return models.Batch(self.features[rows], self.labels[rows])

    def _make_draw_batch(self, client) -> Callable[[], GradFn]:
        shard = client.train_idx
        spec = self.model_spec
        size = self.cfg.batch_size

        def draw() -> GradFn:
            rows = shard[client.rng.gen.integers(0, shard.shape[0], size=size)]
            batch = self._batch_from_rows(rows)
            return lambda p: models.gradient(spec, p, batch)

        return draw

    def _eval_batch(self, client, slot: int) -> models.Batch:
        # Deterministic, RNG-free: consecutive wrapped slices of the shard.
        shard = client.train_idx
        offsets = (slot * self.cfg.batch_size + np.arange(self.cfg.batch_size)) % shard.shape[0]
        return self._batch_from_rows(shard[offsets])

    def train(self, client, w_global: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.cfg
        draw = self._make_draw_batch(client)
        if cfg.strategy == "fedavg":
            w = local_update_fedavg(w_global, cfg, draw)
            return w, np.array(w, copy=True)
        if cfg.strategy == "perfedavg_fo":
            w = local_update_perfedavg_fo(w_global, cfg, draw)
            return w, np.array(w, copy=True)
        if cfg.strategy == "pfedme":
            return local_update_pfedme(w_global, client.theta, cfg, draw)
        return local_update_pfedbred(w_global, client.theta, client.memorized_w, cfg, draw)

    def eval_params(self, client, w_global: np.ndarray) -> np.ndarray:
        cfg = self.cfg
        if cfg.strategy in _PROX_STRATEGIES:
            base = np.array(client.theta, dtype=np.float64, copy=True)
        elif cfg.strategy == "perfedavg_fo":
            look = fine_tune(self.model_spec, w_global, self._eval_batch(client, 0), 1, cfg.alpha)
            base = fine_tune(self.model_spec, look, self._eval_batch(client, 1), 1, cfg.alpha_m)
        else:
            base = np.array(w_global, dtype=np.float64, copy=True)
        if cfg.ft_enabled:
            base = fine_tune(self.model_spec, base, self._eval_batch(client, 0), 1, cfg.alpha)
        return base
