"""Bregman divergences, proximal mapping, and Moreau-style envelope.

A generator family is described by a convex function g on natural parameters
whose conjugate g* lives on mean parameters.  The divergence used everywhere
is the Bregman divergence of g* in mean coordinates,

    D(x, y) = g*(x) - g*(y) - <grad g*(y), x - y>,

and the proximal mapping regularizes a loss toward an anchor with weight
``lam``:

    prox(anchor) ~ argmin_theta  loss(theta) + lam * D(theta, anchor),

approximated by a fixed number of gradient steps (warm-startable, so the
approximation is a deterministic function of its inputs).  The envelope value
is the attained objective and its first-order gradient with respect to the
anchor is lam * H * (anchor - prox), with H = inverse covariance for the
gaussian family and H = identity for the others (only the first-order,
identity-Hessian-factor path is exposed for bernoulli/poisson/exponential).

Supported families and their mean-coordinate domains:

    gaussian      g*(x) = x' Sigma^-1 x / 2          x in R^d
    bernoulli     g*(x) = x ln x + (1-x) ln(1-x)     x in [0, 1]  (grad: open)
    poisson       g*(x) = x ln x - x                 x >= 0       (grad: x > 0)
    exponential   g*(x) = -1 - ln x                  x > 0

``scale`` is the diagonal of Sigma for the gaussian family and must be 1 for
the rest.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "FAMILIES",
    "ConvexGenerator",
    "DomainError",
    "PriorSpec",
    "bregman_prox",
    "divergence",
    "envelope_gradient",
    "envelope_value",
    "g_conj_value",
    "grad_g",
    "grad_g_conj",
]

FAMILIES = ("gaussian", "bernoulli", "poisson", "exponential")


class DomainError(ValueError):
    """An input left the generator's domain; names the offending coordinate."""


def _domain_check(ok: np.ndarray, family: str, values: np.ndarray, requirement: str):
    if not np.all(ok):
        j = int(np.flatnonzero(~ok)[0])
        raise DomainError(
            f"{family}: coordinate {j} = {values[j]!r} violates {requirement}"
        )


@dataclass(frozen=True)
class ConvexGenerator:
    """Generator family tag plus its shape parameter.

    ``scale`` is a positive scalar or per-coordinate vector: the diagonal of
    the gaussian covariance Sigma.  Non-gaussian families take scale == 1.
    """

    family: str
    scale: float | np.ndarray = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown generator family {self.family!r}; expected one of {FAMILIES}")
        scale = np.asarray(self.scale, dtype=np.float64)
        if scale.ndim > 1:
            raise ValueError(f"scale must be scalar or 1-D, got shape {scale.shape}")
        if not np.all(np.isfinite(scale)) or not np.all(scale > 0):
            raise ValueError("scale entries must be finite and positive")
        if self.family != "gaussian" and not np.all(scale == 1.0):
            raise ValueError(f"scale applies to the gaussian family only, got {self.scale!r}")

    def _scale_arr(self) -> np.ndarray:
        return np.asarray(self.scale, dtype=np.float64)


@dataclass(frozen=True)
class PriorSpec:
    """A generator family paired with the regularization weight lam > 0."""

    generator: ConvexGenerator
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lam must be finite and positive, got {self.lam}")


def grad_g(gen: ConvexGenerator, natural: np.ndarray) -> np.ndarray:
    """Map natural parameters to mean parameters (gradient of g)."""
    s = np.asarray(natural, dtype=np.float64)
    fam = gen.family
    if fam == "gaussian":
        return s * gen._scale_arr()
    if fam == "bernoulli":
        # Numerically stable logistic.
        out = np.empty_like(s)
        pos = s >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
        es = np.exp(s[~pos])
        out[~pos] = es / (1.0 + es)
        return out
    if fam == "poisson":
        out = np.exp(s)
        _domain_check(np.isfinite(out), fam, s, "exp(s) finite (s too large)")
        return out
    # exponential: g(s) = -ln(-s) on s < 0, mean = -1/s
    _domain_check(s < 0, fam, s, "natural parameter < 0")
    return -1.0 / s


def grad_g_conj(gen: ConvexGenerator, mean: np.ndarray) -> np.ndarray:
    """Map mean parameters back to natural parameters (gradient of g*)."""
    x = np.asarray(mean, dtype=np.float64)
    fam = gen.family
    if fam == "gaussian":
        return x / gen._scale_arr()
    if fam == "bernoulli":
        _domain_check((x > 0) & (x < 1), fam, x, "mean in open interval (0, 1)")
        return np.log(x) - np.log1p(-x)
    if fam == "poisson":
        _domain_check(x > 0, fam, x, "mean > 0")
        return np.log(x)
    _domain_check(x > 0, fam, x, "mean > 0")
    return -1.0 / x


def _xlogx(x: np.ndarray) -> np.ndarray:
    """x * ln x with the 0 * ln 0 = 0 convention (x >= 0 assumed checked)."""
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def g_conj_value(gen: ConvexGenerator, mean: np.ndarray) -> float:
    """Value of the conjugate g* at a mean-coordinate point (summed)."""
    x = np.asarray(mean, dtype=np.float64)
    fam = gen.family
    if fam == "gaussian":
        return 0.5 * float(np.dot(x, x / gen._scale_arr()))
    if fam == "bernoulli":
        _domain_check((x >= 0) & (x <= 1), fam, x, "mean in closed interval [0, 1]")
        return float(np.sum(_xlogx(x) + _xlogx(1.0 - x)))
    if fam == "poisson":
        _domain_check(x >= 0, fam, x, "mean >= 0")
        return float(np.sum(_xlogx(x) - x))
    _domain_check(x > 0, fam, x, "mean > 0")
    return float(np.sum(-1.0 - np.log(x)))


def divergence(gen: ConvexGenerator, x: np.ndarray, y: np.ndarray) -> float:
    """Bregman divergence D(x, y) of g* in mean coordinates, summed over coordinates.

    ``y`` must lie in the open domain (it anchors the tangent); ``x`` may sit
    on the closure where g* extends continuously.  Not symmetric in general.
    """
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape:
        raise ValueError(f"dimension mismatch in divergence: {xv.shape} vs {yv.shape}")
    fam = gen.family
    if fam == "gaussian":
        d = xv - yv
        return 0.5 * float(np.dot(d, d / gen._scale_arr()))
    if fam == "bernoulli":
        _domain_check((xv >= 0) & (xv <= 1), fam, xv, "mean in closed interval [0, 1]")
        _domain_check((yv > 0) & (yv < 1), fam, yv, "mean in open interval (0, 1)")
        # KL(Ber(x) || Ber(y)), the simplified form of the definition.
        terms = (
            _xlogx(xv) - xv * np.log(yv)
            + _xlogx(1.0 - xv) - (1.0 - xv) * np.log(1.0 - yv)
        )
        return float(np.sum(terms))
    if fam == "poisson":
        _domain_check(xv >= 0, fam, xv, "mean >= 0")
        _domain_check(yv > 0, fam, yv, "mean > 0")
        return float(np.sum(_xlogx(xv) - xv * np.log(yv) - xv + yv))
    _domain_check(xv > 0, fam, xv, "mean > 0")
    _domain_check(yv > 0, fam, yv, "mean > 0")
    r = xv / yv
    return float(np.sum(r - np.log(r) - 1.0))


def _divergence_grad(gen: ConvexGenerator, theta: np.ndarray, anchor_nat: np.ndarray) -> np.ndarray:
    """Gradient in theta of D(theta, anchor): grad g*(theta) - grad g*(anchor)."""
    return grad_g_conj(gen, theta) - anchor_nat


def bregman_prox(
    prior: PriorSpec,
    grad_loss: Callable[[np.ndarray], np.ndarray],
    anchor: np.ndarray,
    steps: int,
    step_size: float,
    start: np.ndarray | None = None,
) -> np.ndarray:
    """Approximate argmin_theta loss(theta) + lam * D(theta, anchor).

    Runs exactly ``steps`` gradient descent iterations with fixed
    ``step_size`` from ``start`` (default: the anchor), so the output is a
    deterministic function of the inputs.  The anchor itself is never
    mutated.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not (step_size > 0):
        raise ValueError(f"step_size must be positive, got {step_size}")
    gen = prior.generator
    theta = np.array(anchor if start is None else start, dtype=np.float64, copy=True)
    anchor_nat = grad_g_conj(gen, np.asarray(anchor, dtype=np.float64))
    for k in range(steps):
        g = grad_loss(theta)
        if not np.all(np.isfinite(g)):
            j = int(np.flatnonzero(~np.isfinite(np.asarray(g)))[0])
            raise ValueError(
                f"non-finite loss gradient at prox step {k}, coordinate {j}"
            )
        theta -= step_size * (g + prior.lam * _divergence_grad(gen, theta, anchor_nat))
    return theta


def envelope_value(
    prior: PriorSpec,
    loss_fn: Callable[[np.ndarray], float],
    grad_loss: Callable[[np.ndarray], np.ndarray],
    anchor: np.ndarray,
    steps: int,
    step_size: float,
    start: np.ndarray | None = None,
) -> float:
    """Objective value at the approximate prox point: loss + lam * divergence."""
    theta = bregman_prox(prior, grad_loss, anchor, steps, step_size, start=start)
    return float(loss_fn(theta)) + prior.lam * divergence(prior.generator, theta, anchor)


def envelope_gradient(
    prior: PriorSpec,
    grad_loss: Callable[[np.ndarray], np.ndarray],
    anchor: np.ndarray,
    steps: int,
    step_size: float,
    start: np.ndarray | None = None,
) -> np.ndarray:
    """First-order envelope gradient with respect to the anchor.

    lam * Sigma^-1 (anchor - prox) for the gaussian family; the non-gaussian
    families use the identity-Hessian first-order form lam * (anchor - prox).
    """
    theta = bregman_prox(prior, grad_loss, anchor, steps, step_size, start=start)
    diff = np.asarray(anchor, dtype=np.float64) - theta
    if prior.generator.family == "gaussian":
        diff = diff / prior.generator._scale_arr()
    return prior.lam * diff
