"""Loss terms for WGAN-GP multi-domain translation with fixed-point learning.

Every function returns a scalar tensor. ``D`` arguments are callables that
return ``(score_map, domain_logits)``; see :func:`fpgan.models.discriminate`.
Expectations are mini-batch means and L1 terms are per-element means.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import torch
import torch.nn.functional as F
from torch import Tensor

from .models import ConfigError, discriminate


@dataclass(frozen=True)
class LossWeights:
    lambda_domain: float = 1.0
    lambda_cyc: float = 10.0
    lambda_id: float = 10.0
    lambda_gp: float = 10.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value >= 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")

    def to_dict(self) -> dict:
        return asdict(self)


# lambda_id per dataset; lambda_domain=1, lambda_cyc=10, lambda_gp=10 throughout
DATASET_PROFILES = {
    "celeba": LossWeights(lambda_id=10.0),
    "brats": LossWeights(lambda_id=0.1),
    "pe": LossWeights(lambda_id=1.0),
}


@dataclass
class InterpolationSample:
    x_hat: Tensor
    epsilon: Tensor


def _check_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def _require_fakes(fakes) -> None:
    if not fakes:
        raise ValueError("at least one fake batch is required")


def l1(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "l1")
    return (a - b).abs().mean()


def interpolate(x_real: Tensor, x_fake: Tensor, epsilon: Tensor) -> InterpolationSample:
    eps = epsilon.reshape(-1, *([1] * (x_real.dim() - 1))).to(x_real.dtype)
    return InterpolationSample(eps * x_real + (1 - eps) * x_fake, epsilon)


def gradient_penalty(D, x_real: Tensor, x_fake: Tensor, seed=None, *,
                     generator: torch.Generator | None = None) -> Tensor:
    """Mean of (||grad D_critic(x_hat)||_2 - 1)^2 over straight-line interpolates.

    ``seed`` (or an explicit torch ``generator``) fixes the per-image mixing
    coefficients.
    """
    _check_same_shape(x_real, x_fake, "gradient_penalty")
    if generator is None and seed is not None:
        generator = torch.Generator().manual_seed(int(seed))
    eps = torch.rand(x_real.shape[0], generator=generator, dtype=x_real.dtype)
    sample = interpolate(x_real.detach(), x_fake.detach(), eps)
    x_hat = sample.x_hat.requires_grad_(True)
    scores, _ = discriminate(D, x_hat)
    if not scores.requires_grad:
        raise ValueError("critic output is not differentiable with respect to its input")
    (grad,) = torch.autograd.grad(scores.sum(), x_hat, create_graph=True, allow_unused=True)
    if grad is None:
        raise ValueError("critic output does not depend on its input")
    norms = grad.flatten(1).norm(2, dim=1)
    return ((norms - 1) ** 2).mean()


def critic_loss(D, x_real: Tensor, fakes: list[Tensor], gp, w: LossWeights,
                reduction: str = "sum") -> Tensor:
    """-E[D(x)] + sum_f E[D(f)] + lambda_gp * gp, minimized by the critic.

    With two fakes the summed form is unbounded below in a constant critic
    offset, so training passes ``reduction="mean"`` to weigh the real and
    fake sides equally.
    """
    _require_fakes(fakes)
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    real_scores, _ = discriminate(D, x_real)
    fake_term = 0
    for fake in fakes:
        fake_term = fake_term + discriminate(D, fake.detach())[0].mean()
    if reduction == "mean":
        fake_term = fake_term / len(fakes)
    return -real_scores.mean() + fake_term + w.lambda_gp * gp


def generator_adversarial_loss(D, fakes: list[Tensor]) -> Tensor:
    _require_fakes(fakes)
    loss = 0
    for fake in fakes:
        loss = loss - discriminate(D, fake)[0].mean()
    return loss


def domain_loss_real(logits: Tensor, c_x: Tensor) -> Tensor:
    """Sum over attributes of sigmoid cross-entropy, averaged over images."""
    labels = c_x.to(logits.dtype)
    if labels.shape != logits.shape:
        raise ValueError(f"labels {tuple(labels.shape)} do not match logits {tuple(logits.shape)}")
    if not torch.all((labels == 0) | (labels == 1)):
        raise ValueError("domain labels must be 0 or 1")
    bce = F.binary_cross_entropy_with_logits(logits, labels, reduction="none")
    return bce.sum(dim=1).mean()


def domain_loss_fake(D, fake_pairs: list[tuple[Tensor, Tensor]]) -> Tensor:
    _require_fakes(fake_pairs)
    loss = 0
    for fake, target in fake_pairs:
        loss = loss + domain_loss_real(discriminate(D, fake)[1], target)
    return loss


def cycle_loss(x: Tensor, cyc_cross: Tensor, cyc_same: Tensor | None = None) -> Tensor:
    loss = l1(cyc_cross, x)
    if cyc_same is not None:
        loss = loss + l1(cyc_same, x)
    return loss


def conditional_identity_loss(x: Tensor, same_out: Tensor, target_is_source: bool) -> Tensor:
    _check_same_shape(x, same_out, "conditional_identity_loss")
    if not target_is_source:
        return torch.zeros((), dtype=x.dtype)
    return l1(same_out, x)


def total_discriminator_loss(parts: dict, w: LossWeights) -> Tensor:
    """``parts`` holds ``critic`` and ``domain_real``."""
    return parts["critic"] + w.lambda_domain * parts["domain_real"]


def total_generator_loss(parts: dict, w: LossWeights) -> Tensor:
    """``parts`` holds ``adv``, ``domain_fake``, ``cycle`` and optionally ``identity``."""
    return (
        parts["adv"]
        + w.lambda_domain * parts["domain_fake"]
        + w.lambda_cyc * parts["cycle"]
        + w.lambda_id * parts.get("identity", 0.0)
    )
