"""Adversarial, reconstruction, and composite objectives for the three
translation models. Adversarial terms use the numerically stable log-sigmoid
form; composites are plain weighted sums over precomputed term values."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class LossWeights:
    lambda_l1: float = 100.0       # paired L1 weight (pix2pix); not stated upstream, canonical default
    lambda_cyc1: float = 10.0
    lambda_cyc2: float = 10.0
    lambda_idt: float = 0.3
    lambda_cls: float = 0.0        # diagnosis-classifier branch stays disabled

    def __post_init__(self):
        for name in ("lambda_l1", "lambda_cyc1", "lambda_cyc2", "lambda_idt", "lambda_cls"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.lambda_cls != 0.0:
            raise ValueError("lambda_cls must be 0 (classification branch is disabled)")


@dataclass(frozen=True)
class CompositeTerms:
    """Scalar loss components feeding a cycle-model composite."""

    adv_m2p: float | torch.Tensor = 0.0   # generator adversarial term, MRI->PET
    adv_p2m: float | torch.Tensor = 0.0
    cycle_m: float | torch.Tensor = 0.0   # MRI -> PET -> MRI reconstruction
    cycle_p: float | torch.Tensor = 0.0
    identity: float | torch.Tensor = 0.0


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def cgan_loss(real_scores, fake_scores):
    """Cross-entropy adversarial terms from pre-sigmoid discriminator scores.

    Returns (gen_term, disc_term): the discriminator minimizes
    -E[log s(real)] - E[log(1 - s(fake))]; the generator minimizes the
    non-saturating -E[log s(fake)].
    """
    real = _as_tensor(real_scores)
    fake = _as_tensor(fake_scores)
    if real.numel() == 0 or fake.numel() == 0:
        raise ValueError("empty score batch")
    disc = -F.logsigmoid(real).mean() - F.logsigmoid(-fake).mean()
    gen = -F.logsigmoid(fake).mean()
    return gen, disc


def lsgan_loss(real_scores, fake_scores):
    """Least-squares alternative to cgan_loss (off by default)."""
    real = _as_tensor(real_scores)
    fake = _as_tensor(fake_scores)
    if real.numel() == 0 or fake.numel() == 0:
        raise ValueError("empty score batch")
    disc = ((real - 1.0) ** 2).mean() + (fake ** 2).mean()
    gen = ((fake - 1.0) ** 2).mean()
    return gen, disc


def l1_loss(y_hat, y):
    y_hat, y = _as_tensor(y_hat), _as_tensor(y)
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(y_hat.shape)} vs {tuple(y.shape)}")
    return (y_hat - y).abs().mean()


def cycle_loss(x, x_reconstructed):
    """Mean absolute error between a volume and its two-hop reconstruction."""
    return l1_loss(x_reconstructed, x)


def identity_loss(g_same_domain_out, x, g_other_out=None, x_other=None):
    """L1 penalty for a generator fed its own output domain; both domains are
    summed when the second pair is supplied."""
    total = l1_loss(g_same_domain_out, x)
    if g_other_out is not None:
        total = total + l1_loss(g_other_out, x_other)
    return total


def pix2pix_objective(gen_adv_term, l1_value, w: LossWeights):
    return gen_adv_term + w.lambda_l1 * l1_value


def cyclegan_objective(terms: CompositeTerms, w: LossWeights):
    return (
        terms.adv_m2p
        + terms.adv_p2m
        + w.lambda_cyc1 * terms.cycle_m
        + w.lambda_cyc2 * terms.cycle_p
        + w.lambda_idt * terms.identity
    )


def sharegan_objective(terms: CompositeTerms, w: LossWeights):
    # identical composite; the classifier term is pinned to zero by LossWeights
    if w.lambda_cls != 0.0:
        raise ValueError("lambda_cls must be 0")
    return cyclegan_objective(terms, w)
