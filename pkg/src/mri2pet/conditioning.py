"""Injection of the normalized plasma Abeta42/40 scalar into a generator:
added to the input image, added to the bottleneck features, or concatenated
as an extra bottleneck channel and fused by a 1x1x1 convolution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

CONDITIONING_MODES = ("none", "image_add", "latent_add", "latent_concat")


@dataclass(frozen=True)
class ConditioningPayload:
    mode: str
    abeta_norm: float

    def __post_init__(self):
        if self.mode not in CONDITIONING_MODES:
            raise ValueError(f"unknown conditioning mode {self.mode!r}")
        if not np.isfinite(self.abeta_norm):
            raise ValueError("abeta_norm must be finite")


def _as_field(abeta, like: torch.Tensor) -> torch.Tensor:
    """Shape a scalar or per-batch vector so it broadcasts over (B?,C,D,H,W)."""
    t = torch.as_tensor(abeta, dtype=like.dtype, device=like.device)
    if t.ndim == 0:
        return t
    if t.ndim == 1 and like.ndim == 5 and t.shape[0] == like.shape[0]:
        return t.view(-1, 1, 1, 1, 1)
    raise ValueError(
        f"abeta must be a scalar or a ({like.shape[0]},) batch vector, got shape {tuple(t.shape)}"
    )


def condition_image_add(x: torch.Tensor, abeta) -> torch.Tensor:
    """Add the broadcast condition value to the input image."""
    return x + _as_field(abeta, x)


def condition_latent_add(
    f: torch.Tensor, abeta, expected_channels: int | None = 128
) -> torch.Tensor:
    """Add the broadcast condition value across all bottleneck channels."""
    ch = f.shape[-4]
    if expected_channels is not None and ch != expected_channels:
        raise ValueError(f"bottleneck has {ch} channels, expected {expected_channels}")
    return f + _as_field(abeta, f)


def stack_condition_channel(f: torch.Tensor, abeta) -> torch.Tensor:
    """Concatenate one constant condition channel: (...,C,D,H,W) -> (...,C+1,D,H,W)."""
    field = _as_field(abeta, f)
    channel = torch.ones_like(f.narrow(-4, 0, 1)) * field
    return torch.cat([f, channel], dim=-4)


def condition_latent_concat(
    f: torch.Tensor, abeta, fusion: torch.nn.Conv3d
) -> torch.Tensor:
    """Concatenate the condition channel and fuse back to C channels via the
    learned 1x1x1 convolution."""
    ch = f.shape[-4]
    if ch != fusion.in_channels - 1:
        raise ValueError(
            f"bottleneck has {ch} channels, fusion expects {fusion.in_channels - 1}"
        )
    stacked = stack_condition_channel(f, abeta)
    if stacked.ndim == 4:
        return fusion(stacked.unsqueeze(0)).squeeze(0)
    return fusion(stacked)
