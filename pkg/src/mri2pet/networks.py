"""3D generator/discriminator architectures: three stride-2 encoder stages,
six residual blocks at the bottleneck, a mirrored decoder with tanh output,
and a five-conv discriminator topped by three fully connected layers."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .conditioning import (
    CONDITIONING_MODES,
    condition_image_add,
    condition_latent_add,
    condition_latent_concat,
)


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int = 1
    encoder_channels: tuple[int, ...] = (32, 64, 128)
    resnet_blocks: int = 6
    out_channels: int = 1
    dropout_p: float = 0.0  # decoder dropout; doubles as the pix2pix noise source

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if len(self.encoder_channels) < 1:
            raise ValueError("need at least one encoder stage")
        if self.resnet_blocks < 0:
            raise ValueError("resnet_blocks must be >= 0")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))

    @property
    def bottleneck_channels(self) -> int:
        return self.encoder_channels[-1]

    @property
    def downsample_factor(self) -> int:
        return 2 ** len(self.encoder_channels)


@dataclass(frozen=True)
class DiscriminatorSpec:
    in_channels: int = 1
    conv_channels: tuple[int, ...] = (32, 64, 128, 256, 512)
    fc_features: tuple[int, ...] = (256, 128)

    def __post_init__(self):
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "fc_features", tuple(self.fc_features))

    @property
    def min_spatial(self) -> int:
        return 2 ** len(self.conv_channels)


class ResnetBlock3d(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv3d(channels, channels, 3, padding=1),
            nn.InstanceNorm3d(channels),
            nn.ReLU(inplace=True),
            nn.Conv3d(channels, channels, 3, padding=1),
            nn.InstanceNorm3d(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator3d(nn.Module):
    """Encoder / residual bottleneck / decoder translation network.

    Maps (B, in, D, H, W) -> (B, out, D, H, W) with tanh output; spatial dims
    must be divisible by 2**len(encoder_channels). The conditioning mode is
    fixed per instance and applied between encoder and residual blocks
    (or to the input image for image_add).
    """

    def __init__(self, spec: GeneratorSpec, conditioning: str = "none"):
        super().__init__()
        if conditioning not in CONDITIONING_MODES:
            raise ValueError(f"unknown conditioning mode {conditioning!r}")
        self.spec = spec
        self.conditioning = conditioning

        enc = []
        prev = spec.in_channels
        for ch in spec.encoder_channels:
            enc += [nn.Conv3d(prev, ch, 3, stride=2, padding=1),
                    nn.InstanceNorm3d(ch),
                    nn.ReLU(inplace=True)]
            prev = ch
        self.encoder = nn.Sequential(*enc)

        if conditioning == "latent_concat":
            self.fusion = nn.Conv3d(prev + 1, prev, kernel_size=1)
            with torch.no_grad():
                # keep the condition channel's initial weights small but alive
                self.fusion.weight[:, -1].normal_(0.0, 0.02)
        else:
            self.fusion = None

        self.blocks = nn.Sequential(*[ResnetBlock3d(prev) for _ in range(spec.resnet_blocks)])

        dec = []
        mirror = list(reversed(spec.encoder_channels))
        for i, ch in enumerate(mirror):
            last = i == len(mirror) - 1
            out_ch = spec.out_channels if last else mirror[i + 1]
            dec.append(nn.ConvTranspose3d(ch, out_ch, 3, stride=2, padding=1, output_padding=1))
            if not last:
                dec += [nn.InstanceNorm3d(out_ch), nn.ReLU(inplace=True)]
                if spec.dropout_p > 0:
                    dec.append(nn.Dropout3d(spec.dropout_p))
        dec.append(nn.Tanh())
        self.decoder = nn.Sequential(*dec)

    def _check_input(self, x: torch.Tensor):
        if x.ndim != 5 or x.shape[1] != self.spec.in_channels:
            raise ValueError(
                f"expected (B, {self.spec.in_channels}, D, H, W) input, got {tuple(x.shape)}"
            )
        k = self.spec.downsample_factor
        if any(s % k != 0 or s < k for s in x.shape[2:]):
            raise ValueError(f"spatial dims must be divisible by {k}, got {tuple(x.shape[2:])}")

    def _check_cond(self, abeta):
        if self.conditioning != "none" and abeta is None:
            raise ValueError(f"conditioning mode {self.conditioning!r} requires abeta")

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        return self.encoder(x)

    def bottleneck(self, x: torch.Tensor, abeta=None) -> torch.Tensor:
        """Post-conditioning bottleneck feature map (before residual blocks)."""
        self._check_cond(abeta)
        if self.conditioning == "image_add":
            x = condition_image_add(x, abeta)
        f = self.encode(x)
        if self.conditioning == "latent_add":
            f = condition_latent_add(f, abeta, self.spec.bottleneck_channels)
        elif self.conditioning == "latent_concat":
            f = condition_latent_concat(f, abeta, self.fusion)
        return f

    def decode(self, f: torch.Tensor) -> torch.Tensor:
        return self.decoder(f)

    def forward(self, x: torch.Tensor, abeta=None) -> torch.Tensor:
        f = self.bottleneck(x, abeta)
        return self.decode(self.blocks(f))


class Discriminator3d(nn.Module):
    """Five stride-2 convolutions, global average pooling, three FC layers
    ending in one pre-sigmoid score per input volume."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        layers = []
        prev = spec.in_channels
        n = len(spec.conv_channels)
        for i, ch in enumerate(spec.conv_channels):
            layers.append(nn.Conv3d(prev, ch, 4, stride=2, padding=1))
            # no norm on the first layer or the last (its output can be 1^3)
            if 0 < i < n - 1:
                layers.append(nn.InstanceNorm3d(ch))
            layers.append(nn.LeakyReLU(0.2, inplace=True))
            prev = ch
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool3d(1)
        fc = []
        for feat in spec.fc_features:
            fc += [nn.Linear(prev, feat), nn.LeakyReLU(0.2, inplace=True)]
            prev = feat
        fc.append(nn.Linear(prev, 1))
        self.head = nn.Sequential(*fc)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 5 or x.shape[1] != self.spec.in_channels:
            raise ValueError(
                f"expected (B, {self.spec.in_channels}, D, H, W) input, got {tuple(x.shape)}"
            )
        if min(x.shape[2:]) < self.spec.min_spatial:
            raise ValueError(
                f"spatial dims must be >= {self.spec.min_spatial} for "
                f"{len(self.spec.conv_channels)} stride-2 stages, got {tuple(x.shape[2:])}"
            )
        h = self.pool(self.features(x)).flatten(1)
        return self.head(h).squeeze(-1)


class SharedGenerator(nn.Module):
    """One parameter set serving both translation directions."""

    def __init__(self, net: Generator3d):
        super().__init__()
        self.net = net

    @property
    def conditioning(self) -> str:
        return self.net.conditioning

    def m2p(self, x, abeta=None):
        return self.net(x, abeta)

    def p2m(self, x, abeta=None):
        return self.net(x, abeta)

    def forward(self, x, abeta=None):
        return self.net(x, abeta)


def build_generator(spec: GeneratorSpec, conditioning: str = "none") -> Generator3d:
    return Generator3d(spec, conditioning)


def build_discriminator(spec: DiscriminatorSpec) -> Discriminator3d:
    return Discriminator3d(spec)


def tie_generators(g1: Generator3d, g2: Generator3d) -> SharedGenerator:
    if g1.spec != g2.spec:
        raise ValueError(f"generator specs differ: {g1.spec} vs {g2.spec}")
    if g1.conditioning != g2.conditioning:
        raise ValueError(
            f"conditioning modes differ: {g1.conditioning} vs {g2.conditioning}"
        )
    return SharedGenerator(g1)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
