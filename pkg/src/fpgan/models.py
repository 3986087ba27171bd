"""Generator and two-headed discriminator.

The generator is a residual encoder-decoder conditioned on a binary domain
vector; the vector is tiled into constant planes and concatenated to the
input channels. With ``delta=True`` the network output is treated as a
residual added to the input before the final ``tanh``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
from torch import Tensor, nn


class ConfigError(ValueError):
    """Raised for an invalid architecture or training configuration."""


@dataclass(frozen=True)
class ArchConfig:
    image_size: int = 64
    image_channels: int = 1
    domain_dim: int = 1
    base_width: int = 64
    n_residual_blocks: int = 6
    n_disc_layers: int | None = None
    disc_base_width: int | None = None

    def __post_init__(self):
        if self.n_disc_layers is None:
            object.__setattr__(self, "n_disc_layers", self.default_disc_layers(self.image_size))
        if self.disc_base_width is None:
            object.__setattr__(self, "disc_base_width", self.base_width)
        self.validate()

    @staticmethod
    def default_disc_layers(image_size: int) -> int:
        if image_size >= 128:
            return 6
        return max(1, int(math.log2(max(image_size, 2))) - 1)

    def validate(self) -> None:
        size = self.image_size
        if size < 4 or size & (size - 1):
            raise ConfigError(f"image_size must be a power of two >= 4, got {size}")
        if self.image_channels not in (1, 3):
            raise ConfigError(f"image_channels must be 1 or 3, got {self.image_channels}")
        if self.domain_dim < 1:
            raise ConfigError("domain_dim must be >= 1")
        if self.base_width < 1 or self.disc_base_width < 1:
            raise ConfigError("base widths must be positive")
        if self.n_residual_blocks < 0:
            raise ConfigError("n_residual_blocks must be >= 0")
        if self.n_disc_layers < 1 or size < 2 ** self.n_disc_layers:
            raise ConfigError(
                f"image_size {size} too small for {self.n_disc_layers} discriminator layers"
            )

    def to_dict(self) -> dict:
        return asdict(self)


def _check_images(x: Tensor, arch: ArchConfig) -> None:
    expected = (arch.image_channels, arch.image_size, arch.image_size)
    if x.dim() != 4 or tuple(x.shape[1:]) != expected:
        raise ValueError(f"expected images of shape (N, {expected}), got {tuple(x.shape)}")


def _check_labels(x: Tensor, c: Tensor, arch: ArchConfig) -> None:
    if c.dim() != 2 or c.shape[0] != x.shape[0] or c.shape[1] != arch.domain_dim:
        raise ValueError(
            f"expected domain vectors of shape ({x.shape[0]}, {arch.domain_dim}), got {tuple(c.shape)}"
        )


class ResidualBlock(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.main = nn.Sequential(
            nn.Conv2d(dim, dim, 3, 1, 1, bias=False),
            nn.InstanceNorm2d(dim, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(dim, dim, 3, 1, 1, bias=False),
            nn.InstanceNorm2d(dim, affine=True),
        )

    def forward(self, x: Tensor) -> Tensor:
        return x + self.main(x)


class GeneratorNet(nn.Module):
    def __init__(self, arch: ArchConfig, delta: bool = True):
        super().__init__()
        self.arch = arch
        self.delta = delta
        width = arch.base_width
        layers = [
            nn.Conv2d(arch.image_channels + arch.domain_dim, width, 7, 1, 3, bias=False),
            nn.InstanceNorm2d(width, affine=True),
            nn.ReLU(inplace=True),
        ]
        for _ in range(2):
            layers += [
                nn.Conv2d(width, width * 2, 4, 2, 1, bias=False),
                nn.InstanceNorm2d(width * 2, affine=True),
                nn.ReLU(inplace=True),
            ]
            width *= 2
        layers += [ResidualBlock(width) for _ in range(arch.n_residual_blocks)]
        for _ in range(2):
            layers += [
                nn.ConvTranspose2d(width, width // 2, 4, 2, 1, bias=False),
                nn.InstanceNorm2d(width // 2, affine=True),
                nn.ReLU(inplace=True),
            ]
            width //= 2
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv2d(width, arch.image_channels, 7, 1, 3, bias=True)

    def forward(self, x: Tensor, c: Tensor) -> Tensor:
        """Raw network output (the delta map in residual mode)."""
        _check_images(x, self.arch)
        _check_labels(x, c, self.arch)
        planes = c.to(x.dtype)[:, :, None, None].expand(-1, -1, x.shape[2], x.shape[3])
        return self.head(self.body(torch.cat([x, planes], dim=1)))


class DiscriminatorNet(nn.Module):
    """PatchGAN-style critic with an auxiliary domain classifier head."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        layers = []
        in_dim, out_dim = arch.image_channels, arch.disc_base_width
        for _ in range(arch.n_disc_layers):
            layers += [nn.Conv2d(in_dim, out_dim, 4, 2, 1), nn.LeakyReLU(0.01)]
            in_dim, out_dim = out_dim, out_dim * 2
        self.main = nn.Sequential(*layers)
        final = arch.image_size // 2 ** arch.n_disc_layers
        self.critic = nn.Conv2d(in_dim, 1, 3, 1, 1, bias=False)
        self.domain = nn.Conv2d(in_dim, arch.domain_dim, final, bias=False)

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        _check_images(x, self.arch)
        h = self.main(x)
        return self.critic(h), self.domain(h).flatten(1)


def build_generator(arch: ArchConfig, seed: int, delta: bool = True) -> GeneratorNet:
    arch.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = GeneratorNet(arch, delta=delta)
    return net


def build_discriminator(arch: ArchConfig, seed: int) -> DiscriminatorNet:
    arch.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = DiscriminatorNet(arch)
    return net


def delta_map(G: GeneratorNet, x: Tensor, c: Tensor) -> Tensor:
    return G(x, c)


def translate(G: GeneratorNet, x: Tensor, c: Tensor) -> Tensor:
    """Translate ``x`` to domain ``c``; output lies in (-1, 1).

    Residual generators return ``tanh(delta + x)``, direct ones ``tanh(out)``.
    """
    out = G(x, c)
    if G.delta:
        out = out + x
    return torch.tanh(out)


def discriminate(D, x: Tensor) -> tuple[Tensor, Tensor]:
    """Per-image critic scalars (spatial mean of the score map) and domain logits.

    ``D`` may be any callable returning ``(score_map, logits)``; a score map
    that is already one scalar per image passes through unchanged.
    """
    scores, logits = D(x)
    if scores.dim() > 1:
        scores = scores.flatten(1).mean(dim=1)
    return scores, logits


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def zero_head(G: GeneratorNet) -> None:
    """Zero the final layer so the raw output is identically 0."""
    with torch.no_grad():
        G.head.weight.zero_()
        G.head.bias.zero_()
