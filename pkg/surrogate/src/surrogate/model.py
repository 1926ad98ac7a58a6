"""U-Net generator mapping refractivity rasters to gain rasters."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigurationError, InvalidInputError

LOSS_NAMES = ("L1", "L2")
CONDITIONING_MODES = ("none", "input_channel")


@dataclass(frozen=True)
class GeneratorConfig:
    """Architecture and optimization settings for one training run."""

    depth: int = 4
    base_channels: int = 32
    loss: str = "L1"
    epochs: int = 100
    batch_size: int = 4
    learning_rate: float = 2e-4
    seed: int = 0
    frequency_conditioning: str = "input_channel"
    skip_connections: bool = True

    def __post_init__(self) -> None:
        if int(self.depth) < 2:
            raise ConfigurationError(f"depth must be >= 2, got {self.depth}")
        if int(self.base_channels) < 1:
            raise ConfigurationError(
                f"base_channels must be >= 1, got {self.base_channels}"
            )
        if self.loss not in LOSS_NAMES:
            raise ConfigurationError(
                f"loss must be one of {LOSS_NAMES}, got {self.loss!r}"
            )
        if int(self.epochs) < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise ConfigurationError(
                f"batch_size must be >= 1, got {self.batch_size}"
            )
        if not self.learning_rate > 0:
            raise ConfigurationError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError(f"seed must be a u64, got {self.seed}")
        if self.frequency_conditioning not in CONDITIONING_MODES:
            raise ConfigurationError(
                f"frequency_conditioning must be one of {CONDITIONING_MODES}, "
                f"got {self.frequency_conditioning!r}"
            )

    @property
    def in_channels(self) -> int:
        return 2 if self.frequency_conditioning == "input_channel" else 1

    def loss_module(self) -> nn.Module:
        return nn.L1Loss() if self.loss == "L1" else nn.MSELoss()

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "base_channels": self.base_channels,
            "loss": self.loss,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "frequency_conditioning": self.frequency_conditioning,
            "skip_connections": self.skip_connections,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        return cls(**data)


def _conv_block(in_ch: int, out_ch: int) -> nn.Sequential:
    # GroupNorm keeps the block independent of batch size, so batch 1
    # desk runs and batched runs share statistics
    groups = min(8, out_ch)
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1),
        nn.GroupNorm(groups, out_ch),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, kernel_size=3, padding=1),
        nn.GroupNorm(groups, out_ch),
        nn.ReLU(inplace=True),
    )


class UNetGenerator(nn.Module):
    """Contracting/expanding convolutional generator with skip links.

    The final sigmoid saturates outputs into [0, 1], matching the
    normalized target range. ``skip_connections=False`` keeps the same
    channel budget but feeds the decoder only the upsampled stream
    (explicitly supported so the skips' contribution is ablatable).
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        c = int(config.base_channels)
        depth = int(config.depth)

        self.encoders = nn.ModuleList()
        in_ch = config.in_channels
        channels = []
        for level in range(depth):
            out_ch = c * (2**level)
            self.encoders.append(_conv_block(in_ch, out_ch))
            channels.append(out_ch)
            in_ch = out_ch
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _conv_block(in_ch, c * (2**depth))

        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        up_in = c * (2**depth)
        for level in reversed(range(depth)):
            skip_ch = channels[level]
            self.upsamplers.append(
                nn.ConvTranspose2d(up_in, skip_ch, kernel_size=2, stride=2)
            )
            dec_in = skip_ch * 2 if config.skip_connections else skip_ch
            self.decoders.append(_conv_block(dec_in, skip_ch))
            up_in = skip_ch
        self.head = nn.Conv2d(c, 1, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise InvalidInputError(
                f"expected (batch, {self.config.in_channels}, H, W) input, "
                f"got {tuple(x.shape)}"
            )
        factor = 2 ** int(self.config.depth)
        if x.shape[-2] % factor or x.shape[-1] % factor:
            raise InvalidInputError(
                f"spatial size {tuple(x.shape[-2:])} must be divisible by "
                f"{factor} for depth {self.config.depth}"
            )
        skips = []
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for upsample, decoder, skip in zip(
            self.upsamplers, self.decoders, reversed(skips)
        ):
            x = upsample(x)
            if self.config.skip_connections:
                x = torch.cat([skip, x], dim=1)
            x = decoder(x)
        return torch.sigmoid(self.head(x))


def build_model(config: GeneratorConfig) -> UNetGenerator:
    """Seeded construction so two builds share their initial weights."""
    torch.manual_seed(config.seed)
    return UNetGenerator(config)
