"""SE-gated strided CNN producing the halving feature pyramid."""

from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigurationError
from .nn import Conv2d, Linear, global_avg_pool, relu, sigmoid


@dataclass
class EncoderConfig:
    levels: int = 5
    stage_channels: list = field(default_factory=lambda: [16, 32, 64, 128, 256])
    se_reduction: int = 4
    input_height: int = 64
    input_width: int = 64

    def __post_init__(self):
        self.stage_channels = [int(c) for c in self.stage_channels]
        if self.levels < 1:
            raise ConfigurationError(f"levels must be >= 1, got {self.levels}")
        if len(self.stage_channels) != self.levels:
            raise ConfigurationError(
                f"stage_channels has {len(self.stage_channels)} entries for {self.levels} levels"
            )
        if self.se_reduction < 1:
            raise ConfigurationError("se_reduction must be positive")
        for c in self.stage_channels:
            if c < 1 or c % self.se_reduction:
                raise ConfigurationError(
                    f"stage width {c} is not a positive multiple of se_reduction={self.se_reduction}"
                )
        check_divisible(self.input_height, self.input_width, self.levels)

    def level_size(self, i):
        """Spatial size of pyramid level ``i`` (1-based)."""
        return self.input_height >> i, self.input_width >> i


def check_divisible(height, width, levels):
    step = 2 ** levels
    if height < 1 or width < 1 or height % step or width % step:
        raise ConfigurationError(
            f"input size {height}x{width} is not divisible by 2^{levels}={step}"
        )


def se_block(x, reduction, w1, b1, w2, b2):
    """Squeeze-excitation gating written out as plain tensor ops.

    ``w1``/``b1`` map channels to channels/reduction, ``w2``/``b2`` map back.
    """
    channels = x.shape[-3]
    if reduction < 1 or channels % reduction:
        raise ConfigurationError(f"{channels} channels not divisible by reduction {reduction}")
    squeezed = global_avg_pool(x)
    gate = sigmoid(relu(squeezed @ w1.T + b1) @ w2.T + b2)
    return x * gate[..., :, None, None]


class SEBlock(nn.Module):
    def __init__(self, channels, reduction=4):
        super().__init__()
        if channels % reduction:
            raise ConfigurationError(f"{channels} channels not divisible by reduction {reduction}")
        self.reduction = reduction
        self.fc1 = Linear(channels, channels // reduction)
        self.fc2 = Linear(channels // reduction, channels)
        # gates start near sigmoid(0) = 0.5
        nn.init.normal_(self.fc2.weight, 0.0, 1e-2)

    def gate(self, x):
        s = global_avg_pool(x)
        return sigmoid(self.fc2(relu(self.fc1(s))))

    def forward(self, x):
        return se_block(x, self.reduction, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias)


class EncoderStage(nn.Module):
    """stride-2 conv, ReLU, conv, ReLU, SE gate."""

    def __init__(self, in_channels, out_channels, reduction):
        super().__init__()
        self.down = Conv2d(in_channels, out_channels, 3, stride=2, padding=1)
        self.conv = Conv2d(out_channels, out_channels, 3, padding=1)
        self.se = SEBlock(out_channels, reduction)

    def forward(self, x):
        return self.se(relu(self.conv(relu(self.down(x)))))


class Encoder(nn.Module):
    def __init__(self, config: EncoderConfig, in_channels=3):
        super().__init__()
        self.config = config
        widths = [in_channels] + list(config.stage_channels)
        self.stages = nn.ModuleList(
            EncoderStage(widths[i], widths[i + 1], config.se_reduction) for i in range(config.levels)
        )

    def forward(self, image):
        """Return ``[F_1, ..., F_L]`` with ``F_i`` at ``(H / 2^i, W / 2^i)``."""
        h, w = image.shape[-2:]
        if (h, w) != (self.config.input_height, self.config.input_width):
            check_divisible(h, w, self.config.levels)
        maps = []
        x = image
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps


def encode(image, config: EncoderConfig, params: Encoder):
    if image.shape[-3] != 3:
        raise ConfigurationError(f"encoder expects an RGB image, got {image.shape[-3]} channels")
    check_divisible(image.shape[-2], image.shape[-1], config.levels)
    return params(image)
