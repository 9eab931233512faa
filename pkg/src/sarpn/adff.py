"""Adaptive dense feature fusion: one multi-scale fusion unit per pyramid level."""

from torch import nn

from .errors import ConfigurationError
from .nn import Conv2d, bilinear_resize, concat_channels, relu


class RefineBlock(nn.Module):
    """``relu(x + conv(relu(conv(x))))`` with 3x3 convs; shape preserving."""

    def __init__(self, channels):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, padding=1)
        self.conv2 = Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return relu(x + self.conv2(relu(self.conv1(x))))


class MFF(nn.Module):
    """Fuses every encoder level at the resolution of one target level."""

    def __init__(self, encoder_channels, fused_channels):
        super().__init__()
        self.refine = nn.ModuleList(RefineBlock(c) for c in encoder_channels)
        self.reduce = Conv2d(sum(encoder_channels), fused_channels, 1)

    def forward(self, pyramid, size):
        if len(pyramid) != len(self.refine):
            raise ConfigurationError(f"MFF built for {len(self.refine)} levels, got {len(pyramid)}")
        parts = [blk(bilinear_resize(f, *size)) for blk, f in zip(self.refine, pyramid)]
        return self.reduce(concat_channels(parts))


class ADFF(nn.Module):
    def __init__(self, encoder_channels, fused_channels=64):
        super().__init__()
        self.fused_channels = fused_channels
        self.units = nn.ModuleList(
            MFF(encoder_channels, fused_channels) for _ in encoder_channels
        )

    def mff(self, pyramid, target_level):
        """Fused map for 1-based ``target_level``."""
        levels = len(self.units)
        if not 1 <= target_level <= levels:
            raise ConfigurationError(f"target level {target_level} outside 1..{levels}")
        size = tuple(pyramid[target_level - 1].shape[-2:])
        return self.units[target_level - 1](pyramid, size)

    def forward(self, pyramid):
        return [self.mff(pyramid, i) for i in range(1, len(self.units) + 1)]


def build_fused_pyramid(encoder_pyramid, params: ADFF):
    return params(encoder_pyramid)
