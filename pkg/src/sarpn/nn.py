"""Numeric primitives shared by the network modules.

Feature maps are torch tensors laid out ``(C, H, W)`` or batched
``(N, C, H, W)``.  Autograd provides the derivatives; every op here is a
thin validated wrapper so shape errors surface as ``ConfigurationError``
instead of deep inside torch.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError


def _batched(x):
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise ConfigurationError(f"feature map must be rank 3 or 4, got shape {tuple(x.shape)}")


def conv_output_size(size, kernel_size, stride=1, padding=0):
    return (size + 2 * padding - kernel_size) // stride + 1


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("conv channel counts must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.stride < 1 or self.padding < 0:
            raise ConfigurationError("stride must be >= 1 and padding >= 0")


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Zero-padded 2-D cross-correlation."""
    xb, squeeze = _batched(x)
    out_c, in_c, kh, kw = weight.shape
    if xb.shape[1] != in_c:
        raise ConfigurationError(f"conv expects {in_c} input channels, got {xb.shape[1]}")
    oh = conv_output_size(xb.shape[2], kh, stride, padding)
    ow = conv_output_size(xb.shape[3], kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ConfigurationError(
            f"conv output size {oh}x{ow} is not positive for input {xb.shape[2]}x{xb.shape[3]}"
        )
    out = F.conv2d(xb, weight, bias, stride=stride, padding=padding)
    return out[0] if squeeze else out


def bilinear_resize(x, out_height, out_width):
    """Corner-aligned bilinear resampling.

    Source coordinate of output index ``k`` is ``k * (in - 1) / (out - 1)``;
    an output extent of 1 samples source index 0.
    """
    if out_height < 1 or out_width < 1:
        raise ConfigurationError(f"resize target must be positive, got {out_height}x{out_width}")
    xb, squeeze = _batched(x)
    if xb.shape[-2:] == (out_height, out_width):
        out = xb
    else:
        out = F.interpolate(xb, size=(out_height, out_width), mode="bilinear", align_corners=True)
    return out[0] if squeeze else out


def global_avg_pool(x):
    """Per-channel spatial mean: ``(C, H, W) -> (C,)`` or ``(N, C, H, W) -> (N, C)``."""
    if x.dim() not in (3, 4):
        raise ConfigurationError(f"feature map must be rank 3 or 4, got shape {tuple(x.shape)}")
    return x.mean(dim=(-2, -1))


def concat_channels(maps):
    if not maps:
        raise ConfigurationError("concat_channels needs at least one map")
    size = maps[0].shape[-2:]
    for m in maps[1:]:
        if m.shape[-2:] != size:
            raise ConfigurationError(
                f"spatial mismatch in concat: {tuple(size)} vs {tuple(m.shape[-2:])}"
            )
    return torch.cat(list(maps), dim=-3)


def avg_pool2(x):
    """Exact 2x2 block mean; both spatial extents must be even."""
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ConfigurationError(f"2x2 pooling needs even sizes, got {h}x{w}")
    xb, squeeze = _batched(x)
    out = F.avg_pool2d(xb, 2)
    return out[0] if squeeze else out


relu = F.relu
sigmoid = torch.sigmoid


class Conv2d(nn.Module):
    """Parameter holder for :func:`conv2d` with fan-in (Kaiming) initialisation."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=None, init_scale=1.0):
        super().__init__()
        if padding is None:
            padding = kernel_size // 2
        self.spec = ConvSpec(in_channels, out_channels, kernel_size, stride, padding)
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        fan_in = in_channels * kernel_size * kernel_size
        nn.init.normal_(self.weight, 0.0, init_scale * math.sqrt(2.0 / fan_in))

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.spec.stride, self.spec.padding)

    def zero_(self):
        with torch.no_grad():
            self.weight.zero_()
            self.bias.zero_()
        return self

    def extra_repr(self):
        s = self.spec
        return f"{s.in_channels}, {s.out_channels}, k={s.kernel_size}, s={s.stride}, p={s.padding}"


class Linear(nn.Module):
    def __init__(self, in_features, out_features):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features))
        nn.init.normal_(self.weight, 0.0, math.sqrt(2.0 / in_features))

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)
