"""Residual pyramid decoder and the plain upsampling decoder used for ablation."""

from dataclasses import dataclass, field

from torch import nn

from .adff import RefineBlock
from .errors import ConfigurationError
from .nn import Conv2d, avg_pool2, bilinear_resize, concat_channels, relu

# depth-emitting convs start small so the initial pyramid sits near init_depth
OUTPUT_INIT_SCALE = 0.01


@dataclass
class DepthPyramid:
    """``depths[k]`` is level ``k + 1`` (finest first); ``residuals[k]`` likewise.

    Maps are ``(N, 1, h, w)`` tensors.  The residual list has one entry per
    refined level (``L - 1``) and is empty for the baseline decoder.
    """

    depths: list
    residuals: list = field(default_factory=list)

    @property
    def levels(self):
        return len(self.depths)

    @property
    def finest(self):
        return self.depths[0]


class TopPredictor(nn.Module):
    """Coarsest depth from the top encoder map and the top fused map."""

    def __init__(self, encoder_channels, fused_channels, init_depth=0.0):
        super().__init__()
        self.reduce = Conv2d(encoder_channels, fused_channels, 1)
        self.refine = RefineBlock(2 * fused_channels)
        self.head = Conv2d(2 * fused_channels, 1, 3, padding=1, init_scale=OUTPUT_INIT_SCALE)
        nn.init.constant_(self.head.bias, init_depth)

    def forward(self, encoder_top, fused_top):
        if encoder_top.shape[-2:] != fused_top.shape[-2:]:
            raise ConfigurationError(
                f"top maps differ in size: {tuple(encoder_top.shape[-2:])} vs {tuple(fused_top.shape[-2:])}"
            )
        x = concat_channels([self.reduce(encoder_top), fused_top])
        return self.head(self.refine(x))


class ResidualHead(nn.Module):
    def __init__(self, in_channels, hidden):
        super().__init__()
        self.conv1 = Conv2d(in_channels, hidden, 3, padding=1)
        self.conv2 = Conv2d(hidden, 1, 3, padding=1, init_scale=OUTPUT_INIT_SCALE)

    def forward(self, x):
        return self.conv2(relu(self.conv1(x)))


class DepthRefine(nn.Module):
    """Three 3x3 convs on a one-channel depth map, with an identity skip."""

    def __init__(self, hidden):
        super().__init__()
        self.conv1 = Conv2d(1, hidden, 3, padding=1)
        self.conv2 = Conv2d(hidden, hidden, 3, padding=1)
        self.conv3 = Conv2d(hidden, 1, 3, padding=1, init_scale=OUTPUT_INIT_SCALE)

    def forward(self, x):
        return x + self.conv3(relu(self.conv2(relu(self.conv1(x)))))


class RRM(nn.Module):
    """Residual refinement: upsample coarser depth, add predicted residual, refine."""

    def __init__(self, feature_channels, hidden, refine_channels):
        super().__init__()
        self.residual = ResidualHead(feature_channels, hidden)
        self.refine = DepthRefine(refine_channels)

    def forward(self, coarser, features):
        h, w = features.shape[-2:]
        ch, cw = coarser.shape[-2:]
        if (2 * ch, 2 * cw) != (h, w):
            raise ConfigurationError(
                f"coarser depth {ch}x{cw} is not one level above features {h}x{w}"
            )
        up = bilinear_resize(coarser, h, w)
        res = self.residual(features)
        return self.refine(up + res), res

    def zero_(self):
        for m in self.modules():
            if isinstance(m, Conv2d):
                m.zero_()
        return self


class ResidualPyramidDecoder(nn.Module):
    def __init__(self, encoder_channels, feature_channels, hidden=64, refine_channels=16, init_depth=0.0):
        super().__init__()
        if len(encoder_channels) != len(feature_channels):
            raise ConfigurationError("encoder and feature pyramids must have the same level count")
        self.top = TopPredictor(encoder_channels[-1], feature_channels[-1], init_depth)
        # rrms[k] refines level k + 1
        self.rrms = nn.ModuleList(
            RRM(c, hidden, refine_channels) for c in feature_channels[:-1]
        )

    def forward(self, encoder, fused):
        levels = len(encoder)
        if len(fused) != levels:
            raise ConfigurationError(f"pyramid level mismatch: {levels} vs {len(fused)}")
        depths = [None] * levels
        residuals = [None] * (levels - 1)
        depths[-1] = self.top(encoder[-1], fused[-1])
        for k in range(levels - 2, -1, -1):
            depths[k], residuals[k] = self.rrms[k](depths[k + 1], fused[k])
        return DepthPyramid(depths, residuals)


def decode(encoder, fused, params: ResidualPyramidDecoder):
    return params(encoder, fused)


class UpsamplingTrunk(nn.Module):
    """Sequential upsampling path with encoder skips.

    Returns a width-``width`` feature map per level, finest first, so it can
    stand in for the fused pyramid.
    """

    def __init__(self, encoder_channels, width=64):
        super().__init__()
        self.entry = Conv2d(encoder_channels[-1], width, 1)
        self.entry_refine = RefineBlock(width)
        self.reduce = nn.ModuleList(Conv2d(width + c, width, 1) for c in encoder_channels[:-1])
        self.refine = nn.ModuleList(RefineBlock(width) for _ in encoder_channels[:-1])

    def forward(self, encoder):
        x = self.entry_refine(self.entry(encoder[-1]))
        features = [x]
        for k in range(len(encoder) - 2, -1, -1):
            skip = encoder[k]
            x = bilinear_resize(x, *skip.shape[-2:])
            x = self.refine[k](self.reduce[k](concat_channels([x, skip])))
            features.append(x)
        return features[::-1]


class BaselineDecoder(nn.Module):
    """Upsampling trunk plus a single depth head at the finest level.

    Coarser levels of the returned pyramid are 2x2 means of the finest map so
    the multi-scale loss applies unchanged.
    """

    def __init__(self, encoder_channels, width=64, init_depth=0.0):
        super().__init__()
        self.trunk = UpsamplingTrunk(encoder_channels, width)
        self.head = Conv2d(width, 1, 3, padding=1, init_scale=OUTPUT_INIT_SCALE)
        nn.init.constant_(self.head.bias, init_depth)

    def forward(self, encoder, fused=None):
        finest = self.head(self.trunk(encoder)[0])
        depths = [finest]
        for _ in range(len(encoder) - 1):
            depths.append(avg_pool2(depths[-1]))
        return DepthPyramid(depths, [])
