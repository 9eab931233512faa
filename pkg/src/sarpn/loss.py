"""Multi-scale depth objective: log depth error, log gradient error and normal disagreement.

Every term is a masked mean: ground-truth pixels <= 0 are holes and are
excluded, as is any finite difference that touches a hole.
"""

from dataclasses import dataclass

import torch

from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.5
    epsilon_depth: float = 1e-3

    def __post_init__(self):
        if not self.alpha > 0 or not self.epsilon_depth > 0:
            raise ConfigurationError("alpha and epsilon_depth must be positive")


@dataclass
class LevelLoss:
    l_depth: torch.Tensor
    l_grad: torch.Tensor
    l_normal: torch.Tensor

    @property
    def total(self):
        return self.l_depth + self.l_grad + self.l_normal


@dataclass
class LossBreakdown:
    per_level: list
    total: torch.Tensor

    def summary(self):
        """Float totals of each term summed over levels."""
        return {
            "total_loss": float(self.total.detach()),
            "l_depth": float(sum(t.l_depth.detach() for t in self.per_level)),
            "l_grad": float(sum(t.l_grad.detach() for t in self.per_level)),
            "l_normal": float(sum(t.l_normal.detach() for t in self.per_level)),
        }


def _check_pair(d, g, min_size=1):
    if d.shape != g.shape:
        raise ConfigurationError(f"prediction {tuple(d.shape)} and target {tuple(g.shape)} differ")
    if d.shape[-1] < min_size or d.shape[-2] < min_size:
        raise ConfigurationError(f"map must be at least {min_size}x{min_size}")


def _forward_diff(x):
    """Forward differences along x and y; the last column/row difference is 0."""
    dx = torch.zeros_like(x)
    dy = torch.zeros_like(x)
    dx[..., :, :-1] = x[..., :, 1:] - x[..., :, :-1]
    dy[..., :-1, :] = x[..., 1:, :] - x[..., :-1, :]
    return dx, dy


def _diff_masks(valid):
    mx = valid.clone()
    my = valid.clone()
    mx[..., :, :-1] = valid[..., :, 1:] & valid[..., :, :-1]
    my[..., :-1, :] = valid[..., 1:, :] & valid[..., :-1, :]
    return mx, my


def _masked_mean(values, mask):
    n = mask.sum()
    if n == 0:
        raise DataError("no valid ground-truth pixels")
    return values[mask].sum() / n


def l_depth(d, g, cfg=LossConfig()):
    _check_pair(d, g)
    d = d.clamp(min=cfg.epsilon_depth)
    return _masked_mean(torch.log((d - g).abs() + cfg.alpha), g > 0)


def l_grad(d, g, cfg=LossConfig()):
    _check_pair(d, g, 2)
    d = d.clamp(min=cfg.epsilon_depth)
    ex, ey = _forward_diff(d - g)
    mx, my = _diff_masks(g > 0)
    return _masked_mean(torch.log(ex.abs() + cfg.alpha), mx) + _masked_mean(
        torch.log(ey.abs() + cfg.alpha), my
    )


def surface_normals(depth):
    """Unnormalised normals ``(-dz/dx, -dz/dy, 1)`` stacked on a new last axis."""
    dx, dy = _forward_diff(depth)
    return torch.stack([-dx, -dy, torch.ones_like(depth)], dim=-1)


def l_normal(d, g, cfg=None):
    _check_pair(d, g, 2)
    if cfg is not None:
        d = d.clamp(min=cfg.epsilon_depth)
    nd = surface_normals(d)
    ng = surface_normals(g)
    cos = (nd * ng).sum(-1) / (nd.norm(dim=-1) * ng.norm(dim=-1))
    mx, my = _diff_masks(g > 0)
    return _masked_mean(1.0 - cos, mx & my)


def level_loss(d, g, cfg=LossConfig()):
    d = d.clamp(min=cfg.epsilon_depth)
    return LevelLoss(l_depth(d, g, cfg), l_grad(d, g, cfg), l_normal(d, g))


def total_loss(pred, gt, cfg=LossConfig()):
    """Unweighted sum of the three terms over every level.

    ``pred`` is a :class:`~sarpn.rpd.DepthPyramid` (or a plain list of maps)
    and ``gt`` the matching ground-truth pyramid, finest level first.
    """
    depths = pred.depths if hasattr(pred, "depths") else list(pred)
    gt_maps = gt.maps if hasattr(gt, "maps") else list(gt)
    if len(depths) != len(gt_maps):
        raise ConfigurationError(f"pyramid has {len(depths)} levels, ground truth {len(gt_maps)}")
    per_level = [level_loss(d, g, cfg) for d, g in zip(depths, gt_maps)]
    total = sum(t.total for t in per_level)
    return LossBreakdown(per_level, total)


@dataclass
class GroundTruthPyramid:
    maps: list

    def __len__(self):
        return len(self.maps)


def pool_valid(depth):
    """2x2 mean over valid (> 0) pixels; blocks with no valid pixel become holes."""
    h, w = depth.shape[-2:]
    if h % 2 or w % 2:
        raise ConfigurationError(f"cannot halve odd-sized depth map {h}x{w}")
    valid = (depth > 0).to(depth.dtype)
    shape = depth.shape[:-2] + (h // 2, 2, w // 2, 2)
    s = (depth * valid).reshape(shape).sum(dim=(-3, -1))
    n = valid.reshape(shape).sum(dim=(-3, -1))
    return torch.where(n > 0, s / n.clamp(min=1), torch.zeros_like(s))


def build_gt_pyramid(gt, levels, allow_holes=False):
    """Finest ground truth plus ``levels - 1`` successive 2x2 block means."""
    gt = torch.as_tensor(gt)
    if not torch.isfinite(gt).all() or (gt < 0).any():
        raise DataError("ground truth contains negative or non-finite values")
    if not allow_holes and (gt <= 0).any():
        raise DataError("ground truth must be strictly positive")
    maps = [gt]
    for _ in range(levels - 1):
        maps.append(pool_valid(maps[-1]))
    return GroundTruthPyramid(maps)
