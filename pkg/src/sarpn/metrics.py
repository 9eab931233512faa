"""Depth accuracy metrics, edge accuracy and point-cloud export."""

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, DataError
from .nn import bilinear_resize

EDGE_THRESHOLDS = (0.25, 0.5, 1.0)
DEPTH_KEYS = ("rel", "rms", "log10", "delta1", "delta2", "delta3")


def _as_tensor(x):
    return torch.as_tensor(np.asarray(x) if not torch.is_tensor(x) else x).to(torch.float64)


def _thr_key(t):
    return str(float(t))


@dataclass
class MetricReport:
    rel: float = 0.0
    rms: float = 0.0
    log10: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    delta3: float = 0.0
    edge: dict = field(default_factory=dict)

    def as_dict(self):
        """Flat mapping in table column order (depth metrics, then edge P/R/F1 per threshold)."""
        out = {k: getattr(self, k) for k in DEPTH_KEYS}
        for t in sorted(self.edge):
            p, r, f1 = self.edge[t]
            key = _thr_key(t)
            out[f"edge_precision@{key}"] = p
            out[f"edge_recall@{key}"] = r
            out[f"edge_f1@{key}"] = f1
        return out

    def to_keyvalue(self):
        return "".join(f"{k}={v:.6f}\n" for k, v in self.as_dict().items())

    def to_table(self):
        head = ["REL", "RMS", "log10", "d<1.25", "d<1.25^2", "d<1.25^3"]
        vals = [getattr(self, k) for k in DEPTH_KEYS]
        lines = [" | ".join(f"{h:>9}" for h in head), " | ".join(f"{v:9.4f}" for v in vals), ""]
        lines.append(" | ".join(f"{h:>9}" for h in ["Thres", "Prec", "Recall", "F1"]))
        for t in sorted(self.edge):
            p, r, f1 = self.edge[t]
            lines.append(" | ".join(f"{v:>9}" for v in [_thr_key(t), f"{p:.4f}", f"{r:.4f}", f"{f1:.4f}"]))
        return "\n".join(lines) + "\n"

    @classmethod
    def mean(cls, reports):
        if not reports:
            raise DataError("cannot average an empty list of reports")
        out = cls(**{k: float(np.mean([getattr(r, k) for r in reports])) for k in DEPTH_KEYS})
        for t in reports[0].edge:
            out.edge[t] = tuple(float(np.mean([r.edge[t][j] for r in reports])) for j in range(3))
        return out


def match_size(pred, gt):
    """Bilinearly upsample ``pred`` to the spatial size of ``gt``."""
    pred, gt = _as_tensor(pred), _as_tensor(gt)
    if pred.shape[-2:] != gt.shape[-2:]:
        p = pred.reshape(-1, *pred.shape[-2:])
        pred = bilinear_resize(p, *gt.shape[-2:]).reshape(*pred.shape[:-2], *gt.shape[-2:])
    return pred, gt


def depth_metrics(pred, gt, epsilon_depth=1e-3):
    """REL, RMS, mean |log10| error and delta accuracies over pixels with gt > 0."""
    d, g = match_size(pred, gt)
    mask = g > 0
    if not mask.any():
        raise DataError("ground truth has no valid pixels")
    d = d[mask].clamp(min=epsilon_depth)
    g = g[mask]
    ratio = torch.maximum(d / g, g / d)
    return (
        float(((d - g).abs() / g).mean()),
        float(((d - g) ** 2).mean().sqrt()),
        float((torch.log10(d) - torch.log10(g)).abs().mean()),
        float((ratio < 1.25).double().mean()),
        float((ratio < 1.25 ** 2).double().mean()),
        float((ratio < 1.25 ** 3).double().mean()),
    )


_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]], dtype=torch.float64) / 8.0


def sobel_magnitude(depth):
    """Sobel gradient magnitude in depth units per pixel, replicate border."""
    d = _as_tensor(depth)
    if d.dim() != 2:
        raise ConfigurationError(f"edge operator expects a 2-D map, got shape {tuple(d.shape)}")
    x = F.pad(d[None, None], (1, 1, 1, 1), mode="replicate")
    gx = F.conv2d(x, _SOBEL_X[None, None])
    gy = F.conv2d(x, _SOBEL_X.T.contiguous()[None, None])
    return torch.sqrt(gx ** 2 + gy ** 2)[0, 0]


def _ratio(num, den, both_empty):
    if den == 0:
        return 1.0 if both_empty else 0.0
    return num / den


def edge_metrics(pred, gt, threshold):
    """Precision, recall and F1 of predicted edge pixels against gt edge pixels."""
    d, g = match_size(pred, gt)
    pe = sobel_magnitude(d) > threshold
    ge = sobel_magnitude(g) > threshold
    tp = int((pe & ge).sum())
    n_pred, n_gt = int(pe.sum()), int(ge.sum())
    both_empty = n_pred == 0 and n_gt == 0
    precision = _ratio(tp, n_pred, both_empty)
    recall = _ratio(tp, n_gt, both_empty)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def evaluate_pair(pred, gt, thresholds=EDGE_THRESHOLDS, epsilon_depth=1e-3):
    rep = MetricReport(*depth_metrics(pred, gt, epsilon_depth))
    for t in thresholds:
        rep.edge[t] = edge_metrics(pred, gt, t)
    return rep


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError("focal lengths must be positive")

    @classmethod
    def default(cls, height, width):
        return cls(float(width), float(width), (width - 1) / 2.0, (height - 1) / 2.0)

    @classmethod
    def parse(cls, text):
        try:
            fx, fy, cx, cy = (float(v) for v in text.split(","))
        except ValueError:
            raise ConfigurationError(f"intrinsics must be 'fx,fy,cx,cy', got {text!r}") from None
        return cls(fx, fy, cx, cy)


def to_pointcloud(depth, intrinsics: CameraIntrinsics, image=None):
    """Back-project every pixel with positive depth; returns an ``(N, 3)`` or ``(N, 6)`` array."""
    z = np.asarray(depth, dtype=np.float64)
    v, u = np.nonzero(z > 0)
    d = z[v, u]
    pts = np.stack([(u - intrinsics.cx) * d / intrinsics.fx, (v - intrinsics.cy) * d / intrinsics.fy, d], axis=1)
    if image is not None:
        img = np.asarray(image, dtype=np.float64)
        if img.shape[-2:] != z.shape:
            img = _as_tensor(img)
            img = bilinear_resize(img, *z.shape).numpy()
        pts = np.concatenate([pts, img[:, v, u].T], axis=1)
    return pts


def write_pointcloud(points, path):
    with open(path, "w") as f:
        for row in points:
            f.write(" ".join(f"{x:.6f}" for x in row) + "\n")


def read_pointcloud(path):
    return np.loadtxt(path, ndmin=2)
