"""Loss-curve and false-colour depth rendering (matplotlib, Agg backend)."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .trainer import read_log  # noqa: E402,F401

DEPTH_CMAP = "magma"
CURVE_COLOR = "#0000ff"
# Strip the software/date chunks so identical inputs give identical bytes.
_PNG_METADATA = {"Software": None}


def plot_loss_curve(rows, path, key="total_loss"):
    """Line plot of ``key`` against epoch."""
    epochs = [r["epoch"] for r in rows]
    values = [r[key] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5), dpi=100)
    ax.plot(epochs, values, color=CURVE_COLOR, linewidth=1.5, antialiased=False, marker=None)
    ax.set_xlabel("epoch")
    ax.set_ylabel(key.replace("_", " "))
    ax.grid(False)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_METADATA)
    plt.close(fig)


def render_depth(depth, path, vmin=None, vmax=None):
    """One image pixel per depth pixel; holes (depth <= 0) are drawn black."""
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim == 3:
        d = d[..., 0]
    valid = d > 0
    if valid.any():
        vmin = d[valid].min() if vmin is None else vmin
        vmax = d[valid].max() if vmax is None else vmax
    else:
        vmin, vmax = 0.0, 1.0
    cmap = matplotlib.colormaps[DEPTH_CMAP].with_extremes(bad="black")
    masked = np.ma.masked_array(d, mask=~valid)
    plt.imsave(path, masked, cmap=cmap, vmin=vmin, vmax=vmax, format="png", metadata=_PNG_METADATA)
