"""Procedural RGBD scenes, preprocessing, augmentation and dataset directories."""

import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DataError
from .rgbd_io import read_raster, sample_paths, write_raster

INDEX_FILE = "index.txt"


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    image_size: tuple = (64, 64)
    depth_range: tuple = (1.0, 8.0)
    n_objects: int = 4
    levels: int = 5

    def __post_init__(self):
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise ConfigurationError(f"depth_range must satisfy 0 < min < max, got {self.depth_range}")
        if self.n_objects < 0:
            raise ConfigurationError("n_objects must be >= 0")
        h, w = self.image_size
        step = 2 ** self.levels
        if h < 1 or w < 1 or h % step or w % step:
            raise ConfigurationError(f"scene size {h}x{w} is not divisible by 2^{self.levels}={step}")


@dataclass
class RgbdSample:
    """``image`` is ``(3, H, W)`` in [0, 1]; ``depth`` is ``(h, w)`` metres, 0 marks holes.

    After :func:`preprocess`, ``depth`` is at half the image resolution and
    ``full_depth`` keeps the cropped full-resolution ground truth.
    """

    image: np.ndarray
    depth: np.ndarray
    full_depth: np.ndarray = None


def default_intrinsics(height, width):
    """``(fx, fy, cx, cy)`` of the synthetic pinhole camera."""
    return float(width), float(width), (width - 1) / 2.0, (height - 1) / 2.0


def pixel_rays(height, width, intrinsics=None):
    fx, fy, cx, cy = intrinsics or default_intrinsics(height, width)
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    return np.stack([(u - cx) / fx, (v - cy) / fy, np.ones_like(u)], axis=-1)


def _background(rng, height, width, lo, hi):
    """Tilted plane: inverse depth is affine in pixel coordinates."""
    span = hi - lo
    z_near = lo + rng.uniform(0.15, 0.35) * span
    z_far = hi - rng.uniform(0.0, 0.3) * span
    theta = rng.uniform(0.0, 2.0 * np.pi)
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    s = np.cos(theta) * u / max(width - 1, 1) + np.sin(theta) * v / max(height - 1, 1)
    corners = [0.0, np.cos(theta), np.sin(theta), np.cos(theta) + np.sin(theta)]
    s = (s - min(corners)) / (max(corners) - min(corners))
    inv = 1.0 / z_far + (1.0 / z_near - 1.0 / z_far) * s
    return 1.0 / inv


def _sphere_hit(rays, center, radius):
    a = (rays * rays).sum(-1)
    b = -2.0 * (rays @ center)
    c = center @ center - radius * radius
    disc = b * b - 4.0 * a * c
    t = np.full(disc.shape, np.inf)
    ok = disc >= 0
    t[ok] = (-b[ok] - np.sqrt(disc[ok])) / (2.0 * a[ok])
    t[t <= 0] = np.inf
    return t


def _box_hit(rays, center, half):
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (center - half) / rays
        t2 = (center + half) / rays
    t_near = np.nanmax(np.minimum(t1, t2), axis=-1)
    t_far = np.nanmin(np.maximum(t1, t2), axis=-1)
    t = np.where((t_near <= t_far) & (t_near > 0), t_near, np.inf)
    return t


def _normals(points):
    du = np.gradient(points, axis=1)
    dv = np.gradient(points, axis=0)
    n = np.cross(du, dv)
    n /= np.linalg.norm(n, axis=-1, keepdims=True) + 1e-12
    flip = (n * points).sum(-1) > 0
    n[flip] *= -1.0
    return n


def generate_scene(spec: SceneSpec) -> RgbdSample:
    """Render one scene: a tilted background plane plus boxes and spheres.

    Depth is the ray hit distance along the optical axis (nearest surface
    wins).  Colours are per-region albedo (checkered on the background) lit
    by a Lambertian point light at the camera with distance falloff.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.image_size
    lo, hi = spec.depth_range
    rays = pixel_rays(h, w)

    depth = _background(rng, h, w, lo, hi)
    region = np.zeros((h, w), dtype=np.int64)
    albedo = [rng.uniform(0.35, 1.0, 3)]

    for k in range(spec.n_objects):
        u0, v0 = rng.uniform(0, w - 1), rng.uniform(0, h - 1)
        zb = depth[int(round(v0)), int(round(u0))]
        zc = max(lo, zb * rng.uniform(0.6, 0.9))
        center = zc * rays[int(round(v0)), int(round(u0))]
        if rng.random() < 0.5:
            t = _sphere_hit(rays, center, zc * rng.uniform(0.05, 0.15))
        else:
            t = _box_hit(rays, center, zc * rng.uniform(0.04, 0.14, 3))
        closer = t < depth
        depth = np.where(closer, t, depth)
        region[closer] = k + 1
        albedo.append(rng.uniform(0.2, 1.0, 3))
    depth = np.clip(depth, lo, hi)

    points = depth[..., None] * rays
    normals = _normals(points)
    to_light = -points / np.linalg.norm(points, axis=-1, keepdims=True)
    lambert = np.clip((normals * to_light).sum(-1), 0.0, 1.0)
    falloff = 2.0 * lo / (lo + depth)

    colors = np.asarray(albedo)[region]
    cell = max(hi - lo, 1e-6) / 8.0
    checker = (np.floor(points[..., 0] / cell) + np.floor(points[..., 1] / cell)
               + np.floor(points[..., 2] / cell)) % 2
    colors[region == 0] *= np.where(checker[region == 0] > 0, 1.0, 0.8)[:, None]
    shade = 0.15 + 0.85 * lambert * falloff
    image = np.clip(colors * shade[..., None], 0.0, 1.0)

    return RgbdSample(
        image=np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32),
        depth=depth.astype(np.float32),
    )


def scene_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def generate_dataset(count, seed=0, image_size=(64, 64), n_objects=4, depth_range=(1.0, 8.0), levels=5):
    return [
        generate_scene(SceneSpec(scene_seed(seed, i), tuple(image_size), tuple(depth_range), n_objects, levels))
        for i in range(count)
    ]


def pool_valid_np(depth):
    h, w = depth.shape
    if h % 2 or w % 2:
        raise ConfigurationError(f"cannot halve odd-sized depth map {h}x{w}")
    valid = (depth > 0).astype(np.float64)
    s = (depth * valid).reshape(h // 2, 2, w // 2, 2).sum(axis=(1, 3))
    n = valid.reshape(h // 2, 2, w // 2, 2).sum(axis=(1, 3))
    out = np.zeros_like(s)
    np.divide(s, n, out=out, where=n > 0)
    return out.astype(np.float32)


def _resize_np(array, height, width):
    from .nn import bilinear_resize
    import torch

    t = torch.from_numpy(np.ascontiguousarray(array, dtype=np.float64))
    squeeze = t.dim() == 2
    if squeeze:
        t = t[None]
    out = bilinear_resize(t, height, width).numpy()
    return out[0] if squeeze else out


def _resize_depth(depth, height, width):
    """Hole-aware bilinear resize: holes carry no weight."""
    valid = (depth > 0).astype(np.float64)
    num = _resize_np(depth * valid, height, width)
    den = _resize_np(valid, height, width)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 1e-9)
    return out


def preprocess(sample: RgbdSample, target=(64, 64), precrop=None) -> RgbdSample:
    """Resize to ``precrop`` (if given), center-crop to ``target``, halve the depth.

    Large-input chain: 640x480 -> 320x240 -> 304x228 crop -> 152x114 depth.
    """
    th, tw = target
    image, depth = sample.image, sample.depth
    if image.shape[-2:] != depth.shape:
        raise DataError(f"image {image.shape[-2:]} and depth {depth.shape} differ in size")
    h, w = depth.shape
    if precrop is not None:
        ph, pw = precrop
        if h < ph or w < pw:
            raise DataError(f"sample {h}x{w} is smaller than the pre-crop size {ph}x{pw}")
        if ph < th or pw < tw:
            raise ConfigurationError(f"pre-crop {ph}x{pw} is smaller than target {th}x{tw}")
        if (ph, pw) != (h, w):
            image = _resize_np(image, ph, pw)
            depth = _resize_depth(depth, ph, pw)
        h, w = ph, pw
    elif h < th or w < tw:
        raise DataError(f"sample {h}x{w} is smaller than the target {th}x{tw}")
    top, left = (h - th) // 2, (w - tw) // 2
    image = np.ascontiguousarray(image[:, top:top + th, left:left + tw], dtype=np.float32)
    full = np.ascontiguousarray(depth[top:top + th, left:left + tw], dtype=np.float32)
    return RgbdSample(image=image, depth=pool_valid_np(full), full_depth=full)


def hflip(sample: RgbdSample) -> RgbdSample:
    flip = lambda a: None if a is None else np.ascontiguousarray(a[..., ::-1])  # noqa: E731
    return RgbdSample(flip(sample.image), flip(sample.depth), flip(sample.full_depth))


def augment(sample: RgbdSample, seed) -> RgbdSample:
    """Joint horizontal flip (p = 0.5) and per-channel colour scaling in [0.8, 1.2]."""
    rng = np.random.default_rng(seed)
    do_flip = rng.random() < 0.5
    scale = rng.uniform(0.8, 1.2, size=3).astype(np.float32)
    out = hflip(sample) if do_flip else replace(sample)
    out.image = np.clip(out.image * scale[:, None, None], 0.0, 1.0).astype(np.float32)
    return out


def write_sample(sample: RgbdSample, prefix):
    rgb, dep = prefix + ".rgb", prefix + ".dep"
    write_raster(np.asarray(sample.image).transpose(1, 2, 0), rgb)
    write_raster(np.asarray(sample.depth), dep)


def read_sample(prefix) -> RgbdSample:
    image = read_raster(prefix + ".rgb")
    depth = read_raster(prefix + ".dep")
    if image.shape[2] != 3:
        raise DataError(f"{prefix}.rgb has {image.shape[2]} channels, expected 3")
    if depth.shape[2] != 1:
        raise DataError(f"{prefix}.dep has {depth.shape[2]} channels, expected 1")
    return RgbdSample(np.ascontiguousarray(image.transpose(2, 0, 1)), depth[:, :, 0].copy())


def write_split(directory, samples, names=None):
    os.makedirs(directory, exist_ok=True)
    names = names or [f"{i:05d}" for i in range(len(samples))]
    for name, s in zip(names, samples):
        write_sample(s, os.path.join(directory, name))
    with open(os.path.join(directory, INDEX_FILE), "w") as f:
        f.writelines(n + "\n" for n in names)
    return names


def read_index(directory):
    path = os.path.join(directory, INDEX_FILE)
    if not os.path.isfile(path):
        raise DataError(f"no {INDEX_FILE} in {directory}")
    with open(path) as f:
        return [line.strip() for line in f if line.strip()]


def load_split(directory):
    names = read_index(directory)
    for name in names:
        for p in sample_paths(directory, name):
            if not os.path.isfile(p):
                raise DataError(f"missing raster {p}")
    return [read_sample(os.path.join(directory, n)) for n in names]


def resolve_split(root, *preferred):
    """Accept either a split directory or a dataset root; splits are tried in order."""
    if os.path.isfile(os.path.join(root, INDEX_FILE)):
        return root
    for name in preferred or ("train",):
        candidate = os.path.join(root, name)
        if os.path.isfile(os.path.join(candidate, INDEX_FILE)):
            return candidate
    raise DataError(f"no dataset split found under {root}")
