import os

import numpy as np
import pytest
import torch

from sarpn.data import (
    RgbdSample,
    SceneSpec,
    augment,
    generate_dataset,
    generate_scene,
    hflip,
    load_split,
    pixel_rays,
    preprocess,
    read_sample,
    write_sample,
    write_split,
)
from sarpn.errors import ConfigurationError, DataError, FormatError
from sarpn.loss import build_gt_pyramid, total_loss
from sarpn.rgbd_io import decode_raster, encode_raster, read_raster, write_raster


def _constant_sample(h, w, depth=2.0):
    return RgbdSample(np.full((3, h, w), 0.5, np.float32), np.full((h, w), depth, np.float32))


class TestGenerateScene:
    def test_deterministic(self):
        a = generate_scene(SceneSpec(seed=7))
        b = generate_scene(SceneSpec(seed=7))
        assert a.image.tobytes() == b.image.tobytes() and a.depth.tobytes() == b.depth.tobytes()

    def test_seeds_differ(self):
        assert not np.array_equal(generate_scene(SceneSpec(seed=1)).depth, generate_scene(SceneSpec(seed=2)).depth)

    @pytest.mark.parametrize("seed", range(5))
    def test_plane_only_scene_is_planar(self, seed):
        s = generate_scene(SceneSpec(seed=seed, n_objects=0, image_size=(32, 64)))
        z = s.depth.astype(np.float64)
        h, w = z.shape
        v, u = np.mgrid[0:h, 0:w]
        # inverse depth of a 3-D plane is affine in pixel coordinates
        a = np.stack([np.ones(z.size), u.ravel(), v.ravel()], axis=1)
        coef, *_ = np.linalg.lstsq(a, 1.0 / z.ravel(), rcond=None)
        assert np.abs(a @ coef - 1.0 / z.ravel()).max() < 1e-6
        pts = (z[..., None] * pixel_rays(h, w)).reshape(-1, 3)
        b = np.c_[pts[:, :2], np.ones(len(pts))]
        coef, *_ = np.linalg.lstsq(b, pts[:, 2], rcond=None)
        assert np.abs(b @ coef - pts[:, 2]).max() < 1e-5

    @pytest.mark.parametrize("seed", range(10))
    def test_depth_and_colour_ranges(self, seed):
        spec = SceneSpec(seed=seed, depth_range=(0.5, 4.0), n_objects=6)
        s = generate_scene(spec)
        assert s.depth.min() >= 0.5 and s.depth.max() <= 4.0
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert s.image.shape == (3, 64, 64) and s.depth.shape == (64, 64)

    @pytest.mark.parametrize("seed", range(10))
    def test_objects_create_discontinuities(self, seed):
        spec = SceneSpec(seed=seed, n_objects=1)
        z = generate_scene(spec).depth
        jump = max(np.abs(np.diff(z, axis=0)).max(), np.abs(np.diff(z, axis=1)).max())
        assert jump > 0.05 * (spec.depth_range[1] - spec.depth_range[0])

    def test_spec_validation(self):
        with pytest.raises(ConfigurationError):
            SceneSpec(depth_range=(2.0, 1.0))
        with pytest.raises(ConfigurationError):
            SceneSpec(image_size=(60, 64), levels=5)


class TestPreprocess:
    def test_large_input_chain(self):
        out = preprocess(_constant_sample(480, 640), target=(228, 304), precrop=(240, 320))
        assert out.image.shape == (3, 228, 304)
        assert out.depth.shape == (114, 152)

    def test_desk_scale_sizes(self):
        out = preprocess(_constant_sample(128, 128), target=(64, 64), precrop=(72, 72))
        assert out.image.shape == (3, 64, 64) and out.depth.shape == (32, 32)
        assert out.full_depth.shape == (64, 64)

    def test_constant_depth_preserved(self):
        out = preprocess(_constant_sample(128, 96, depth=3.25), target=(64, 64), precrop=(80, 72))
        np.testing.assert_allclose(out.depth, 3.25, rtol=1e-6)

    def test_too_small(self):
        with pytest.raises(DataError):
            preprocess(_constant_sample(64, 64), target=(64, 64), precrop=(72, 72))
        with pytest.raises(DataError):
            preprocess(_constant_sample(32, 64), target=(64, 64))

    def test_holes_pooled_over_valid_pixels(self):
        s = _constant_sample(4, 4, depth=2.0)
        s.depth[0, 0] = 0.0
        s.depth[2:, 2:] = 0.0
        out = preprocess(s, target=(4, 4))
        assert out.depth.tolist() == [[2.0, 2.0], [2.0, 0.0]]

    def test_center_crop(self):
        s = generate_scene(SceneSpec(seed=3, image_size=(96, 96), levels=5))
        out = preprocess(s, target=(64, 64))
        np.testing.assert_array_equal(out.image, s.image[:, 16:80, 16:80])


class TestAugment:
    def test_flip_involution(self):
        s = preprocess(generate_scene(SceneSpec(seed=1)), (64, 64))
        back = hflip(hflip(s))
        assert np.array_equal(back.image, s.image) and np.array_equal(back.depth, s.depth)

    def test_colour_never_touches_depth(self):
        s = preprocess(generate_scene(SceneSpec(seed=1)), (64, 64))
        for seed in range(20):
            out = augment(s, seed)
            flipped = np.random.default_rng(seed).random() < 0.5
            expected = s.depth[:, ::-1] if flipped else s.depth
            assert out.depth.tobytes() == np.ascontiguousarray(expected).tobytes()
            assert out.image.min() >= 0 and out.image.max() <= 1

    def test_flip_happens_sometimes(self):
        s = preprocess(generate_scene(SceneSpec(seed=1)), (64, 64))
        flips = sum(not np.array_equal(augment(s, k).depth, s.depth) for k in range(40))
        assert 5 < flips < 35

    def test_deterministic(self):
        s = preprocess(generate_scene(SceneSpec(seed=1)), (64, 64))
        a, b = augment(s, 99), augment(s, 99)
        assert a.image.tobytes() == b.image.tobytes() and a.depth.tobytes() == b.depth.tobytes()

    def test_perfect_predictor_loss_unchanged(self):
        s = preprocess(generate_scene(SceneSpec(seed=4)), (64, 64))

        def perfect(depth):
            gt = build_gt_pyramid(torch.from_numpy(depth.astype(np.float64)), 5)
            return total_loss(list(gt.maps), gt).total.item()

        base = perfect(s.depth)
        for seed in range(6):
            assert perfect(augment(s, seed).depth) == pytest.approx(base, abs=1e-12)


class TestRasterFormat:
    def test_unit_roundtrip(self, tmp_path):
        p = str(tmp_path / "one.dep")
        write_raster(np.array([[1.0]]), p)
        assert read_raster(p)[0, 0, 0] == 1.0

    def test_header_layout(self):
        data = encode_raster(np.zeros((2, 3, 1), np.float32))
        assert data.startswith(b"RGBD1\n3 2 1\nlittle-endian\n")
        assert len(data) == len(b"RGBD1\n3 2 1\nlittle-endian\n") + 24

    def test_zero_width_rejected(self):
        with pytest.raises(FormatError) as err:
            decode_raster(b"RGBD1\n0 4 1\nlittle-endian\n")
        assert err.value.offset == 6

    def test_bad_magic(self):
        with pytest.raises(FormatError) as err:
            decode_raster(b"RGBX1\n1 1 1\nlittle-endian\n\x00\x00\x80?")
        assert err.value.offset == 0

    def test_truncated_payload(self):
        data = encode_raster(np.ones((4, 4), np.float32))[:-3]
        with pytest.raises(FormatError, match="payload"):
            decode_raster(data)

    def test_overflow(self):
        with pytest.raises(FormatError, match="overflow"):
            decode_raster(b"RGBD1\n100000 100000 3\nlittle-endian\n")

    def test_malformed_dims(self):
        with pytest.raises(FormatError):
            decode_raster(b"RGBD1\n4 four 1\nlittle-endian\n")

    def test_sample_roundtrip_bit_exact(self, tmp_path, rng):
        s = RgbdSample(rng.uniform(size=(3, 16, 16)).astype(np.float32),
                       rng.uniform(0.5, 9, size=(16, 16)).astype(np.float32))
        s.depth[3, 4] = 0.0
        prefix = str(tmp_path / "s")
        write_sample(s, prefix)
        r = read_sample(prefix)
        assert r.image.tobytes() == s.image.tobytes() and r.depth.tobytes() == s.depth.tobytes()
        raw = open(prefix + ".dep", "rb").read()
        write_sample(r, prefix)
        assert open(prefix + ".dep", "rb").read() == raw

    def test_split_roundtrip(self, tmp_path):
        samples = generate_dataset(3, seed=5, image_size=(32, 32), levels=3)
        names = write_split(str(tmp_path / "train"), samples)
        assert open(tmp_path / "train" / "index.txt").read().split() == names
        back = load_split(str(tmp_path / "train"))
        assert all(np.array_equal(a.depth, b.depth) for a, b in zip(samples, back))

    def test_missing_raster(self, tmp_path):
        write_split(str(tmp_path), generate_dataset(2, image_size=(32, 32), levels=3))
        os.remove(tmp_path / "00001.rgb")
        with pytest.raises(DataError):
            load_split(str(tmp_path))
