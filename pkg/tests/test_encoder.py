import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from oracles import central_difference, relative_error
from sarpn.encoder import Encoder, EncoderConfig, SEBlock, encode, se_block
from sarpn.errors import ConfigurationError

D = torch.float64


def _force_gate(block, logit):
    with torch.no_grad():
        block.fc2.weight.zero_()
        block.fc2.bias.fill_(logit)


def test_unit_gate_is_identity(rng):
    x = torch.as_tensor(rng.normal(size=(8, 4, 4)))
    blk = SEBlock(8, 4).double()
    _force_gate(blk, 1e4)
    assert torch.equal(blk(x), x)


def test_zero_gate_zeroes(rng):
    x = torch.as_tensor(rng.normal(size=(8, 4, 4)))
    blk = SEBlock(8, 4).double()
    _force_gate(blk, -1e4)
    assert torch.count_nonzero(blk(x)) == 0


def test_se_matches_composition_oracle(rng):
    x = rng.normal(size=(4, 5, 5))
    w1, b1 = rng.normal(size=(2, 4)), rng.normal(size=2)
    w2, b2 = rng.normal(size=(4, 2)), rng.normal(size=4)
    squeeze = x.sum(axis=(1, 2)) / 25
    hidden = np.maximum(w1 @ squeeze + b1, 0)
    gate = 1 / (1 + np.exp(-(w2 @ hidden + b2)))
    expected = x * gate[:, None, None]
    got = se_block(*(torch.as_tensor(a) for a in (x,)), 2, *(torch.as_tensor(a) for a in (w1, b1, w2, b2)))
    np.testing.assert_allclose(got.numpy(), expected, atol=1e-9)


def test_se_rejects_indivisible():
    with pytest.raises(ConfigurationError):
        SEBlock(6, 4)
    with pytest.raises(ConfigurationError):
        se_block(torch.zeros(6, 2, 2), 4, *([torch.zeros(1)] * 4))


def test_se_gate_in_open_interval_and_shape(rng):
    blk = SEBlock(16, 4).double()
    x = torch.as_tensor(rng.normal(size=(2, 16, 3, 3)))
    gate = blk.gate(x)
    assert ((gate > 0) & (gate < 1)).all()
    out = blk(x)
    assert out.shape == x.shape
    np.testing.assert_allclose(out.detach(), (gate[..., None, None] * x).detach(), atol=1e-12)


def test_initial_gates_near_half(rng):
    blk = SEBlock(16, 4)
    gate = blk.gate(torch.rand(1, 16, 4, 4))
    assert torch.allclose(gate, torch.full_like(gate, 0.5), atol=0.05)


def test_sizes_64_L5():
    cfg = EncoderConfig(levels=5, input_height=64, input_width=64)
    maps = encode(torch.rand(1, 3, 64, 64), cfg, Encoder(cfg))
    assert [tuple(m.shape[-2:]) for m in maps] == [(32, 32), (16, 16), (8, 8), (4, 4), (2, 2)]
    assert [m.shape[1] for m in maps] == cfg.stage_channels


def test_indivisible_input_rejected():
    with pytest.raises(ConfigurationError):
        EncoderConfig(levels=3, stage_channels=[4, 8, 12], input_height=60, input_width=64)
    cfg = EncoderConfig(levels=3, stage_channels=[4, 8, 12], input_height=64, input_width=64)
    with pytest.raises(ConfigurationError):
        encode(torch.rand(1, 3, 60, 64), cfg, Encoder(cfg))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        EncoderConfig(levels=2, stage_channels=[4])
    with pytest.raises(ConfigurationError):
        EncoderConfig(levels=1, stage_channels=[6], se_reduction=4, input_height=32, input_width=32)


def test_deterministic():
    cfg = EncoderConfig(levels=3, stage_channels=[4, 8, 8], input_height=16, input_width=16)
    torch.manual_seed(5)
    enc = Encoder(cfg)
    img = torch.rand(1, 3, 16, 16)
    a, b = enc(img), enc(img)
    assert all(torch.equal(x, y) for x, y in zip(a, b))
    torch.manual_seed(5)
    c = Encoder(cfg)(img)
    assert all(torch.equal(x, y) for x, y in zip(a, c))


@settings(max_examples=15, deadline=None)
@given(
    levels=st.integers(1, 4),
    hm=st.integers(1, 3),
    wm=st.integers(1, 3),
)
def test_pyramid_sizes_property(levels, hm, wm):
    h, w = hm * 2 ** levels, wm * 2 ** levels
    cfg = EncoderConfig(levels=levels, stage_channels=[4] * levels, input_height=h, input_width=w)
    maps = Encoder(cfg)(torch.rand(1, 3, h, w))
    for i, m in enumerate(maps, 1):
        assert tuple(m.shape[-2:]) == (h // 2 ** i, w // 2 ** i)


def test_first_stage_gradients(rng):
    cfg = EncoderConfig(levels=3, stage_channels=[4, 8, 8], input_height=16, input_width=16)
    enc = Encoder(cfg).double()
    img = torch.as_tensor(rng.uniform(size=(1, 3, 16, 16)))
    proj = [torch.as_tensor(rng.normal(size=m.shape)) for m in enc(img)]

    def f():
        return sum((m * p).sum() for m, p in zip(enc(img), proj))

    w = enc.stages[0].down.weight
    g = torch.autograd.grad(f(), w)[0]
    for k in rng.choice(w.numel(), 10, replace=False):
        idx = np.unravel_index(int(k), tuple(w.shape))
        assert relative_error(float(g[idx]), central_difference(f, w.data, idx)) < 1e-4
