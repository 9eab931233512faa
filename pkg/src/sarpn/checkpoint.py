"""Checkpoint container: a text header naming each tensor, then one RGBD1 raster per tensor."""

import io
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import RunConfig, parse_config_text
from .errors import ConfigurationError, FormatError
from .rgbd_io import encode_raster, read_raster_stream

VERSION = 1
HEADER = b"SARPN-CKPT"


@dataclass
class Checkpoint:
    config: RunConfig
    model_state: dict
    optimizer_state: dict = field(default_factory=dict)
    epoch: int = 0
    step: int = 0

    @property
    def seed(self):
        return self.config.train.seed


def _shape_str(shape):
    return "x".join(str(s) for s in shape) if len(shape) else "scalar"


def _parse_shape(text):
    return () if text == "scalar" else tuple(int(s) for s in text.split("x"))


def to_bytes(ckpt: Checkpoint):
    tensors = [(f"model/{k}", v) for k, v in ckpt.model_state.items()]
    tensors += [(f"optim/{k}", v) for k, v in ckpt.optimizer_state.items()]
    config_lines = ckpt.config.to_text().splitlines()
    head = [
        f"{HEADER.decode()} {VERSION}",
        f"epoch {ckpt.epoch}",
        f"step {ckpt.step}",
        f"seed {ckpt.seed}",
        f"digest {ckpt.config.digest()}",
        f"config {len(config_lines)}",
        *config_lines,
        f"tensors {len(tensors)}",
        *(f"{name} {_shape_str(tuple(t.shape))}" for name, t in tensors),
        "end",
    ]
    out = io.BytesIO()
    out.write(("\n".join(head) + "\n").encode("utf-8"))
    for _, t in tensors:
        a = t.detach().cpu().to(torch.float32).numpy().reshape(1, -1)
        if a.size == 0:
            raise FormatError("cannot store an empty tensor")
        out.write(encode_raster(a))
    return out.getvalue()


def _expect(stream, prefix):
    pos = stream.tell()
    line = stream.readline().decode("utf-8", "replace").rstrip("\n")
    key, _, value = line.partition(" ")
    if key != prefix:
        raise FormatError(f"expected '{prefix}' header line, got {line!r}", pos)
    return value, pos


def from_bytes(data):
    stream = io.BytesIO(data)
    version, pos = _expect(stream, HEADER.decode())
    if version != str(VERSION):
        raise FormatError(f"unsupported checkpoint version {version!r}", pos)
    epoch = int(_expect(stream, "epoch")[0])
    step = int(_expect(stream, "step")[0])
    seed = int(_expect(stream, "seed")[0])
    digest = _expect(stream, "digest")[0]
    n_config = int(_expect(stream, "config")[0])
    text = b"".join(stream.readline() for _ in range(n_config)).decode("utf-8")
    config = RunConfig.from_flat(parse_config_text(text))
    if config.digest() != digest:
        raise ConfigurationError("checkpoint config does not match its recorded digest")
    if config.train.seed != seed:
        raise ConfigurationError("checkpoint seed does not match its config")
    n_tensors = int(_expect(stream, "tensors")[0])
    entries = []
    for _ in range(n_tensors):
        pos = stream.tell()
        parts = stream.readline().decode("utf-8").split()
        if len(parts) != 2:
            raise FormatError("malformed tensor manifest line", pos)
        entries.append((parts[0], _parse_shape(parts[1])))
    _expect(stream, "end")
    model_state, optim_state = {}, {}
    for name, shape in entries:
        raster = read_raster_stream(stream)
        t = torch.from_numpy(np.ascontiguousarray(raster.reshape(shape)))
        section, _, key = name.partition("/")
        (model_state if section == "model" else optim_state)[key] = t
    if stream.read(1):
        raise FormatError("trailing bytes after last tensor", stream.tell() - 1)
    return Checkpoint(config, model_state, optim_state, epoch, step)


def save_checkpoint(ckpt, path):
    with open(path, "wb") as f:
        f.write(to_bytes(ckpt))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return from_bytes(f.read())
