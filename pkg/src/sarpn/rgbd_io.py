"""RGBD1 raster container.

Layout::

    RGBD1\n
    <W> <H> <C>\n          ASCII decimal
    little-endian\n
    W*H*C float32 LE       row-major (row, col, channel)
"""

import io
import os

import numpy as np

from .errors import FormatError

MAGIC = b"RGBD1\n"
ENDIAN = b"little-endian\n"
MAX_ELEMENTS = 1 << 31


def encode_raster(array):
    """Serialise an ``(H, W)`` or ``(H, W, C)`` array."""
    a = np.asarray(array)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or min(a.shape) < 1:
        raise FormatError(f"raster must be a non-empty (H, W[, C]) array, got shape {a.shape}")
    h, w, c = a.shape
    head = MAGIC + f"{w} {h} {c}\n".encode("ascii") + ENDIAN
    return head + np.ascontiguousarray(a, dtype="<f4").tobytes()


def _line(buf, offset, what):
    end = buf.find(b"\n", offset)
    if end < 0:
        raise FormatError(f"unterminated {what} line", offset)
    return buf[offset:end + 1], end + 1


def decode_raster(buf):
    """Parse raster bytes into a float32 ``(H, W, C)`` array."""
    buf = bytes(buf)
    if not buf.startswith(MAGIC):
        raise FormatError("bad magic, expected 'RGBD1'", 0)
    offset = len(MAGIC)
    dims_line, after = _line(buf, offset, "dimension")
    fields = dims_line.split()
    try:
        if len(fields) != 3:
            raise ValueError
        w, h, c = (int(f.decode("ascii")) for f in fields)
    except (ValueError, UnicodeDecodeError):
        raise FormatError(f"malformed dimension line {dims_line!r}", offset) from None
    if w < 1 or h < 1 or c < 1:
        raise FormatError(f"non-positive dimension in '{w} {h} {c}'", offset)
    count = w * h * c
    if count >= MAX_ELEMENTS:
        raise FormatError(f"declared size {w}x{h}x{c} overflows the raster limit", offset)
    offset = after
    if buf[offset:offset + len(ENDIAN)] != ENDIAN:
        raise FormatError("missing 'little-endian' marker", offset)
    offset += len(ENDIAN)
    payload = len(buf) - offset
    if payload != 4 * count:
        raise FormatError(f"payload is {payload} bytes, header declares {4 * count}", offset)
    return np.frombuffer(buf, dtype="<f4", offset=offset).reshape(h, w, c).astype(np.float32)


def write_raster(array, path):
    data = encode_raster(array)
    with open(path, "wb") as f:
        f.write(data)


def read_raster(path):
    with open(path, "rb") as f:
        return decode_raster(f.read())


def read_raster_stream(stream: io.BufferedIOBase):
    """Read one raster from a stream positioned at its header."""
    start = stream.tell() if stream.seekable() else 0
    magic = stream.read(len(MAGIC))
    if magic != MAGIC:
        raise FormatError("bad magic, expected 'RGBD1'", start)
    dims = stream.readline()
    endian = stream.readline()
    head = magic + dims + endian
    try:
        w, h, c = (int(x) for x in dims.split())
    except ValueError:
        raise FormatError(f"malformed dimension line {dims!r}", start + len(MAGIC)) from None
    if min(w, h, c) < 1 or w * h * c >= MAX_ELEMENTS:
        raise FormatError(f"invalid dimensions '{w} {h} {c}'", start + len(MAGIC))
    body = stream.read(4 * w * h * c)
    return decode_raster(head + body)


def sample_paths(root, name):
    return os.path.join(root, name + ".rgb"), os.path.join(root, name + ".dep")
