"""Binary field tensors (FTEN) and portable pixmaps (P5/P6).

FTEN layout, all integers little-endian::

    b"FTEN" | u32 rank | u32 dim * rank | u8 element tag | payload

Element tags: 1 = float32, 2 = uint8. The payload is row-major
little-endian and exactly ``prod(shape) * itemsize`` bytes long.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

from ..errors import ContractError, FormatError
from ..field_domain import signals_to_bytes

FTEN_MAGIC = b"FTEN"
_TAGS = {1: np.dtype("<f4"), 2: np.dtype("u1")}
_TAG_OF = {np.dtype("float32"): 1, np.dtype("uint8"): 2}


def encode_field_tensor(array):
    array = np.asarray(array)
    if array.dtype not in _TAG_OF:
        array = array.astype(np.float32)
    tag = _TAG_OF[array.dtype]
    header = FTEN_MAGIC + struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape) + struct.pack("<B", tag)
    return header + np.ascontiguousarray(array, dtype=_TAGS[tag]).tobytes()


def decode_field_tensor(blob, source="<bytes>"):
    if blob[:4] != FTEN_MAGIC:
        raise FormatError(f"{source}: not a field tensor (bad magic {blob[:4]!r})")
    try:
        (rank,) = struct.unpack_from("<I", blob, 4)
        shape = struct.unpack_from(f"<{rank}I", blob, 8)
        (tag,) = struct.unpack_from("<B", blob, 8 + 4 * rank)
    except struct.error:
        raise FormatError(f"{source}: truncated header") from None
    if tag not in _TAGS:
        raise FormatError(f"{source}: unknown element tag {tag}")
    dtype = _TAGS[tag]
    start = 9 + 4 * rank
    expected = math.prod(shape) * dtype.itemsize
    if len(blob) - start != expected:
        raise FormatError(f"{source}: payload is {len(blob) - start} bytes, expected {expected}")
    return np.frombuffer(blob, dtype=dtype, offset=start).reshape(shape).astype(dtype.newbyteorder("="))


def write_field_tensor(path, array):
    Path(path).write_bytes(encode_field_tensor(array))


def read_field_tensor(path):
    return decode_field_tensor(Path(path).read_bytes(), str(path))


def encode_pixmap(raster):
    """(h, w, 1|3) signals in [-1, 1] -> binary PGM/PPM bytes (values clamped)."""
    raster = np.asarray(raster)
    if raster.ndim == 2:
        raster = raster[..., None]
    if raster.ndim != 3 or raster.shape[2] not in (1, 3):
        raise ContractError(f"pixmaps need an (h, w, 1|3) raster, got {raster.shape}")
    h, w, c = raster.shape
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode() + signals_to_bytes(raster).tobytes()


def write_pixmap(fld, path):
    """Write a 2D-grid field as P5 (1 channel) or P6 (3 channels)."""
    if fld.spec is None or fld.spec.kind != "euclidean_grid_2d":
        raise ContractError("write_pixmap needs a field on a 2D grid")
    Path(path).write_bytes(encode_pixmap(fld.raster()))


def read_pixmap(path):
    """Binary P5/P6 with maxval 255 -> uint8 raster (h, w, c)."""
    blob = Path(path).read_bytes()
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary pixmap")
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated pixmap header")
        try:
            tokens.append(int(blob[start:pos]))
        except ValueError:
            raise FormatError(f"{path}: bad pixmap header field {blob[start:pos]!r}") from None
    pos += 1
    w, h, maxval = tokens
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported")
    c = 1 if magic == b"P5" else 3
    payload = blob[pos:]
    if len(payload) != w * h * c:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {w * h * c}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, c).copy()
