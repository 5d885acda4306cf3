"""Image file I/O: 8/16-bit PGM and PNG plus lossless raw float32.

PGM/PNG intensities are scaled to [0, 1] on read and quantized on write.
The raw format stores width and height as little-endian uint32 followed by
row-major little-endian float32 samples, for exact round trips.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .grid import ImageGrid

RAW_HEADER = struct.Struct("<II")


def write_raw(path, image: ImageGrid) -> None:
    with open(path, "wb") as fh:
        fh.write(RAW_HEADER.pack(image.width, image.height))
        fh.write(image.data.astype("<f4").tobytes())


def read_raw(path) -> ImageGrid:
    blob = Path(path).read_bytes()
    w, h = RAW_HEADER.unpack_from(blob, 0)
    data = np.frombuffer(blob, dtype="<f4", offset=RAW_HEADER.size, count=w * h)
    return ImageGrid(width=w, height=h, data=data.astype(np.float64).reshape(h, w))


def write_pgm(path, image: ImageGrid, bits: int = 16) -> None:
    if bits not in (8, 16):
        raise ValueError("PGM supports 8 or 16 bits")
    maxval = (1 << bits) - 1
    q = np.clip(np.rint(image.data * maxval), 0, maxval)
    header = f"P5\n{image.width} {image.height}\n{maxval}\n".encode("ascii")
    payload = q.astype(">u2" if bits == 16 else "u1").tobytes()
    with open(path, "wb") as fh:
        fh.write(header + payload)


def read_pgm(path) -> ImageGrid:
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P5"):
        raise ValueError("only binary (P5) PGM is supported")
    # parse the three header tokens, skipping comment lines
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = tokens
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(blob, dtype=dtype, offset=pos, count=w * h)
    return ImageGrid(width=w, height=h, data=data.reshape(h, w) / float(maxval))


def write_png(path, image: ImageGrid, bits: int = 16) -> None:
    if bits == 8:
        q = np.clip(np.rint(image.data * 255), 0, 255).astype(np.uint8)
        Image.fromarray(q, mode="L").save(path)
    elif bits == 16:
        q = np.clip(np.rint(image.data * 65535), 0, 65535).astype(np.uint32)
        Image.fromarray(q, mode="I").save(path, bits=16)
    else:
        raise ValueError("PNG supports 8 or 16 bits")


def read_png(path) -> ImageGrid:
    img = Image.open(path)
    a = np.asarray(img)
    if a.ndim == 3:  # collapse accidental color input per-channel average
        a = a.mean(axis=2)
    if a.dtype == np.uint8:
        scale = 255.0
    else:
        scale = 65535.0
    return ImageGrid.from_array(a.astype(np.float64) / scale)


def write_image(path, image: ImageGrid, bits: int = 16) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        write_pgm(path, image, bits)
    elif suffix == ".png":
        write_png(path, image, bits)
    elif suffix == ".raw":
        write_raw(path, image)
    else:
        raise ValueError(f"unsupported image format: {suffix}")


def read_image(path) -> ImageGrid:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        return read_png(path)
    if suffix == ".raw":
        return read_raw(path)
    raise ValueError(f"unsupported image format: {suffix}")
