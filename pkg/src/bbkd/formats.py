"""On-disk formats: IMGF images, BBKD1 checkpoints, 16-bit previews.

IMGF: magic ``IMGF``, little-endian u32 width, u32 height, u32 channels,
then channels*height*width float32 values in row-major order.

BBKD1: magic ``BBKD1``, u32 version, u32 tensor count; per tensor a u32
name length, the UTF-8 name, u32 rank, one u64 per dim, then the float64
payload.  All little-endian.  Loads are all-or-nothing: a malformed file
raises before any partial result escapes.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

IMGF_MAGIC = b"IMGF"
CKPT_MAGIC = b"BBKD1"
CKPT_VERSION = 1


class FormatError(ValueError):
    """Malformed or truncated file."""


def write_imgf(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None, :, :]
    if img.ndim != 3:
        raise ValueError(f"expected [C,H,W] image, got shape {image.shape}")
    c, h, w = img.shape
    payload = np.ascontiguousarray(img, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(IMGF_MAGIC)
        fh.write(struct.pack("<III", w, h, c))
        fh.write(payload)


def read_imgf(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != IMGF_MAGIC:
        raise FormatError(f"{path}: not an IMGF image")
    w, h, c = struct.unpack_from("<III", data, 4)
    expected = 16 + 4 * c * h * w
    if len(data) != expected:
        raise FormatError(f"{path}: truncated IMGF payload ({len(data)} bytes, expected {expected})")
    arr = np.frombuffer(data, dtype="<f4", count=c * h * w, offset=16)
    return arr.astype(np.float64).reshape(c, h, w)


def save_checkpoint(params: Mapping[str, np.ndarray], path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params))


def checkpoint_bytes(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        a = np.asarray(arr, dtype=np.float64)
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(chunks)


def checkpoint_id(params: Mapping[str, np.ndarray]) -> str:
    return hashlib.sha256(checkpoint_bytes(params)).hexdigest()


def load_checkpoint(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < 13 or data[:5] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a BBKD1 checkpoint")
    version, count = struct.unpack_from("<II", data, 5)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    offset = 13
    params: dict[str, np.ndarray] = {}

    def take(n: int) -> int:
        nonlocal offset
        if offset + n > len(data):
            raise FormatError(f"{path}: truncated checkpoint")
        offset += n
        return offset - n

    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, take(4))
        name = data[take(name_len) : offset].decode("utf-8")
        (rank,) = struct.unpack_from("<I", data, take(4))
        dims = struct.unpack_from(f"<{rank}Q", data, take(8 * rank))
        n_vals = 1
        for d in dims:
            n_vals *= d
        start = take(8 * n_vals)
        arr = np.frombuffer(data, dtype="<f8", count=n_vals, offset=start)
        params[name] = arr.astype(np.float64).reshape(dims)
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} trailing bytes after checkpoint payload")
    return params


def _quantize16(image: np.ndarray) -> np.ndarray:
    img = image[0] if image.ndim == 3 else image
    scaled = np.rint((np.clip(img, -1.0, 1.0) + 1.0) / 2.0 * 65535.0)
    return scaled.astype(np.uint16)


def export_png(image: np.ndarray, path) -> None:
    """16-bit grayscale preview of a [-1,1] image; .pgm paths get raw PGM."""
    path = Path(path)
    pixels = _quantize16(image)
    if path.suffix.lower() == ".pgm":
        with open(path, "wb") as fh:
            fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n65535\n".encode())
            fh.write(pixels.astype(">u2").tobytes())
        return
    from PIL import Image

    Image.fromarray(pixels).save(path)


def import_png(path) -> np.ndarray:
    """Read a 16-bit preview back to a [-1,1] float image (for round trips)."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        data = path.read_bytes()
        parts = data.split(b"\n", 3)
        if parts[0] != b"P5":
            raise FormatError(f"{path}: not a raw PGM file")
        w, h = (int(v) for v in parts[1].split())
        pixels = np.frombuffer(parts[3], dtype=">u2").reshape(h, w)
    else:
        from PIL import Image

        pixels = np.asarray(Image.open(path), dtype=np.uint16)
    return pixels.astype(np.float64) / 65535.0 * 2.0 - 1.0
