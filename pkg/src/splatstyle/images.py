"""Image file I/O: 8-bit PNG and the raw float32 ``.f32img`` container.

PNG is the interchange format for rendered and stylized views. Float images
in [0, 1] are quantized with round-half-up (``floor(x * 255 + 0.5)``) so the
mapping is reproducible across platforms. ``.f32img`` keeps full float32
precision for feature maps and depth buffers:

    magic "F32I" | u32 height | u32 width | u32 channels | f32 data

All header integers and pixel data are little-endian; data is row-major with
the channel axis last.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ValidationError

_F32_MAGIC = b"F32I"


def quantize_u8(image: np.ndarray) -> np.ndarray:
    """Map floats in [0, 1] to uint8 with round-half-up."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def write_png(image: np.ndarray, path: str | Path) -> None:
    """Write an (H, W, 3) float image in [0, 1] (or uint8) as PNG."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = quantize_u8(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValidationError(f"expected (H, W, 3) image, got shape {arr.shape}")
    Image.fromarray(arr, mode="RGB").save(Path(path), format="PNG")


def encode_png(image: np.ndarray) -> bytes:
    """PNG-encode an image to bytes (same quantization as write_png)."""
    import io

    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = quantize_u8(arr)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def read_png(path: str | Path) -> np.ndarray:
    """Read a PNG as an (H, W, 3) float64 image in [0, 1]."""
    with Image.open(Path(path)) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_f32img(image: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValidationError(f"f32img expects 2D or 3D data, got shape {arr.shape}")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(_F32_MAGIC)
        fh.write(struct.pack("<III", h, w, c))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_f32img(path: str | Path) -> np.ndarray:
    """Read a ``.f32img`` file as (H, W, C) float32 (C kept even when 1)."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != _F32_MAGIC:
        raise FormatError(f"{path}: not an f32img file (bad magic)")
    h, w, c = struct.unpack("<III", raw[4:16])
    expect = 16 + 4 * h * w * c
    if len(raw) != expect:
        raise FormatError(f"{path}: f32img payload is {len(raw) - 16} bytes, "
                          f"header promises {expect - 16}")
    data = np.frombuffer(raw[16:], dtype="<f4")
    return data.reshape(h, w, c).copy()
