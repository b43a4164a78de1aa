"""File formats shared with the render-side tooling, re-implemented.

The bridge talks to the rest of the system through files only, so the
formats here are written against their published contracts rather than
imported:

* ``.f32img`` — ``b"F32I"`` magic, ``<III`` height/width/channels header,
  little-endian float32 pixels, row-major, channels last.
* cameras JSON — ``{"cameras": [{view_id, fx, fy, cx, cy, width, height,
  w2c_rot, w2c_trans}, ...]}`` with ``w2c_rot`` a unit quaternion in
  (w, x, y, z) order; points map as ``X_cam = R @ X_world + t``.
* PNG targets — 8-bit RGB, floats quantized round-half-up
  (``floor(x * 255 + 0.5)``).
* style-target manifest — ``{"style_id", "alignment", "entries":
  [{view_id, path, anchor}]}`` with exactly one anchor entry and paths
  relative to the manifest file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import BridgeError

_F32_MAGIC = b"F32I"
ALIGNMENT_TAG = "content-calibrated"


def read_f32img(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != _F32_MAGIC:
        raise BridgeError(f"{path}: not an f32img file (bad magic)")
    h, w, c = struct.unpack("<III", raw[4:16])
    expect = 16 + 4 * h * w * c
    if len(raw) != expect:
        raise BridgeError(
            f"{path}: f32img payload is {len(raw) - 16} bytes, header "
            f"promises {expect - 16}")
    return np.frombuffer(raw[16:], dtype="<f4").reshape(h, w, c).copy()


def read_png(path: str | Path) -> np.ndarray:
    """(H, W, 3) float64 in [0, 1]."""
    with Image.open(Path(path)) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_png(image: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
        arr = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise BridgeError(f"expected (H, W, 3) image, got shape {arr.shape}")
    Image.fromarray(arr, mode="RGB").save(Path(path), format="PNG")


def _quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class BridgeCamera:
    """Pinhole camera; same conventions as the render-side cameras file."""

    view_id: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    w2c_rot: tuple[float, float, float, float]
    w2c_trans: tuple[float, float, float]

    def __post_init__(self):
        rot = np.asarray(self.w2c_rot, dtype=np.float64)
        if abs(float(np.linalg.norm(rot)) - 1.0) > 1e-6:
            raise BridgeError(
                f"view {self.view_id!r}: w2c_rot is not a unit quaternion")
        if self.fx <= 0 or self.fy <= 0 or self.width <= 0 or self.height <= 0:
            raise BridgeError(f"view {self.view_id!r}: bad intrinsics")

    @property
    def rotation_matrix(self) -> np.ndarray:
        return _quat_to_rotmat(np.asarray(self.w2c_rot, dtype=np.float64))

    def scaled(self, factor: int) -> "BridgeCamera":
        """Camera for the image grid downscaled by an integer factor."""
        if factor < 1:
            raise BridgeError("scale factor must be >= 1")
        if self.width % factor or self.height % factor:
            raise BridgeError(
                f"view {self.view_id!r}: {self.width}x{self.height} not "
                f"divisible by {factor}")
        off = (factor - 1) / 2.0
        return BridgeCamera(
            view_id=self.view_id,
            fx=self.fx / factor, fy=self.fy / factor,
            cx=(self.cx - off) / factor, cy=(self.cy - off) / factor,
            width=self.width // factor, height=self.height // factor,
            w2c_rot=self.w2c_rot, w2c_trans=self.w2c_trans)


def load_cameras(path: str | Path) -> list[BridgeCamera]:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise BridgeError(f"{path}: malformed JSON: {exc.msg}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("cameras"), list):
        raise BridgeError(f'{path}: expected an object with a "cameras" list')
    cams = []
    seen = set()
    for i, c in enumerate(data["cameras"]):
        try:
            cam = BridgeCamera(
                view_id=str(c["view_id"]),
                fx=float(c["fx"]), fy=float(c["fy"]),
                cx=float(c["cx"]), cy=float(c["cy"]),
                width=int(c["width"]), height=int(c["height"]),
                w2c_rot=tuple(float(v) for v in c["w2c_rot"]),
                w2c_trans=tuple(float(v) for v in c["w2c_trans"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BridgeError(f"{path}: camera entry {i}: {exc}") from exc
        if cam.view_id in seen:
            raise BridgeError(f"{path}: duplicate view_id {cam.view_id!r}")
        seen.add(cam.view_id)
        cams.append(cam)
    return cams


def save_manifest(style_id: str, entries: list[dict], path: str | Path,
                  alignment: str = ALIGNMENT_TAG) -> None:
    """Write the style-target manifest.

    ``entries`` are ``{"view_id", "path", "anchor"}`` dicts in trajectory
    order; exactly one must be the anchor.
    """
    anchors = sum(1 for e in entries if e["anchor"])
    if anchors != 1:
        raise BridgeError(f"manifest needs exactly one anchor, got {anchors}")
    data = {
        "style_id": style_id,
        "alignment": alignment,
        "entries": [{"view_id": e["view_id"], "path": e["path"],
                     "anchor": bool(e["anchor"])} for e in entries],
    }
    Path(path).write_text(json.dumps(data, indent=2))
