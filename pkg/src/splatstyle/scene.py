"""Scene container for anisotropic Gaussian primitives, plus file I/O.

A scene is a flat, ordered collection of primitives. Each primitive carries
a world-space mean, per-axis log-scales, a unit quaternion (w, x, y, z),
an opacity logit, and an RGB color. Colors are stored unclamped so that
additive edits compose linearly; they are clamped to [0, 1] only when
rendered.

Two on-disk formats are supported:

* canonical JSON (``{"primitives": [...]}``) which round-trips exactly, and
* binary little-endian PLY as written by common splatting trainers
  (``x y z opacity scale_0..2 rot_0..3 f_dc_0..2``), for interop.

Cameras live in their own JSON file (``{"cameras": [...]}``) and use a
world-to-camera rigid transform with the quaternion in (w, x, y, z) order.
Pixel (row, col) of an image samples the continuous image-plane point
(u=col, v=row).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

# Zeroth-order spherical-harmonic constant used by PLY color channels.
SH_DC_SCALE = 0.28209479177387814

_QUAT_NORM_FLOOR = 1e-12


def quat_normalize(quats: np.ndarray) -> np.ndarray:
    """Return unit quaternions; raises on (near-)zero norm.

    Rows already unit to within 1e-12 pass through bit-identically, so
    normalization is idempotent and saved scenes round-trip exactly.

    Parameters
    ----------
    quats : (N, 4) array in (w, x, y, z) order.
    """
    quats = np.asarray(quats, dtype=np.float64)
    norms = np.linalg.norm(quats, axis=-1, keepdims=True)
    bad = np.where(norms[..., 0] < _QUAT_NORM_FLOOR)[0]
    if bad.size:
        raise ValidationError(f"zero-norm rotation quaternion at index {bad[0]}")
    return np.where(np.abs(norms - 1.0) > 1e-12, quats / norms, quats)


def quat_to_rotmat(quats: np.ndarray) -> np.ndarray:
    """Convert unit quaternions (N, 4) in (w, x, y, z) order to (N, 3, 3)."""
    q = np.asarray(quats, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    R[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[:, 0, 1] = 2.0 * (x * y - w * z)
    R[:, 0, 2] = 2.0 * (x * z + w * y)
    R[:, 1, 0] = 2.0 * (x * y + w * z)
    R[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[:, 1, 2] = 2.0 * (y * z - w * x)
    R[:, 2, 0] = 2.0 * (x * z - w * y)
    R[:, 2, 1] = 2.0 * (y * z + w * x)
    R[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R[0] if single else R


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


def _check_finite(name: str, arr: np.ndarray) -> None:
    finite = np.isfinite(arr)
    if not finite.all():
        idx = int(np.argwhere(~finite.reshape(arr.shape[0], -1).all(axis=1))[0, 0])
        raise ValidationError(f"non-finite {name} at index {idx}")


@dataclass(frozen=True)
class GaussianPrimitive:
    """A single anisotropic Gaussian, as a convenience view onto a scene."""

    position: np.ndarray      # (3,) world-space mean
    log_scale: np.ndarray     # (3,) per-axis log standard deviation
    rotation: np.ndarray      # (4,) unit quaternion (w, x, y, z)
    opacity_logit: float
    color: np.ndarray         # (3,) RGB, unclamped


@dataclass(frozen=True)
class GaussianScene:
    """Ordered collection of Gaussian primitives, stored as flat arrays.

    All arrays are read-only after construction; edits produce new scenes.
    Rotations are renormalized to unit quaternions on construction.
    """

    positions: np.ndarray       # (N, 3)
    log_scales: np.ndarray      # (N, 3)
    rotations: np.ndarray       # (N, 4), unit (w, x, y, z)
    opacity_logits: np.ndarray  # (N,)
    colors: np.ndarray          # (N, 3)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = pos.shape[0]
        log_s = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        rot = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        op = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        col = np.asarray(self.colors, dtype=np.float64).reshape(n, 3)
        for name, arr in (("position", pos), ("log_scale", log_s),
                          ("rotation", rot), ("opacity_logit", op.reshape(n, 1)),
                          ("color", col)):
            _check_finite(name, arr)
        rot = quat_normalize(rot)
        object.__setattr__(self, "positions", _freeze(pos))
        object.__setattr__(self, "log_scales", _freeze(log_s))
        object.__setattr__(self, "rotations", _freeze(rot))
        object.__setattr__(self, "opacity_logits", _freeze(op))
        object.__setattr__(self, "colors", _freeze(col))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def __len__(self) -> int:
        return self.count

    def primitive(self, index: int) -> GaussianPrimitive:
        if not 0 <= index < self.count:
            raise IndexError(f"primitive index {index} out of range [0, {self.count})")
        return GaussianPrimitive(
            position=self.positions[index],
            log_scale=self.log_scales[index],
            rotation=self.rotations[index],
            opacity_logit=float(self.opacity_logits[index]),
            color=self.colors[index],
        )

    def subset(self, indices: np.ndarray) -> "GaussianScene":
        """New scene keeping ``indices`` in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.count):
            raise ValidationError("subset index out of range")
        return GaussianScene(
            positions=self.positions[idx],
            log_scales=self.log_scales[idx],
            rotations=self.rotations[idx],
            opacity_logits=self.opacity_logits[idx],
            colors=self.colors[idx],
        )


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with a world-to-camera rigid transform.

    ``w2c_rot`` is a unit quaternion (w, x, y, z); points map as
    ``X_cam = R @ X_world + t`` and project to ``u = fx * x / z + cx``,
    ``v = fy * y / z + cy`` with z > 0 in front of the camera.
    """

    view_id: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    w2c_rot: np.ndarray    # (4,)
    w2c_trans: np.ndarray  # (3,)
    _rotmat: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rot = np.asarray(self.w2c_rot, dtype=np.float64).reshape(4)
        trans = np.asarray(self.w2c_trans, dtype=np.float64).reshape(3)
        if not (np.isfinite(rot).all() and np.isfinite(trans).all()):
            raise ValidationError(f"non-finite pose for view {self.view_id!r}")
        norm = float(np.linalg.norm(rot))
        if abs(norm - 1.0) > 1e-6:
            raise ValidationError(
                f"view {self.view_id!r}: w2c_rot is not a unit quaternion "
                f"(norm {norm:.6g}); rotation would not be orthonormal"
            )
        for name in ("fx", "fy"):
            if not (np.isfinite(getattr(self, name)) and getattr(self, name) > 0):
                raise ValidationError(f"view {self.view_id!r}: {name} must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"view {self.view_id!r}: non-positive image size")
        object.__setattr__(self, "w2c_rot", _freeze(rot))
        object.__setattr__(self, "w2c_trans", _freeze(trans))
        object.__setattr__(self, "_rotmat", _freeze(quat_to_rotmat(rot)))

    @property
    def rotation_matrix(self) -> np.ndarray:
        return self._rotmat

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self._rotmat.T + self.w2c_trans

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -(self._rotmat.T @ self.w2c_trans)

    def scaled(self, factor: int) -> "Camera":
        """Camera for the image grid downscaled by an integer ``factor``."""
        if factor < 1:
            raise ValidationError("scale factor must be >= 1")
        if self.width % factor or self.height % factor:
            raise ValidationError(
                f"view {self.view_id!r}: image size {self.width}x{self.height} "
                f"not divisible by scale factor {factor}"
            )
        off = (factor - 1) / 2.0
        return Camera(
            view_id=self.view_id,
            fx=self.fx / factor,
            fy=self.fy / factor,
            cx=(self.cx - off) / factor,
            cy=(self.cy - off) / factor,
            width=self.width // factor,
            height=self.height // factor,
            w2c_rot=self.w2c_rot,
            w2c_trans=self.w2c_trans,
        )


# ---------------------------------------------------------------------------
# Canonical JSON format
# ---------------------------------------------------------------------------

def scene_to_dict(scene: GaussianScene) -> dict:
    prims = []
    for i in range(scene.count):
        prims.append({
            "mu": scene.positions[i].tolist(),
            "log_scale": scene.log_scales[i].tolist(),
            "rot": scene.rotations[i].tolist(),
            "opacity_logit": float(scene.opacity_logits[i]),
            "color": scene.colors[i].tolist(),
        })
    return {"primitives": prims}


def scene_from_dict(data: dict) -> GaussianScene:
    if not isinstance(data, dict) or "primitives" not in data:
        raise FormatError('scene JSON must be an object with a "primitives" list')
    prims = data["primitives"]
    if not isinstance(prims, list):
        raise FormatError('"primitives" must be a list')
    n = len(prims)
    pos = np.zeros((n, 3))
    log_s = np.zeros((n, 3))
    rot = np.zeros((n, 4))
    op = np.zeros(n)
    col = np.zeros((n, 3))
    for i, p in enumerate(prims):
        try:
            pos[i] = p["mu"]
            log_s[i] = p["log_scale"]
            rot[i] = p["rot"]
            op[i] = p["opacity_logit"]
            col[i] = p["color"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"primitive {i}: {exc}") from exc
    return GaussianScene(pos, log_s, rot, op, col)


def load_scene_json(path: str | Path) -> GaussianScene:
    """Load a scene from canonical JSON.

    Raises FormatError with line context on malformed JSON, and
    ValidationError on non-finite or structurally bad values.
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return scene_from_dict(data)


def save_scene_json(scene: GaussianScene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene)))


# ---------------------------------------------------------------------------
# Binary PLY interop
# ---------------------------------------------------------------------------

_PLY_FIELDS = ["x", "y", "z", "opacity",
               "scale_0", "scale_1", "scale_2",
               "rot_0", "rot_1", "rot_2", "rot_3",
               "f_dc_0", "f_dc_1", "f_dc_2"]


def load_scene_ply(path: str | Path) -> GaussianScene:
    """Import a binary little-endian splat PLY.

    Scales are stored in log space, opacity as a logit, rotation as a
    (w, x, y, z) quaternion that is renormalized on load, and color as
    zeroth-order SH coefficients (``color = f_dc * 0.2820948 + 0.5``).
    """
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]

    fmt = next((ln.split()[1] for ln in header if ln.startswith("format ")), None)
    if fmt != "binary_little_endian":
        raise FormatError(f"{path}: unsupported PLY format {fmt!r} "
                          "(only binary_little_endian is accepted)")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for ln in header:
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            props.append((parts[1], parts[2]))
    if count is None:
        raise FormatError(f"{path}: PLY has no vertex element")

    names = [name for _, name in props]
    missing = [f for f in _PLY_FIELDS if f not in names]
    if missing:
        raise FormatError(f"{path}: PLY missing required properties: "
                          + ", ".join(missing))
    type_map = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8"}
    try:
        dtype = np.dtype([(name, type_map[t]) for t, name in props])
    except KeyError as exc:
        raise FormatError(f"{path}: unsupported PLY property type {exc}") from exc

    expect = dtype.itemsize * count
    if len(body) < expect:
        raise FormatError(f"{path}: PLY body truncated "
                          f"({len(body)} bytes, expected {expect})")
    rec = np.frombuffer(body[:expect], dtype=dtype, count=count)

    col = lambda name: rec[name].astype(np.float64)
    positions = np.stack([col("x"), col("y"), col("z")], axis=1)
    log_scales = np.stack([col(f"scale_{i}") for i in range(3)], axis=1)
    rotations = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    opacity = col("opacity")
    sh_dc = np.stack([col(f"f_dc_{i}") for i in range(3)], axis=1)
    colors = sh_dc * SH_DC_SCALE + 0.5
    return GaussianScene(positions, log_scales, rotations, opacity, colors)


def save_scene_ply(scene: GaussianScene, path: str | Path) -> None:
    """Export to binary little-endian PLY (inverse of :func:`load_scene_ply`)."""
    n = scene.count
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in _PLY_FIELDS]
    header += ["end_header", ""]

    rec = np.empty(n, dtype=np.dtype([(name, "<f4") for name in _PLY_FIELDS]))
    rec["x"], rec["y"], rec["z"] = (scene.positions[:, i] for i in range(3))
    rec["opacity"] = scene.opacity_logits
    for i in range(3):
        rec[f"scale_{i}"] = scene.log_scales[:, i]
    for i in range(4):
        rec[f"rot_{i}"] = scene.rotations[:, i]
    sh_dc = (scene.colors - 0.5) / SH_DC_SCALE
    for i in range(3):
        rec[f"f_dc_{i}"] = sh_dc[:, i]

    with open(path, "wb") as fh:
        fh.write("\n".join(header).encode("ascii"))
        fh.write(rec.tobytes())


# ---------------------------------------------------------------------------
# Cameras
# ---------------------------------------------------------------------------

def load_cameras_json(path: str | Path) -> list[Camera]:
    """Load the camera list, preserving file (trajectory) order."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, dict) or not isinstance(data.get("cameras"), list):
        raise FormatError(f'{path}: expected an object with a "cameras" list')
    cams = []
    seen = set()
    for i, c in enumerate(data["cameras"]):
        try:
            cam = Camera(
                view_id=str(c["view_id"]),
                fx=float(c["fx"]), fy=float(c["fy"]),
                cx=float(c["cx"]), cy=float(c["cy"]),
                width=int(c["width"]), height=int(c["height"]),
                w2c_rot=np.asarray(c["w2c_rot"], dtype=np.float64),
                w2c_trans=np.asarray(c["w2c_trans"], dtype=np.float64),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: camera entry {i}: {exc}") from exc
        if cam.view_id in seen:
            raise ValidationError(f"{path}: duplicate view_id {cam.view_id!r}")
        seen.add(cam.view_id)
        cams.append(cam)
    return cams


def save_cameras_json(cameras: list[Camera], path: str | Path) -> None:
    data = {"cameras": [{
        "view_id": c.view_id,
        "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
        "width": c.width, "height": c.height,
        "w2c_rot": c.w2c_rot.tolist(),
        "w2c_trans": c.w2c_trans.tolist(),
    } for c in cameras]}
    Path(path).write_text(json.dumps(data))


def file_fingerprint(path: str | Path) -> str:
    """Hex SHA-256 of a file's bytes; ties style fields to their base scene."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def lookat_camera(view_id: str, eye, target, up=(0.0, 1.0, 0.0), *,
                  fx: float, fy: float, cx: float, cy: float,
                  width: int, height: int) -> Camera:
    """Build a camera at ``eye`` looking at ``target`` (+z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        raise ValidationError("camera up vector is parallel to the view direction")
    right /= nr
    down = np.cross(fwd, right)
    # Rows of R are the camera axes expressed in world coordinates.
    R = np.stack([right, down, fwd], axis=0)
    quat = _rotmat_to_quat(R)
    trans = -R @ eye
    return Camera(view_id=view_id, fx=fx, fy=fy, cx=cx, cy=cy,
                  width=width, height=height, w2c_rot=quat, w2c_trans=trans)


def _rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), stable branch pick."""
    m00, m11, m22 = R[0, 0], R[1, 1], R[2, 2]
    tr = m00 + m11 + m22
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif m00 >= m11 and m00 >= m22:
        s = np.sqrt(1.0 + m00 - m11 - m22) * 2.0
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif m11 >= m22:
        s = np.sqrt(1.0 + m11 - m00 - m22) * 2.0
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m22 - m00 - m11) * 2.0
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    return q / np.linalg.norm(q)
