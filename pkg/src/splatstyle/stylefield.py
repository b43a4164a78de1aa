"""Per-primitive style offset fields and the bucketed intensity tuner.

A style is stored as trainable additive offsets over every primitive
attribute. How strongly the offsets apply is steered by a 14-component
gain vector with one entry per attribute channel:

    position 0:3 | log_scale 3:6 | rotation 6:10 | opacity 10:11 | color 11:14

The tuner quantizes a continuous intensity ``beta`` in [lo, hi] into
``bucket_count`` buckets via a staircase and stores one learnable gain
vector per bucket. Bucket 0 is pinned to the zero vector and is never
trained, so intensity ``lo`` reproduces the base scene exactly. The top
bucket is learned jointly with the offsets against full-style targets; the
interior buckets are learned afterwards with blended objectives.

Composition adds ``gain[channel] * offset`` onto the base attributes.
Rotations are composed additively in quaternion space and renormalized;
rows whose rotation update is zero are left bit-identical.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError
from .scene import GaussianScene

GAIN_CHANNELS = 14
CHANNEL_SLICES = {
    "position": slice(0, 3),
    "log_scale": slice(3, 6),
    "rotation": slice(6, 10),
    "opacity_logit": slice(10, 11),
    "color": slice(11, 14),
}

_FIELD_MAGIC = b"STYF"
_FIELD_VERSION = 1


@dataclass
class StyleOffsetField:
    """Trainable per-primitive attribute offsets for one style."""

    style_id: str
    d_position: np.ndarray       # (N, 3)
    d_log_scale: np.ndarray      # (N, 3)
    d_rotation: np.ndarray       # (N, 4)
    d_opacity_logit: np.ndarray  # (N,)
    d_color: np.ndarray          # (N, 3)
    scene_fingerprint: str = "0" * 64

    def __post_init__(self):
        n = self.d_position.shape[0]
        shapes = {"d_position": (n, 3), "d_log_scale": (n, 3),
                  "d_rotation": (n, 4), "d_opacity_logit": (n,),
                  "d_color": (n, 3)}
        for name, shape in shapes.items():
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValidationError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise ValidationError(f"non-finite values in {name}")
            setattr(self, name, arr)
        if len(self.scene_fingerprint) != 64:
            raise ValidationError("scene fingerprint must be 64 hex characters")

    @classmethod
    def zeros(cls, count: int, style_id: str,
              scene_fingerprint: str = "0" * 64) -> "StyleOffsetField":
        return cls(style_id=style_id,
                   d_position=np.zeros((count, 3)),
                   d_log_scale=np.zeros((count, 3)),
                   d_rotation=np.zeros((count, 4)),
                   d_opacity_logit=np.zeros(count),
                   d_color=np.zeros((count, 3)),
                   scene_fingerprint=scene_fingerprint)

    @property
    def count(self) -> int:
        return self.d_position.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"d_position": self.d_position, "d_log_scale": self.d_log_scale,
                "d_rotation": self.d_rotation,
                "d_opacity_logit": self.d_opacity_logit, "d_color": self.d_color}


@dataclass
class StyleTuner:
    """Staircase intensity quantizer with per-bucket gain vectors."""

    bucket_count: int = 10
    lo: float = 0.0
    hi: float = 1.0
    embeddings: np.ndarray = field(default=None)      # (Z, 14)
    trainable_mask: np.ndarray = field(default=None)  # (Z,) bool

    def __post_init__(self):
        if self.bucket_count < 2:
            raise ValidationError("tuner needs at least two buckets")
        if not self.lo < self.hi:
            raise ValidationError("tuner range must satisfy lo < hi")
        if self.embeddings is None:
            emb = np.ones((self.bucket_count, GAIN_CHANNELS))
            emb[0] = 0.0
            self.embeddings = emb
        else:
            self.embeddings = np.ascontiguousarray(self.embeddings,
                                                   dtype=np.float64)
            if self.embeddings.shape != (self.bucket_count, GAIN_CHANNELS):
                raise ValidationError(
                    f"embeddings shape {self.embeddings.shape} != "
                    f"({self.bucket_count}, {GAIN_CHANNELS})")
        if self.trainable_mask is None:
            mask = np.ones(self.bucket_count, dtype=bool)
            mask[0] = False
            self.trainable_mask = mask
        else:
            self.trainable_mask = np.asarray(self.trainable_mask, dtype=bool)
        if np.any(self.embeddings[0] != 0.0):
            raise ValidationError("bucket 0 must stay pinned to zero")

    @property
    def bucket_width(self) -> float:
        return (self.hi - self.lo) / self.bucket_count


def staircase(beta: float, tuner: StyleTuner) -> int:
    """Bucket index for ``beta``; boundary values fall to the lower bucket.

    ``beta == hi`` maps to the top bucket. Values outside [lo, hi] raise.
    """
    if not np.isfinite(beta) or beta < tuner.lo or beta > tuner.hi:
        raise ValidationError(
            f"intensity {beta} outside [{tuner.lo}, {tuner.hi}]")
    z = math.ceil((beta - tuner.lo) / tuner.bucket_width) - 1
    return int(min(max(z, 0), tuner.bucket_count - 1))


def embedding_for(tuner: StyleTuner, beta: float) -> np.ndarray:
    """Gain vector of the bucket that ``beta`` falls into (a copy)."""
    return tuner.embeddings[staircase(beta, tuner)].copy()


def _validate_mask(mask, count: int) -> np.ndarray | None:
    if mask is None:
        return None
    idx = np.asarray(mask, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= count):
        raise ValidationError(
            f"mask index out of range for scene of {count} primitives")
    if np.unique(idx).size != idx.size:
        raise ValidationError("mask contains duplicate indices")
    return idx


def compose(base: GaussianScene, offsets: StyleOffsetField, gains: np.ndarray,
            mask: np.ndarray | None = None) -> GaussianScene:
    """Apply ``gains[channel] * offset`` on top of the base attributes.

    A zero gain vector returns the base scene itself, bit for bit. With a
    mask, only the listed primitives are touched. Rotations are composed
    additively then renormalized; rows with no rotation update keep their
    exact stored quaternion.
    """
    if offsets.count != base.count:
        raise ValidationError(
            f"offset field covers {offsets.count} primitives, scene has {base.count}")
    v = np.asarray(gains, dtype=np.float64).reshape(-1)
    if v.shape != (GAIN_CHANNELS,):
        raise ValidationError(f"gain vector must have {GAIN_CHANNELS} entries")
    idx = _validate_mask(mask, base.count)
    if not np.any(v):
        return base

    rows = slice(None) if idx is None else idx
    pos = np.array(base.positions)
    log_s = np.array(base.log_scales)
    rot = np.array(base.rotations)
    op = np.array(base.opacity_logits)
    col = np.array(base.colors)

    pos[rows] += v[CHANNEL_SLICES["position"]] * offsets.d_position[rows]
    log_s[rows] += v[CHANNEL_SLICES["log_scale"]] * offsets.d_log_scale[rows]
    rot[rows] += v[CHANNEL_SLICES["rotation"]] * offsets.d_rotation[rows]
    op[rows] += v[10] * offsets.d_opacity_logit[rows]
    col[rows] += v[CHANNEL_SLICES["color"]] * offsets.d_color[rows]
    # Scene construction renormalizes exactly the rows that moved.
    return GaussianScene(positions=pos, log_scales=log_s, rotations=rot,
                         opacity_logits=op, colors=col)


def compose_backward(base: GaussianScene, offsets: StyleOffsetField,
                     gains: np.ndarray, scene_grads,
                     mask: np.ndarray | None = None):
    """Pull gradients w.r.t. the composed scene back onto field and gains.

    ``scene_grads`` is a render ``SceneGradients``. Returns
    ``(field_grads, gain_grads)`` where ``field_grads`` is a dict matching
    :meth:`StyleOffsetField.arrays` and ``gain_grads`` has shape (14,).
    """
    v = np.asarray(gains, dtype=np.float64).reshape(-1)
    idx = _validate_mask(mask, base.count)
    rows = np.arange(base.count) if idx is None else idx

    # Chain through the rotation renormalization at the composed point.
    q_raw = base.rotations[rows] + v[CHANNEL_SLICES["rotation"]] * offsets.d_rotation[rows]
    norms = np.linalg.norm(q_raw, axis=1, keepdims=True)
    q_hat = q_raw / norms
    g_rot_scene = scene_grads.d_rotation[rows]
    dot = np.sum(g_rot_scene * q_hat, axis=1, keepdims=True)
    g_q_raw = (g_rot_scene - q_hat * dot) / norms

    field_grads = {name: np.zeros_like(arr)
                   for name, arr in
                   (("d_position", offsets.d_position),
                    ("d_log_scale", offsets.d_log_scale),
                    ("d_rotation", offsets.d_rotation),
                    ("d_opacity_logit", offsets.d_opacity_logit),
                    ("d_color", offsets.d_color))}
    gain_grads = np.zeros(GAIN_CHANNELS)

    pairs = (("d_position", scene_grads.d_position[rows], CHANNEL_SLICES["position"]),
             ("d_log_scale", scene_grads.d_log_scale[rows], CHANNEL_SLICES["log_scale"]),
             ("d_rotation", g_q_raw, CHANNEL_SLICES["rotation"]),
             ("d_color", scene_grads.d_color[rows], CHANNEL_SLICES["color"]))
    for name, g_attr, sl in pairs:
        field_grads[name][rows] = v[sl] * g_attr
        gain_grads[sl] = np.sum(g_attr * getattr(offsets, name)[rows], axis=0)
    g_op = scene_grads.d_opacity_logit[rows]
    field_grads["d_opacity_logit"][rows] = v[10] * g_op
    gain_grads[10] = float(np.sum(g_op * offsets.d_opacity_logit[rows]))
    return field_grads, gain_grads


@dataclass(frozen=True)
class StyleEntry:
    """One style application: field + tuner + intensity, optionally masked."""

    offsets: StyleOffsetField
    tuner: StyleTuner
    beta: float
    mask: np.ndarray | None = None


def compose_multi(base: GaussianScene,
                  entries: list[StyleEntry]) -> GaussianScene:
    """Apply several styles sequentially; explicit masks must be disjoint."""
    seen: np.ndarray | None = None
    for entry in entries:
        idx = _validate_mask(entry.mask, base.count)
        if idx is None:
            continue
        if seen is not None and np.intersect1d(seen, idx).size:
            raise ValidationError("style masks overlap")
        seen = idx if seen is None else np.union1d(seen, idx)
    scene = base
    for entry in entries:
        gains = embedding_for(entry.tuner, entry.beta)
        scene = compose(scene, entry.offsets, gains, entry.mask)
    return scene


# ---------------------------------------------------------------------------
# Binary field format
# ---------------------------------------------------------------------------

def save_field(offsets: StyleOffsetField, tuner: StyleTuner,
               path) -> None:
    """Serialize field + tuner. Arrays are stored as little-endian float32."""
    style_bytes = offsets.style_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_FIELD_MAGIC)
        fh.write(struct.pack("<IIIff", _FIELD_VERSION, offsets.count,
                             tuner.bucket_count, tuner.lo, tuner.hi))
        fh.write(offsets.scene_fingerprint.encode("ascii"))
        for name in ("d_position", "d_log_scale", "d_rotation",
                     "d_opacity_logit", "d_color"):
            fh.write(getattr(offsets, name).astype("<f4").tobytes(order="C"))
        fh.write(tuner.embeddings.astype("<f4").tobytes(order="C"))
        fh.write(struct.pack("<I", len(style_bytes)))
        fh.write(style_bytes)


def load_field(path, expected_fingerprint: str | None = None
               ) -> tuple[StyleOffsetField, StyleTuner]:
    """Read a field file; a fingerprint mismatch warns but still loads."""
    raw = memoryview(open(path, "rb").read())
    if len(raw) < 4 + 20 + 64 or bytes(raw[:4]) != _FIELD_MAGIC:
        raise FormatError(f"{path}: not a style field file")
    version, n, z, lo, hi = struct.unpack("<IIIff", raw[4:24])
    if version != _FIELD_VERSION:
        raise FormatError(f"{path}: unsupported field version {version}")
    fingerprint = bytes(raw[24:88]).decode("ascii", errors="replace")
    off = 88

    def take(shape):
        nonlocal off
        size = int(np.prod(shape)) * 4
        if off + size > len(raw):
            raise FormatError(f"{path}: field file truncated")
        arr = np.frombuffer(raw[off:off + size], dtype="<f4").astype(np.float64)
        off += size
        return arr.reshape(shape)

    d_pos = take((n, 3))
    d_ls = take((n, 3))
    d_rot = take((n, 4))
    d_op = take((n,))
    d_col = take((n, 3))
    emb = take((z, GAIN_CHANNELS))
    if off + 4 > len(raw):
        raise FormatError(f"{path}: field file truncated")
    (slen,) = struct.unpack("<I", raw[off:off + 4])
    off += 4
    if off + slen > len(raw):
        raise FormatError(f"{path}: field file truncated")
    style_id = bytes(raw[off:off + slen]).decode("utf-8")

    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        warnings.warn(
            f"{path}: style field was trained against a different scene "
            f"(fingerprint {fingerprint[:12]}... != {expected_fingerprint[:12]}...)",
            stacklevel=2)
    field_obj = StyleOffsetField(
        style_id=style_id, d_position=d_pos, d_log_scale=d_ls,
        d_rotation=d_rot, d_opacity_logit=d_op, d_color=d_col,
        scene_fingerprint=fingerprint)
    mask = np.ones(z, dtype=bool)
    mask[0] = False
    tuner = StyleTuner(bucket_count=int(z), lo=float(lo), hi=float(hi),
                       embeddings=emb, trainable_mask=mask)
    return field_obj, tuner


def load_mask(path) -> np.ndarray:
    try:
        data = json.loads(open(path).read())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed mask JSON: {exc.msg}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("indices"), list):
        raise FormatError(f'{path}: expected an object with an "indices" list')
    return np.asarray(data["indices"], dtype=np.int64)


def save_mask(indices: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        json.dump({"indices": [int(i) for i in np.asarray(indices).reshape(-1)]}, fh)
