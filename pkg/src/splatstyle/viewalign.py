"""Cross-view alignment of stylized targets.

Stylizing each view independently leaves small cross-view disagreements.
This module reduces them by warping the anchor view's features into every
other view with the scene's depth, mixing warped and current features with
scaled dot-product attention, and blending the result back into the
stylized target.

Feature grids are the camera image grid downscaled by an integer factor,
with intrinsics scaled to match (:meth:`splatstyle.scene.Camera.scaled`).
Warping scatters each source cell to its nearest destination cell and
keeps the smallest camera depth on collisions; cells that land outside the
grid, behind the camera, or whose warped depth disagrees with the
destination depth beyond ``z_tolerance`` are marked invalid.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .images import write_f32img, write_png
from .render import RenderConfig, render_depth
from .scene import Camera, GaussianScene
from .stylize import StyleTargetManifest, save_manifest

DEFAULT_FEATURE_SCALE = 4
DEFAULT_BLEND = 0.5
_ZNEAR = 1e-9

# Sinusoidal positional channels appended to the RGB features during
# manifest calibration. cos/sin pairs make the dot product peak where grid
# positions coincide, so attention stays local instead of averaging the
# whole image; the amplitude sets how sharply it peaks.
POS_FREQUENCIES = (1, 2, 4, 8)
POS_AMPLITUDE = 2.0


@dataclass(frozen=True)
class FeatureMap:
    """Dense feature grid with a validity mask; invalid cells hold zeros."""

    features: np.ndarray  # (H, W, D)
    validity: np.ndarray  # (H, W) bool

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        valid = np.asarray(self.validity, dtype=bool)
        if feats.ndim != 3:
            raise ValidationError(f"features must be (H, W, D), got {feats.shape}")
        if valid.shape != feats.shape[:2]:
            raise ValidationError(
                f"validity shape {valid.shape} does not match grid {feats.shape[:2]}")
        feats = np.where(valid[:, :, None], feats, 0.0)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "validity", valid)

    @property
    def dim(self) -> int:
        return self.features.shape[2]


@dataclass(frozen=True)
class WarpResult:
    warped: FeatureMap
    coverage: float           # valid fraction of the destination grid
    warped_depth: np.ndarray  # (H, W) destination-camera z, +inf invalid


def warp_feature(src: FeatureMap, src_depth: np.ndarray, src_cam: Camera,
                 dst_cam: Camera, dst_depth: np.ndarray | None = None,
                 z_tolerance: float = np.inf) -> WarpResult:
    """Forward-warp ``src`` into ``dst_cam`` using per-cell depth.

    ``src_depth``/``dst_depth`` are at feature-grid resolution with +inf
    marking invalid cells. Holes in the destination stay invalid; nothing
    is interpolated.
    """
    h, w = src.validity.shape
    if (src_cam.height, src_cam.width) != (h, w):
        raise ValidationError(
            f"source grid {w}x{h} does not match camera "
            f"{src_cam.width}x{src_cam.height}")
    depth = np.asarray(src_depth, dtype=np.float64)
    if depth.shape != (h, w):
        raise ValidationError(
            f"src_depth shape {depth.shape} does not match grid ({h}, {w})")
    hd, wd = dst_cam.height, dst_cam.width
    if dst_depth is not None:
        dst_depth = np.asarray(dst_depth, dtype=np.float64)
        if dst_depth.shape != (hd, wd):
            raise ValidationError(
                f"dst_depth shape {dst_depth.shape} does not match camera "
                f"({hd}, {wd})")

    rows, cols = np.mgrid[0:h, 0:w]
    ok = src.validity & np.isfinite(depth)
    r = rows[ok].astype(np.float64)
    c = cols[ok].astype(np.float64)
    z = depth[ok]
    feats = src.features[ok]

    # Unproject grid cells, move to world, reproject into the destination.
    x = (c - src_cam.cx) / src_cam.fx * z
    y = (r - src_cam.cy) / src_cam.fy * z
    pts_world = (np.stack([x, y, z], axis=1) - src_cam.w2c_trans) @ src_cam.rotation_matrix
    pts_dst = pts_world @ dst_cam.rotation_matrix.T + dst_cam.w2c_trans
    zd = pts_dst[:, 2]
    front = zd > _ZNEAR
    u = dst_cam.fx * pts_dst[front, 0] / zd[front] + dst_cam.cx
    v = dst_cam.fy * pts_dst[front, 1] / zd[front] + dst_cam.cy
    ci = np.rint(u).astype(np.int64)
    ri = np.rint(v).astype(np.int64)
    inside = (ci >= 0) & (ci < wd) & (ri >= 0) & (ri < hd)

    zd = zd[front][inside]
    ci, ri = ci[inside], ri[inside]
    feats = feats[front][inside]
    flat = ri * wd + ci

    out_feats = np.zeros((hd * wd, src.dim))
    out_depth = np.full(hd * wd, np.inf)
    if flat.size:
        # Scatter farthest first so the nearest depth wins each cell.
        order = np.lexsort((np.arange(flat.size), -zd))
        out_feats[flat[order]] = feats[order]
        out_depth[flat[order]] = zd[order]

    valid = np.isfinite(out_depth)
    if dst_depth is not None:
        dflat = dst_depth.reshape(-1)
        agree = np.isfinite(dflat) & (np.abs(out_depth - dflat) <= z_tolerance)
        valid &= agree
        out_depth = np.where(valid, out_depth, np.inf)

    warped = FeatureMap(features=out_feats.reshape(hd, wd, src.dim),
                        validity=valid.reshape(hd, wd))
    return WarpResult(warped=warped, coverage=float(valid.mean()),
                      warped_depth=out_depth.reshape(hd, wd))


def mutual_attention(query: FeatureMap, k_warp: FeatureMap, v_warp: FeatureMap,
                     k_cur: FeatureMap, v_cur: FeatureMap) -> FeatureMap:
    """Scaled dot-product attention over [warped, current] keys and values.

    Every query cell attends over the concatenation of valid warped cells
    and valid current cells; invalid cells never enter the key/value set.
    Softmax rows are stabilized by max subtraction. The output keeps the
    query grid and validity.
    """
    d = query.dim
    for name, fm in (("k_warp", k_warp), ("v_warp", v_warp),
                     ("k_cur", k_cur), ("v_cur", v_cur)):
        if fm.dim != d:
            raise ValidationError(f"{name} feature dim {fm.dim} != query dim {d}")
    for name, k, v in (("warp", k_warp, v_warp), ("cur", k_cur, v_cur)):
        if k.validity.shape != v.validity.shape or np.any(k.validity != v.validity):
            raise ValidationError(f"{name} keys and values disagree on validity")

    keys = np.concatenate([k_warp.features[k_warp.validity],
                           k_cur.features[k_cur.validity]], axis=0)
    values = np.concatenate([v_warp.features[v_warp.validity],
                             v_cur.features[v_cur.validity]], axis=0)
    if keys.shape[0] == 0:
        raise ValidationError("attention has no valid keys")

    q = query.features.reshape(-1, d)
    scores = q @ keys.T / np.sqrt(d)
    scores -= scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=1, keepdims=True)
    out = (weights @ values).reshape(query.features.shape)
    return FeatureMap(features=out, validity=query.validity.copy())


def downsample_image(image: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean pooling of an (H, W, C) image by an integer factor."""
    h, w = image.shape[:2]
    if h % factor or w % factor:
        raise ValidationError(f"image {w}x{h} not divisible by factor {factor}")
    hs, ws = h // factor, w // factor
    return image.reshape(hs, factor, ws, factor, -1).mean(axis=(1, 3))


def downsample_depth(depth: np.ndarray, factor: int) -> np.ndarray:
    """Blockwise mean of finite depths; +inf where a block has none."""
    h, w = depth.shape
    if h % factor or w % factor:
        raise ValidationError(f"depth {w}x{h} not divisible by factor {factor}")
    hs, ws = h // factor, w // factor
    blocks = depth.reshape(hs, factor, ws, factor)
    finite = np.isfinite(blocks)
    counts = finite.sum(axis=(1, 3))
    sums = np.where(finite, blocks, 0.0).sum(axis=(1, 3))
    with np.errstate(invalid="ignore"):
        out = np.where(counts > 0, sums / np.maximum(counts, 1), np.inf)
    return out


def upsample_nearest(grid: np.ndarray, factor: int) -> np.ndarray:
    """Block-replicate a grid back to image resolution."""
    return np.repeat(np.repeat(grid, factor, axis=0), factor, axis=1)


def positional_channels(height: int, width: int,
                        frequencies: tuple[int, ...] = POS_FREQUENCIES,
                        amplitude: float = POS_AMPLITUDE) -> np.ndarray:
    """(H, W, 4*len(frequencies)) cos/sin grid encodings for attention keys."""
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    channels = []
    for pos, extent in ((rows, height), (cols, width)):
        for freq in frequencies:
            theta = 2.0 * np.pi * freq * pos / extent
            channels.append(np.cos(theta) * amplitude)
            channels.append(np.sin(theta) * amplitude)
    return np.stack(channels, axis=2)


def scene_depth_tolerance(depths: list[np.ndarray], fraction: float = 0.01,
                          floor: float = 1e-4) -> float:
    """Default warp tolerance: a fraction of the scene's finite depth range."""
    finite = np.concatenate([d[np.isfinite(d)].ravel() for d in depths])
    if finite.size == 0:
        return floor
    return max(float(finite.max() - finite.min()) * fraction, floor)


def align_manifest(scene: GaussianScene, cameras: list[Camera],
                   manifest: StyleTargetManifest,
                   images: dict[str, np.ndarray], out_dir: str | Path,
                   feature_scale: int = DEFAULT_FEATURE_SCALE,
                   blend: float = DEFAULT_BLEND,
                   z_tolerance: float | None = None,
                   config: RenderConfig = RenderConfig(),
                   dump_dir: str | Path | None = None) -> StyleTargetManifest:
    """Calibrate non-anchor targets against the anchor view.

    For each non-anchor view, the anchor's stylized features are warped in,
    mixed with the view's own features by mutual attention, and blended into
    the stylized target with weight ``blend`` wherever the warp is valid.
    The anchor target is copied unchanged. Writes PNGs plus manifest.json to
    ``out_dir`` and returns the new manifest (alignment
    ``"content-calibrated"``).

    With ``dump_dir`` set, the per-view feature grids and warp validity
    masks are also written as ``.f32img`` files (``{view}.f32img`` and
    ``{view}_validity.f32img``) for external consumers.
    """
    if not 0.0 <= blend <= 1.0:
        raise ValidationError(f"blend weight must be in [0, 1], got {blend}")
    cams = {c.view_id: c for c in cameras}
    for entry in manifest.entries:
        if entry.view_id not in cams:
            raise ValidationError(f"manifest view {entry.view_id!r} has no camera")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump = None
    if dump_dir is not None:
        dump = Path(dump_dir)
        dump.mkdir(parents=True, exist_ok=True)

    depths = {vid: render_depth(scene, cam, config) for vid, cam in cams.items()}
    if z_tolerance is None:
        z_tolerance = scene_depth_tolerance(list(depths.values()))

    anchor_id = manifest.anchor_view
    anchor_cam = cams[anchor_id].scaled(feature_scale)
    anchor_depth = downsample_depth(depths[anchor_id], feature_scale)
    anchor_feat = FeatureMap(
        features=downsample_image(images[anchor_id], feature_scale),
        validity=np.ones(anchor_depth.shape, dtype=bool))

    entries = []
    for entry in manifest.entries:
        name = f"{entry.view_id}.png"
        if entry.anchor:
            # The anchor defines the style; it passes through untouched.
            write_png(images[entry.view_id], out / name)
            entries.append(entry.__class__(view_id=entry.view_id, path=name,
                                           anchor=True))
            if dump is not None:
                write_f32img(anchor_feat.features,
                             dump / f"{entry.view_id}.f32img")
                write_f32img(
                    anchor_feat.validity[:, :, None].astype(np.float64),
                    dump / f"{entry.view_id}_validity.f32img")
            continue

        cam = cams[entry.view_id]
        target = images[entry.view_id]
        dst_depth = downsample_depth(depths[entry.view_id], feature_scale)
        warp = warp_feature(anchor_feat, anchor_depth, anchor_cam,
                            cam.scaled(feature_scale), dst_depth=dst_depth,
                            z_tolerance=z_tolerance)
        # Tag every cell with where it sits on the destination grid so
        # attention matches corresponding cells rather than blending the
        # whole frame; positional channels ride along in the values and
        # are dropped afterwards.
        pos = positional_channels(*dst_depth.shape)
        cur = FeatureMap(
            features=np.concatenate(
                [downsample_image(target, feature_scale), pos], axis=2),
            validity=np.ones(dst_depth.shape, dtype=bool))
        warped_aug = FeatureMap(
            features=np.concatenate([warp.warped.features, pos], axis=2),
            validity=warp.warped.validity)
        mixed = mutual_attention(cur, warped_aug, warped_aug, cur, cur)

        if dump is not None:
            write_f32img(warp.warped.features,
                         dump / f"{entry.view_id}.f32img")
            write_f32img(warp.warped.validity[:, :, None].astype(np.float64),
                         dump / f"{entry.view_id}_validity.f32img")

        attn_up = upsample_nearest(mixed.features[:, :, :target.shape[2]],
                                   feature_scale)
        valid_up = upsample_nearest(warp.warped.validity, feature_scale)
        blended = np.where(valid_up[:, :, None],
                           (1.0 - blend) * target + blend * attn_up, target)
        write_png(np.clip(blended, 0.0, 1.0), out / name)
        entries.append(entry.__class__(view_id=entry.view_id, path=name,
                                       anchor=False))

    aligned = StyleTargetManifest(style_id=manifest.style_id,
                                  alignment="content-calibrated",
                                  entries=tuple(entries))
    save_manifest(aligned, out / "manifest.json")
    return aligned
