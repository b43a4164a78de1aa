"""Depth-based forward warping between views.

Re-implemented from the cross-view calibration contract: each valid source
cell is unprojected with its depth, moved to the destination camera, and
scattered to the nearest destination cell; on collisions the smallest
destination depth wins. Cells landing outside the grid or behind the
camera stay invalid, and when a destination depth buffer is given, warped
cells whose depth disagrees with it beyond ``z_tolerance`` are dropped.
Nothing is interpolated; holes stay holes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import BridgeError
from .formats import BridgeCamera

_ZNEAR = 1e-9


@dataclass(frozen=True)
class WarpOutput:
    features: np.ndarray      # (H, W, D), zeros where invalid
    validity: np.ndarray      # (H, W) bool
    warped_depth: np.ndarray  # (H, W), +inf where invalid
    coverage: float


def warp_features(features: np.ndarray, validity: np.ndarray,
                  src_depth: np.ndarray, src_cam: BridgeCamera,
                  dst_cam: BridgeCamera, dst_depth: np.ndarray | None = None,
                  z_tolerance: float = np.inf) -> WarpOutput:
    feats = np.asarray(features, dtype=np.float64)
    valid_src = np.asarray(validity, dtype=bool)
    depth = np.asarray(src_depth, dtype=np.float64)
    h, w = valid_src.shape
    if feats.shape[:2] != (h, w) or feats.ndim != 3:
        raise BridgeError(
            f"features shape {feats.shape} does not match grid ({h}, {w})")
    if (src_cam.height, src_cam.width) != (h, w):
        raise BridgeError(
            f"source grid {w}x{h} does not match camera "
            f"{src_cam.width}x{src_cam.height}")
    if depth.shape != (h, w):
        raise BridgeError(
            f"src_depth shape {depth.shape} does not match grid ({h}, {w})")
    hd, wd = dst_cam.height, dst_cam.width
    if dst_depth is not None:
        dst_depth = np.asarray(dst_depth, dtype=np.float64)
        if dst_depth.shape != (hd, wd):
            raise BridgeError(
                f"dst_depth shape {dst_depth.shape} does not match camera "
                f"({hd}, {wd})")

    dim = feats.shape[2]
    rows, cols = np.mgrid[0:h, 0:w]
    ok = valid_src & np.isfinite(depth)
    r = rows[ok].astype(np.float64)
    c = cols[ok].astype(np.float64)
    z = depth[ok]
    moved = feats[ok]

    x = (c - src_cam.cx) / src_cam.fx * z
    y = (r - src_cam.cy) / src_cam.fy * z
    src_t = np.asarray(src_cam.w2c_trans, dtype=np.float64)
    dst_t = np.asarray(dst_cam.w2c_trans, dtype=np.float64)
    pts_world = (np.stack([x, y, z], axis=1) - src_t) @ src_cam.rotation_matrix
    pts_dst = pts_world @ dst_cam.rotation_matrix.T + dst_t
    zd = pts_dst[:, 2]
    front = zd > _ZNEAR
    u = dst_cam.fx * pts_dst[front, 0] / zd[front] + dst_cam.cx
    v = dst_cam.fy * pts_dst[front, 1] / zd[front] + dst_cam.cy
    ci = np.rint(u).astype(np.int64)
    ri = np.rint(v).astype(np.int64)
    inside = (ci >= 0) & (ci < wd) & (ri >= 0) & (ri < hd)

    zd = zd[front][inside]
    ci, ri = ci[inside], ri[inside]
    moved = moved[front][inside]
    flat = ri * wd + ci

    out_feats = np.zeros((hd * wd, dim))
    out_depth = np.full(hd * wd, np.inf)
    if flat.size:
        order = np.lexsort((np.arange(flat.size), -zd))
        out_feats[flat[order]] = moved[order]
        out_depth[flat[order]] = zd[order]

    valid = np.isfinite(out_depth)
    if dst_depth is not None:
        dflat = dst_depth.reshape(-1)
        valid &= np.isfinite(dflat) & (np.abs(out_depth - dflat) <= z_tolerance)
        out_depth = np.where(valid, out_depth, np.inf)

    out_feats = np.where(valid[:, None], out_feats, 0.0)
    return WarpOutput(features=out_feats.reshape(hd, wd, dim),
                      validity=valid.reshape(hd, wd),
                      warped_depth=out_depth.reshape(hd, wd),
                      coverage=float(valid.mean()))


def depth_tolerance(depths: list[np.ndarray], fraction: float = 0.01,
                    floor: float = 1e-4) -> float:
    """Warp tolerance as a fraction of the scene's finite depth range."""
    finite = np.concatenate([d[np.isfinite(d)].ravel() for d in depths])
    if finite.size == 0:
        return floor
    return max(float(finite.max() - finite.min()) * fraction, floor)
