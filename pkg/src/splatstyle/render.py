"""Differentiable forward splatting of 3D Gaussian primitives.

Pipeline per view:

1. transform means to camera space, cull primitives behind the camera;
2. build the 3D covariance ``Sigma = R S S^T R^T`` from quaternion and
   exp(log_scale);
3. project it through the perspective Jacobian ``J`` to a 2D covariance
   ``Sigma' = (J W) Sigma (J W)^T`` (affine approximation);
4. splat front to back: ``alpha_i = sigmoid(opacity_logit_i) *
   exp(-0.5 d^T Sigma'^{-1} d)``, pixel color ``C = sum c_i alpha_i T_i``
   with ``T_i = prod_{j<i} (1 - alpha_j)``, remaining transmittance
   composites the background.

Primitives are blended in global depth order (camera z, ties by storage
index). A contribution is included at a pixel only when the pixel lies in
the primitive's ``sigma_clip`` bounding box, ``alpha >= alpha_cutoff``, and
the transmittance at that pixel is still ``>= transmittance_floor``.
Projected covariances with condition number above ``max_condition`` are
skipped and tallied.

The backward pass replays the forward blend and accumulates analytic
reverse-mode gradients through blending, the 2D projection, the covariance
factorization, the sigmoid, and the quaternion-to-rotation map. Per-pixel
suffix composites are maintained back to front, so no division by
``1 - alpha`` is needed and fully opaque contributions are safe.

Pixel (row, col) samples the continuous image point (u=col, v=row).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .scene import Camera, GaussianScene, quat_to_rotmat

DEPTH_INVALID = np.inf


@dataclass(frozen=True)
class RenderConfig:
    """Rendering knobs; defaults match the shipped pipelines."""

    background: tuple = (0.0, 0.0, 0.0)
    alpha_cutoff: float = 1.0 / 255.0
    transmittance_floor: float = 1e-4
    sigma_clip: float = 3.0
    znear: float = 1e-6
    max_condition: float = 1e12
    weight_eps: float = 1e-8


@dataclass(frozen=True)
class HitRecords:
    """Flat per-contribution arrays, in global blend order.

    ``prim`` is the primitive's storage index, ``pixel`` the flat row-major
    pixel index, ``alpha`` the blended opacity, and ``t_before`` the
    transmittance at that pixel just before the contribution.
    """

    prim: np.ndarray      # (K,) int32
    pixel: np.ndarray     # (K,) int32
    alpha: np.ndarray     # (K,) float64
    t_before: np.ndarray  # (K,) float64

    def weight_per_primitive(self, count: int) -> np.ndarray:
        """Accumulated blending weight ``sum alpha * T`` per primitive."""
        return np.bincount(self.prim, weights=self.alpha * self.t_before,
                           minlength=count)

    def weight_per_pixel(self, pixel_count: int) -> np.ndarray:
        return np.bincount(self.pixel, weights=self.alpha * self.t_before,
                           minlength=pixel_count)


@dataclass(frozen=True)
class RenderOutput:
    image: np.ndarray                 # (H, W, 3) in [0, 1]
    depth: np.ndarray                 # (H, W) camera-z, +inf where no weight
    per_pixel_weight_sum: np.ndarray  # (H, W)
    hit_records: HitRecords
    skipped_degenerate: int


@dataclass(frozen=True)
class SceneGradients:
    d_position: np.ndarray       # (N, 3)
    d_log_scale: np.ndarray      # (N, 3)
    d_rotation: np.ndarray       # (N, 4)
    d_opacity_logit: np.ndarray  # (N,)
    d_color: np.ndarray          # (N, 3)


@dataclass
class _Projection:
    """Per-primitive projection intermediates kept for the backward pass."""

    valid: np.ndarray       # (N,) bool: in front and non-degenerate
    order: np.ndarray       # indices of valid primitives, front to back
    p_cam: np.ndarray       # (N, 3)
    mean2d: np.ndarray      # (N, 2) (u, v)
    inv_cov: np.ndarray     # (N, 3) packed symmetric inverse (qa, qb, qc)
    radius: np.ndarray      # (N,) pixel footprint radius
    sigma: np.ndarray       # (N,) sigmoid(opacity_logit)
    scales: np.ndarray      # (N, 3) exp(log_scale)
    q_unit: np.ndarray      # (N, 4) normalized quaternion
    q_norm: np.ndarray      # (N,) raw quaternion norm
    rot_mat: np.ndarray     # (N, 3, 3)
    M: np.ndarray           # (N, 3, 3) = R diag(s)
    sigma3: np.ndarray      # (N, 3, 3)
    A: np.ndarray           # (N, 2, 3) = J @ W
    skipped_degenerate: int


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _project(scene: GaussianScene, camera: Camera,
             config: RenderConfig) -> _Projection:
    W = camera.rotation_matrix
    p_cam = scene.positions @ W.T + camera.w2c_trans
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    in_front = z > config.znear
    zs = np.where(in_front, z, 1.0)  # safe divisor for culled rows

    norms = np.linalg.norm(scene.rotations, axis=1)
    q_unit = scene.rotations / norms[:, None]
    rot_mat = quat_to_rotmat(q_unit)
    scales = np.exp(scene.log_scales)
    M = rot_mat * scales[:, None, :]
    sigma3 = M @ M.transpose(0, 2, 1)

    fx, fy = camera.fx, camera.fy
    n = scene.count
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = fx / zs
    J[:, 0, 2] = -fx * x / zs**2
    J[:, 1, 1] = fy / zs
    J[:, 1, 2] = -fy * y / zs**2
    A = J @ W
    cov2d = A @ sigma3 @ A.transpose(0, 2, 1)
    ca, cb, cc = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]

    # Eigenvalues of [[a, b], [b, c]] give footprint radius and conditioning.
    mid = 0.5 * (ca + cc)
    disc = np.sqrt(np.maximum(0.25 * (ca - cc) ** 2 + cb**2, 0.0))
    lam_max = mid + disc
    lam_min = mid - disc
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(lam_min > 0, lam_max / np.maximum(lam_min, 1e-300), np.inf)
    degenerate = ~np.isfinite(cond) | (cond > config.max_condition) | (lam_min <= 0)
    valid = in_front & ~degenerate
    skipped = int(np.count_nonzero(in_front & degenerate))

    det = ca * cc - cb**2
    det_safe = np.where(valid, det, 1.0)
    inv_cov = np.stack([cc / det_safe, -cb / det_safe, ca / det_safe], axis=1)
    radius = config.sigma_clip * np.sqrt(np.maximum(lam_max, 0.0))

    mean2d = np.stack([fx * x / zs + camera.cx, fy * y / zs + camera.cy], axis=1)
    sigma = _sigmoid(scene.opacity_logits)

    vidx = np.flatnonzero(valid)
    order = vidx[np.argsort(z[vidx], kind="stable")]
    return _Projection(valid=valid, order=order, p_cam=p_cam, mean2d=mean2d,
                       inv_cov=inv_cov, radius=radius, sigma=sigma,
                       scales=scales, q_unit=q_unit, q_norm=norms,
                       rot_mat=rot_mat, M=M, sigma3=sigma3, A=A,
                       skipped_degenerate=skipped)


def _footprint(mean2d, radius, width, height):
    u, v = mean2d
    c0 = max(0, int(np.ceil(u - radius)))
    c1 = min(width - 1, int(np.floor(u + radius)))
    r0 = max(0, int(np.ceil(v - radius)))
    r1 = min(height - 1, int(np.floor(v + radius)))
    return r0, r1, c0, c1


def _forward(scene: GaussianScene, camera: Camera, config: RenderConfig,
             proj: _Projection):
    """Blend front to back; returns buffers plus per-primitive hit arrays."""
    H, W = camera.height, camera.width
    T = np.ones((H, W))
    color = np.zeros((H, W, 3))
    wsum = np.zeros((H, W))
    depth_num = np.zeros((H, W))
    colors_clipped = np.clip(scene.colors, 0.0, 1.0)
    hits: list[tuple[int, np.ndarray, np.ndarray, np.ndarray]] = []

    for i in proj.order:
        r0, r1, c0, c1 = _footprint(proj.mean2d[i], proj.radius[i], W, H)
        if r0 > r1 or c0 > c1:
            continue
        cols = np.arange(c0, c1 + 1)
        rows = np.arange(r0, r1 + 1)
        dx = cols - proj.mean2d[i, 0]
        dy = rows - proj.mean2d[i, 1]
        qa, qb, qc = proj.inv_cov[i]
        expo = -0.5 * (qa * dx[None, :] ** 2
                       + 2.0 * qb * dy[:, None] * dx[None, :]
                       + qc * dy[:, None] ** 2)
        alpha = proj.sigma[i] * np.exp(expo)
        t_sub = T[r0:r1 + 1, c0:c1 + 1]
        keep = (alpha >= config.alpha_cutoff) & (t_sub >= config.transmittance_floor)
        if not keep.any():
            continue
        kr, kc = np.nonzero(keep)
        pix = ((kr + r0) * W + (kc + c0)).astype(np.int32)
        hit_alpha = alpha[kr, kc]
        hit_t = t_sub[kr, kc].copy()  # t_sub aliases T; snapshot before update

        aw = np.where(keep, alpha * t_sub, 0.0)
        color[r0:r1 + 1, c0:c1 + 1] += aw[:, :, None] * colors_clipped[i]
        wsum[r0:r1 + 1, c0:c1 + 1] += aw
        depth_num[r0:r1 + 1, c0:c1 + 1] += proj.p_cam[i, 2] * aw
        T[r0:r1 + 1, c0:c1 + 1] = np.where(keep, t_sub * (1.0 - alpha), t_sub)
        hits.append((int(i), pix, hit_alpha, hit_t))

    bg = np.asarray(config.background, dtype=np.float64)
    image = color + T[:, :, None] * bg
    with np.errstate(invalid="ignore"):
        depth = np.where(wsum > 0.0,
                         depth_num / np.maximum(wsum, config.weight_eps),
                         DEPTH_INVALID)
    return image, depth, wsum, T, hits


def render(scene: GaussianScene, camera: Camera,
           config: RenderConfig = RenderConfig()) -> RenderOutput:
    """Render a view; see the module docstring for the exact semantics."""
    proj = _project(scene, camera, config)
    image, depth, wsum, _, hits = _forward(scene, camera, config, proj)
    if hits:
        prim = np.concatenate([np.full(p.size, i, dtype=np.int32)
                               for i, p, _, _ in hits])
        pixel = np.concatenate([p for _, p, _, _ in hits])
        alpha = np.concatenate([a for _, _, a, _ in hits])
        t_before = np.concatenate([t for _, _, _, t in hits])
    else:
        prim = np.zeros(0, dtype=np.int32)
        pixel = np.zeros(0, dtype=np.int32)
        alpha = np.zeros(0)
        t_before = np.zeros(0)
    records = HitRecords(prim=prim, pixel=pixel, alpha=alpha, t_before=t_before)
    return RenderOutput(image=image, depth=depth, per_pixel_weight_sum=wsum,
                        hit_records=records,
                        skipped_degenerate=proj.skipped_degenerate)


def render_depth(scene: GaussianScene, camera: Camera,
                 config: RenderConfig = RenderConfig()) -> np.ndarray:
    """Alpha-blended camera-z per pixel; +inf marks zero-weight pixels."""
    proj = _project(scene, camera, config)
    _, depth, _, _, _ = _forward(scene, camera, config, proj)
    return depth


def record_hits(scene: GaussianScene, cameras: list[Camera],
                config: RenderConfig = RenderConfig(),
                mode: str = "alpha") -> np.ndarray:
    """Accumulate per-primitive blending weight over a set of views.

    ``mode="alpha"`` sums the actual blending weights ``alpha_i * T_i``.
    ``mode="sigma"`` replays the same contributions but weights them with
    the raw opacities, ``sigma_i * prod_{j<i} (1 - sigma_j)``.
    """
    if mode not in ("alpha", "sigma"):
        raise ValidationError(f"unknown hit-recording mode {mode!r}")
    totals = np.zeros(scene.count)
    for camera in cameras:
        proj = _project(scene, camera, config)
        _, _, _, _, hits = _forward(scene, camera, config, proj)
        if mode == "alpha":
            for i, _, alpha, t_before in hits:
                totals[i] += float(np.sum(alpha * t_before))
        else:
            t_sigma = np.ones(camera.height * camera.width)
            for i, pix, _, _ in hits:
                s = proj.sigma[i]
                totals[i] += float(np.sum(s * t_sigma[pix]))
                t_sigma[pix] *= 1.0 - s
    return totals


def backward(scene: GaussianScene, camera: Camera, config: RenderConfig,
             loss_gradient: np.ndarray) -> SceneGradients:
    """Analytic gradients of ``sum(loss_gradient * image)`` w.r.t. the scene.

    ``loss_gradient`` must be (H, W, 3) and finite. Culled or degenerate
    primitives receive zero gradient; color gradients respect the render-time
    clamp (zero outside [0, 1]).
    """
    H, W = camera.height, camera.width
    g_up = np.asarray(loss_gradient, dtype=np.float64)
    if g_up.shape != (H, W, 3):
        raise ValidationError(
            f"loss_gradient shape {g_up.shape} does not match view "
            f"({H}, {W}, 3)")
    bad = ~np.isfinite(g_up)
    if bad.any():
        r, c, _ = np.argwhere(bad)[0]
        raise ValidationError(f"non-finite upstream gradient at pixel ({r}, {c})")

    proj = _project(scene, camera, config)
    _, _, _, _, hits = _forward(scene, camera, config, proj)

    n = scene.count
    g_color = np.zeros((n, 3))
    g_sigma = np.zeros(n)
    g_mean = np.zeros((n, 2))
    g_cov = np.zeros((n, 3))  # packed symmetric (a, b, c) of dL/dSigma'
    colors_clipped = np.clip(scene.colors, 0.0, 1.0)
    g_flat = g_up.reshape(-1, 3)

    # Suffix composite per pixel: color of everything behind the current
    # contribution, alpha-composited over the background.
    behind = np.tile(np.asarray(config.background, dtype=np.float64), (H * W, 1))
    for i, pix, alpha, t_before in reversed(hits):
        b_px = behind[pix]
        g_px = g_flat[pix]
        c_i = colors_clipped[i]
        # dL/dalpha = T * <g, c - B>; dL/dc = g * alpha * T
        dl_da = t_before * np.sum(g_px * (c_i[None, :] - b_px), axis=1)
        g_color[i] += (alpha * t_before) @ g_px
        g_sigma[i] += float(np.sum(dl_da * alpha)) / proj.sigma[i]

        u, v = proj.mean2d[i]
        dx = (pix % W) - u
        dy = (pix // W) - v
        qa, qb, qc = proj.inv_cov[i]
        qd_x = qa * dx + qb * dy
        qd_y = qb * dx + qc * dy
        coef = dl_da * alpha
        g_mean[i, 0] += float(np.sum(coef * qd_x))
        g_mean[i, 1] += float(np.sum(coef * qd_y))
        g_cov[i, 0] += 0.5 * float(np.sum(coef * qd_x * qd_x))
        g_cov[i, 1] += float(np.sum(coef * qd_x * qd_y))
        g_cov[i, 2] += 0.5 * float(np.sum(coef * qd_y * qd_y))

        behind[pix] = c_i[None, :] * alpha[:, None] + (1.0 - alpha)[:, None] * b_px

    return _chain_to_parameters(scene, camera, proj, g_color, g_sigma,
                                g_mean, g_cov)


def _chain_to_parameters(scene, camera, proj, g_color, g_sigma, g_mean, g_cov):
    """Propagate image-space gradients back to primitive parameters."""
    n = scene.count
    W_rot = camera.rotation_matrix
    fx, fy = camera.fx, camera.fy
    x, y, z = proj.p_cam[:, 0], proj.p_cam[:, 1], proj.p_cam[:, 2]
    z = np.where(proj.valid, z, 1.0)

    # Symmetric dL/dSigma' (off-diagonal already carries both b slots).
    g_sig2 = np.zeros((n, 2, 2))
    g_sig2[:, 0, 0] = g_cov[:, 0]
    g_sig2[:, 0, 1] = 0.5 * g_cov[:, 1]
    g_sig2[:, 1, 0] = 0.5 * g_cov[:, 1]
    g_sig2[:, 1, 1] = g_cov[:, 2]

    # Sigma' = A Sigma A^T with A = J W (Sigma and the upstream symmetric).
    g_A = 2.0 * g_sig2 @ proj.A @ proj.sigma3
    g_sig3 = proj.A.transpose(0, 2, 1) @ g_sig2 @ proj.A
    g_J = g_A @ W_rot.T

    # J entries depend on the camera-space point.
    g_pcam = np.zeros((n, 3))
    g_pcam[:, 0] = g_J[:, 0, 2] * (-fx / z**2)
    g_pcam[:, 1] = g_J[:, 1, 2] * (-fy / z**2)
    g_pcam[:, 2] = (g_J[:, 0, 0] * (-fx / z**2)
                    + g_J[:, 1, 1] * (-fy / z**2)
                    + g_J[:, 0, 2] * (2.0 * fx * x / z**3)
                    + g_J[:, 1, 2] * (2.0 * fy * y / z**3))

    # Projected mean: same Jacobian rows.
    g_pcam[:, 0] += g_mean[:, 0] * fx / z
    g_pcam[:, 1] += g_mean[:, 1] * fy / z
    g_pcam[:, 2] += (g_mean[:, 0] * (-fx * x / z**2)
                     + g_mean[:, 1] * (-fy * y / z**2))

    d_position = g_pcam @ W_rot

    # Sigma3 = M M^T, M = R diag(s).
    g_M = 2.0 * g_sig3 @ proj.M
    g_s = np.einsum("njk,njk->nk", proj.rot_mat, g_M)
    d_log_scale = g_s * proj.scales
    g_R = g_M * proj.scales[:, None, :]
    g_q_unit = _rotation_grad_to_quaternion(proj.q_unit, g_R)

    # Through the normalization q_unit = q / |q|.
    dot = np.sum(g_q_unit * proj.q_unit, axis=1, keepdims=True)
    d_rotation = (g_q_unit - proj.q_unit * dot) / proj.q_norm[:, None]

    d_opacity = g_sigma * proj.sigma * (1.0 - proj.sigma)
    gate = (scene.colors >= 0.0) & (scene.colors <= 1.0)
    d_color = g_color * gate

    zero_rows = ~proj.valid
    for arr in (d_position, d_log_scale, d_rotation, d_color):
        arr[zero_rows] = 0.0
    d_opacity[zero_rows] = 0.0
    return SceneGradients(d_position=d_position, d_log_scale=d_log_scale,
                          d_rotation=d_rotation, d_opacity_logit=d_opacity,
                          d_color=d_color)


def _rotation_grad_to_quaternion(q_unit: np.ndarray,
                                 g_R: np.ndarray) -> np.ndarray:
    """Contract dL/dR with the analytic dR/dq of the unit quaternion map."""
    w, x, y, z = q_unit[:, 0], q_unit[:, 1], q_unit[:, 2], q_unit[:, 3]
    g = g_R
    g00, g01, g02 = g[:, 0, 0], g[:, 0, 1], g[:, 0, 2]
    g10, g11, g12 = g[:, 1, 0], g[:, 1, 1], g[:, 1, 2]
    g20, g21, g22 = g[:, 2, 0], g[:, 2, 1], g[:, 2, 2]
    gw = 2.0 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    gx = 2.0 * (y * g01 + z * g02 + y * g10 - 2.0 * x * g11 - w * g12
                + z * g20 + w * g21 - 2.0 * x * g22)
    gy = 2.0 * (-2.0 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12
                - w * g20 + z * g21 - 2.0 * y * g22)
    gz = 2.0 * (-2.0 * z * g00 - w * g01 + x * g02 + w * g10 - 2.0 * z * g11
                + y * g12 + x * g20 + y * g21)
    return np.stack([gw, gx, gy, gz], axis=1)
