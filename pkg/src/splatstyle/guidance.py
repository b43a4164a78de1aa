"""Losses and the two-stage trainer for intensity-tunable styles.

Stage 1 fits the offset field (plus the top gain vector) so that full
intensity reproduces the stylized targets. Stage 2 freezes both and fits
the interior gain vectors so intermediate intensities interpolate between
the base look and the full style: for a sampled intensity ``beta`` the
objective is ``(1-beta) * d(render, base) + beta * d(render, target)``
where ``d`` is L1 plus a perceptual term.

The perceptual term is a multi-scale structural-dissimilarity with an
analytic gradient (``perceptual_loss``); the trainer can also run with it
disabled (``"none"``) or read precomputed values from a table
(``"external"``, value only — no gradient flows through it).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ValidationError
from .render import RenderConfig, SceneGradients, backward, render
from .scene import Camera, GaussianScene
from .stylefield import (StyleOffsetField, StyleTuner, compose,
                         compose_backward, staircase)
from .stylize import StyleTargetManifest

MSSSIM_SCALES = 3
_WINDOW_SIZE = 11
_WINDOW_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2
MIN_PERCEPTUAL_SIDE = 16

PERCEPTUAL_MODES = ("msssim", "none", "external")


def _gaussian_window(size: int = _WINDOW_SIZE,
                     sigma: float = _WINDOW_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


_WINDOW = _gaussian_window()


def _smooth(img: np.ndarray) -> np.ndarray:
    """Separable windowed mean, zero-padded 'same'. Self-adjoint."""
    out = correlate1d(img, _WINDOW, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _WINDOW, axis=1, mode="constant", cval=0.0)


def _avg_pool(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    he, we = h - h % 2, w - w % 2
    x = img[:he, :we]
    return 0.25 * (x[0::2, 0::2] + x[0::2, 1::2]
                   + x[1::2, 0::2] + x[1::2, 1::2])


def _avg_pool_adjoint(grad: np.ndarray, shape: tuple) -> np.ndarray:
    out = np.zeros(shape)
    up = 0.25 * np.repeat(np.repeat(grad, 2, axis=0), 2, axis=1)
    out[:up.shape[0], :up.shape[1]] = up
    return out


def _ssim_scale(x: np.ndarray, y: np.ndarray):
    """Per-pixel structural similarity map plus intermediates for backward."""
    mu_x, mu_y = _smooth(x), _smooth(y)
    sxx = _smooth(x * x) - mu_x * mu_x
    syy = _smooth(y * y) - mu_y * mu_y
    sxy = _smooth(x * y) - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + _C1
    a2 = 2.0 * sxy + _C2
    b1 = mu_x * mu_x + mu_y * mu_y + _C1
    b2 = sxx + syy + _C2
    ssim = (a1 * a2) / (b1 * b2)
    return ssim, (mu_x, mu_y, a1, a2, b1, b2)


def _ssim_scale_backward(x, y, cache, g_map):
    """Gradient of ``sum(g_map * ssim_map)`` w.r.t. ``x``."""
    mu_x, mu_y, a1, a2, b1, b2 = cache
    denom = b1 * b2
    ssim = (a1 * a2) / denom
    g_a1 = g_map * a2 / denom
    g_a2 = g_map * a1 / denom
    g_b1 = -g_map * ssim / b1
    g_b2 = -g_map * ssim / b2
    g_mu_x = 2.0 * mu_y * (g_a1 - g_a2) + 2.0 * mu_x * (g_b1 - g_b2)
    # b2 carries K(x*x) with unit weight; a2 carries K(x*y) with weight 2.
    return _smooth(g_mu_x) + 2.0 * x * _smooth(g_b2) + y * _smooth(2.0 * g_a2)


def _check_perceptual_inputs(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise ValidationError(f"expected (H, W, C) images, got {a.shape}")
    if min(a.shape[0], a.shape[1]) < MIN_PERCEPTUAL_SIDE:
        raise ValidationError(
            f"perceptual loss needs min side >= {MIN_PERCEPTUAL_SIDE}, "
            f"got {a.shape[1]}x{a.shape[0]}")


def perceptual_loss(a: np.ndarray, b: np.ndarray) -> float:
    """1 - mean structural similarity over 3 dyadic scales.

    Symmetric in its arguments and exactly zero for identical images.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_perceptual_inputs(a, b)
    total = 0.0
    x, y = a, b
    for scale in range(MSSSIM_SCALES):
        ssim, _ = _ssim_scale(x, y)
        total += float(ssim.mean())
        if scale + 1 < MSSSIM_SCALES:
            x, y = _avg_pool(x), _avg_pool(y)
    return 1.0 - total / MSSSIM_SCALES


def perceptual_value_and_grad(a: np.ndarray, b: np.ndarray):
    """``perceptual_loss(a, b)`` plus its gradient w.r.t. ``a``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_perceptual_inputs(a, b)
    xs, ys, caches, maps = [], [], [], []
    x, y = a, b
    total = 0.0
    for scale in range(MSSSIM_SCALES):
        ssim, cache = _ssim_scale(x, y)
        xs.append(x)
        ys.append(y)
        caches.append(cache)
        maps.append(ssim)
        total += float(ssim.mean())
        if scale + 1 < MSSSIM_SCALES:
            x, y = _avg_pool(x), _avg_pool(y)

    grad = None
    for scale in reversed(range(MSSSIM_SCALES)):
        g_map = np.full(maps[scale].shape,
                        -1.0 / (MSSSIM_SCALES * maps[scale].size))
        g_x = _ssim_scale_backward(xs[scale], ys[scale], caches[scale], g_map)
        if grad is not None:
            g_x = g_x + _avg_pool_adjoint(grad, xs[scale].shape)
        grad = g_x
    return 1.0 - total / MSSSIM_SCALES, grad


def l1_loss(a: np.ndarray, b: np.ndarray) -> float:
    """Mean absolute per-channel difference."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def _l1_value_and_grad(a: np.ndarray, b: np.ndarray):
    diff = a - b
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


@dataclass(frozen=True)
class LossReport:
    """One training-step objective breakdown."""

    l1: float
    perceptual: float
    total: float
    beta_used: float
    stage: str

    def __post_init__(self):
        for name in ("l1", "perceptual", "total", "beta_used"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"loss report field {name} is not finite")


@dataclass
class TrainConfig:
    stage1_steps: int = 2000
    stage2_steps: int = 2000
    lr_position: float = 1e-4
    lr_log_scale: float = 1e-3
    lr_rotation: float = 1e-4
    lr_opacity_logit: float = 5e-2
    lr_color: float = 1e-2
    lr_embeddings: float = 1e-2
    perceptual_weight: float = 1.0
    perceptual: str = "msssim"
    external_table: dict | None = None
    seed: int = 0
    views_per_step: int = 1
    render_config: RenderConfig = field(default_factory=RenderConfig)

    def __post_init__(self):
        if self.stage1_steps < 0 or self.stage2_steps < 0:
            raise ValidationError("step counts must be >= 0")
        for name in ("lr_position", "lr_log_scale", "lr_rotation",
                     "lr_opacity_logit", "lr_color", "lr_embeddings"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")
        if self.views_per_step < 1:
            raise ValidationError("views_per_step must be >= 1")
        if self.perceptual not in PERCEPTUAL_MODES:
            raise ValidationError(
                f"perceptual must be one of {PERCEPTUAL_MODES}, "
                f"got {self.perceptual!r}")


class Adam:
    """Adaptive moment estimation over a single parameter array."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(param, dtype=np.float64)
            self.v = np.zeros_like(param, dtype=np.float64)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return param - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _perceptual_term(cfg: TrainConfig, img: np.ndarray, ref: np.ndarray,
                     key: str):
    """(value, grad-or-None) of the configured perceptual distance."""
    if cfg.perceptual == "none":
        return 0.0, None
    if cfg.perceptual == "external":
        table = cfg.external_table or {}
        return float(table.get(key, 0.0)), None
    return perceptual_value_and_grad(img, ref)


def _tunable_value_and_grad(img, base, target, beta, cfg, view_id):
    l1_zero, g1_zero = _l1_value_and_grad(img, base)
    l1_full, g1_full = _l1_value_and_grad(img, target)
    p_zero, gp_zero = _perceptual_term(cfg, img, base, f"{view_id}:base")
    p_full, gp_full = _perceptual_term(cfg, img, target, f"{view_id}:target")

    l1 = (1.0 - beta) * l1_zero + beta * l1_full
    perceptual = (1.0 - beta) * p_zero + beta * p_full
    total = l1 + cfg.perceptual_weight * perceptual

    grad = (1.0 - beta) * g1_zero + beta * g1_full
    if gp_zero is not None:
        grad = grad + cfg.perceptual_weight * (1.0 - beta) * gp_zero
    if gp_full is not None:
        grad = grad + cfg.perceptual_weight * beta * gp_full
    report = LossReport(l1=l1, perceptual=perceptual, total=total,
                        beta_used=float(beta), stage="")
    return report, grad


def tunable_loss(img: np.ndarray, base: np.ndarray, target: np.ndarray,
                 beta: float, cfg: TrainConfig = TrainConfig(),
                 view_id: str = "") -> LossReport:
    """Intensity-weighted objective: (1-beta)*d(img, base) + beta*d(img, target).

    ``beta=0`` reduces exactly to the zero-style objective and ``beta=1`` to
    the full-style objective.
    """
    img = np.asarray(img, dtype=np.float64)
    base = np.asarray(base, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if img.shape != base.shape or img.shape != target.shape:
        raise ValidationError(
            f"image shapes differ: {img.shape} vs {base.shape} vs {target.shape}")
    if not 0.0 <= beta <= 1.0:
        raise ValidationError(f"beta must be in [0, 1], got {beta}")
    report, _ = _tunable_value_and_grad(img, base, target, beta, cfg, view_id)
    return replace(report, stage="eval")


def save_loss_trace(trace: list[tuple[int, LossReport]], path) -> None:
    """Write the per-step loss trace as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "stage", "beta", "l1", "perceptual", "total"])
        for step, report in trace:
            writer.writerow([step, report.stage, repr(report.beta_used),
                             repr(report.l1), repr(report.perceptual),
                             repr(report.total)])


def _check_training_inputs(scene, cameras, manifest, targets):
    if not cameras:
        raise ValidationError("training needs at least one camera")
    cam_ids = [c.view_id for c in cameras]
    manifest_ids = {e.view_id for e in manifest.entries}
    missing = sorted(set(cam_ids) - manifest_ids)
    extra = sorted(manifest_ids - set(cam_ids))
    if missing or extra:
        raise ValidationError(
            f"manifest/camera mismatch: cameras without targets {missing}, "
            f"targets without cameras {extra}")
    for cam in cameras:
        img = targets.get(cam.view_id)
        if img is None:
            raise ValidationError(f"no target image for view {cam.view_id!r}")
        if img.shape != (cam.height, cam.width, 3):
            raise ValidationError(
                f"target for view {cam.view_id!r} has shape {img.shape}, "
                f"expected ({cam.height}, {cam.width}, 3)")


def _field_adams(cfg: TrainConfig) -> dict[str, Adam]:
    return {"d_position": Adam(cfg.lr_position),
            "d_log_scale": Adam(cfg.lr_log_scale),
            "d_rotation": Adam(cfg.lr_rotation),
            "d_opacity_logit": Adam(cfg.lr_opacity_logit),
            "d_color": Adam(cfg.lr_color)}


def train_stage1(scene: GaussianScene, cameras: list[Camera],
                 manifest: StyleTargetManifest, targets: dict[str, np.ndarray],
                 offsets: StyleOffsetField, tuner: StyleTuner,
                 cfg: TrainConfig = TrainConfig()):
    """Fit offsets plus the top gain vector against the stylized targets.

    Mutates ``offsets`` and ``tuner.embeddings[-1]`` in place and returns the
    loss trace as a list of ``(step, LossReport)``.
    """
    _check_training_inputs(scene, cameras, manifest, targets)
    if offsets.count != scene.count:
        raise ValidationError(
            f"offset field covers {offsets.count} primitives, scene has "
            f"{scene.count}")
    for name, arr in offsets.arrays().items():
        if np.any(arr != 0.0):
            raise ValidationError(
                f"stage 1 expects an all-zero offset field; {name} is not")
    top = tuner.bucket_count - 1
    if not tuner.trainable_mask[top]:
        raise ValidationError("top tuner bucket must be trainable")

    rng = np.random.default_rng([cfg.seed, 1])
    adams = _field_adams(cfg)
    adam_emb = Adam(cfg.lr_embeddings)
    trace: list[tuple[int, LossReport]] = []

    for step in range(cfg.stage1_steps):
        picks = rng.integers(0, len(cameras), size=cfg.views_per_step)
        agg_field = {name: np.zeros_like(arr, dtype=np.float64)
                     for name, arr in offsets.arrays().items()}
        agg_gain = np.zeros(tuner.embeddings.shape[1])
        l1_sum = p_sum = 0.0
        gains = tuner.embeddings[top].copy()
        composed = compose(scene, offsets, gains)
        for idx in picks:
            cam = cameras[idx]
            target = targets[cam.view_id]
            img = render(composed, cam, cfg.render_config).image
            l1_val, g_img = _l1_value_and_grad(img, target)
            p_val, g_p = _perceptual_term(cfg, img, target,
                                          f"{cam.view_id}:target")
            if g_p is not None:
                g_img = g_img + cfg.perceptual_weight * g_p
            grads = backward(composed, cam, cfg.render_config, g_img)
            f_grads, g_gain = compose_backward(scene, offsets, gains, grads)
            for name in agg_field:
                agg_field[name] += f_grads[name]
            agg_gain += g_gain
            l1_sum += l1_val
            p_sum += p_val

        k = float(cfg.views_per_step)
        arrays = offsets.arrays()
        for name, adam in adams.items():
            arrays[name][...] = adam.step(arrays[name], agg_field[name] / k)
        tuner.embeddings[top] = adam_emb.step(tuner.embeddings[top],
                                              agg_gain / k)
        l1_mean, p_mean = l1_sum / k, p_sum / k
        trace.append((step, LossReport(
            l1=l1_mean, perceptual=p_mean,
            total=l1_mean + cfg.perceptual_weight * p_mean,
            beta_used=1.0, stage="stage1")))
    return trace


def train_stage2(scene: GaussianScene, cameras: list[Camera],
                 manifest: StyleTargetManifest, targets: dict[str, np.ndarray],
                 offsets: StyleOffsetField, tuner: StyleTuner,
                 cfg: TrainConfig = TrainConfig()):
    """Fit interior gain vectors; offsets and endpoint buckets stay frozen.

    Each step draws an intensity uniformly from the interior buckets'
    range, routes the gradient to that bucket's gain vector only, and
    weighs the objective between the cached base render and the stylized
    target by the continuous intensity. Returns the loss trace.
    """
    _check_training_inputs(scene, cameras, manifest, targets)
    z_count = tuner.bucket_count
    if z_count < 3:
        warnings.warn("tuner has no interior buckets; stage 2 is a no-op")
        return []

    rng = np.random.default_rng([cfg.seed, 2])
    base_renders = {cam.view_id: render(scene, cam, cfg.render_config).image
                    for cam in cameras}
    adams = {z: Adam(cfg.lr_embeddings) for z in range(1, z_count - 1)}
    width = tuner.bucket_width
    lo, hi = tuner.lo + width, tuner.hi - width
    trace: list[tuple[int, LossReport]] = []

    for step in range(cfg.stage2_steps):
        cam = cameras[int(rng.integers(0, len(cameras)))]
        beta = float(rng.uniform(lo, hi))
        z = staircase(beta, tuner)
        while not 1 <= z <= z_count - 2:  # guard the measure-zero endpoints
            beta = float(rng.uniform(lo, hi))
            z = staircase(beta, tuner)
        gains = tuner.embeddings[z].copy()
        composed = compose(scene, offsets, gains)
        img = render(composed, cam, cfg.render_config).image
        # Intensity weighting uses the normalized position in [lo, hi].
        w = (beta - tuner.lo) / (tuner.hi - tuner.lo)
        report, g_img = _tunable_value_and_grad(
            img, base_renders[cam.view_id], targets[cam.view_id], w, cfg,
            cam.view_id)
        grads = backward(composed, cam, cfg.render_config, g_img)
        _, g_gain = compose_backward(scene, offsets, gains, grads)
        tuner.embeddings[z] = adams[z].step(tuner.embeddings[z], g_gain)
        trace.append((step, replace(report, beta_used=beta, stage="stage2")))
    return trace
