"""View stylization through an image-conditioned diffusion model.

Flow: the style image is denoised once with feature capture, the anchor
view is denoised with the style's self-attention keys/values injected
into the selected up-blocks, and every remaining view is denoised with
the anchor's captured features depth-warped into its frame and appended
to the self-attention key/value set (attention over [warped, current],
restricted to geometrically valid warped tokens). Outputs are one PNG per
view plus a style-target manifest.

``strength == 0`` is a degenerate identity pass: inputs are copied through
untouched and no model import ever happens, so the complete file contract
can be exercised on machines without the diffusion stack. Every other
strength requires the optional ``[model]`` extra; a missing stack raises
:class:`BridgeModelError` with the fix spelled out.
"""

from __future__ import annotations

import math
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import BridgeConfig, BridgeError, BridgeModelError
from .formats import (
    ALIGNMENT_TAG,
    BridgeCamera,
    load_cameras,
    read_f32img,
    read_png,
    save_manifest,
    write_png,
)
from .warp import depth_tolerance, warp_features


@dataclass(frozen=True)
class StylizeResult:
    style_id: str
    alignment: str
    anchor_view: str
    view_ids: tuple[str, ...]
    out_dir: Path
    manifest_path: Path


@dataclass(frozen=True)
class _ViewInputs:
    camera: BridgeCamera
    render_path: Path
    render: np.ndarray  # (H, W, 3) float in [0, 1]
    depth: np.ndarray   # (H, W) float64, +inf where empty


def _gather_inputs(renders_dir: Path, depths_dir: Path,
                   cameras: list[BridgeCamera]) -> dict[str, _ViewInputs]:
    views = {}
    for cam in cameras:
        render_path = renders_dir / f"{cam.view_id}.png"
        depth_path = depths_dir / f"{cam.view_id}_depth.f32img"
        if not render_path.exists():
            raise BridgeError(f"missing base render {render_path}")
        if not depth_path.exists():
            raise BridgeError(f"missing depth dump {depth_path}")
        render = read_png(render_path)
        depth = read_f32img(depth_path)
        if depth.shape[2] != 1:
            raise BridgeError(
                f"{depth_path}: depth must have one channel, got "
                f"{depth.shape[2]}")
        if render.shape[:2] != (cam.height, cam.width):
            raise BridgeError(
                f"{render_path}: render is {render.shape[1]}x"
                f"{render.shape[0]}, camera expects {cam.width}x{cam.height}")
        if depth.shape[:2] != (cam.height, cam.width):
            raise BridgeError(
                f"{depth_path}: depth is {depth.shape[1]}x{depth.shape[0]}, "
                f"camera expects {cam.width}x{cam.height}")
        views[cam.view_id] = _ViewInputs(
            camera=cam, render_path=render_path, render=render,
            depth=depth[:, :, 0].astype(np.float64))
    return views


def stylize_views(renders_dir: str | Path, cameras_path: str | Path,
                  depths_dir: str | Path, ref_image: str | Path,
                  cfg: BridgeConfig, out_dir: str | Path,
                  style_id: str = "diffusion") -> StylizeResult:
    """Stylize every view and write targets plus ``manifest.json``.

    Inputs are the primary CLI's render dumps: ``{view}.png`` base renders
    in ``renders_dir`` and ``{view}_depth.f32img`` buffers in
    ``depths_dir``, one pair per camera.
    """
    cameras = load_cameras(cameras_path)
    if not cameras:
        raise BridgeError(f"{cameras_path}: no cameras")
    if cfg.anchor_view not in {c.view_id for c in cameras}:
        raise BridgeError(
            f"anchor view {cfg.anchor_view!r} is not among the input views")
    reference = read_png(ref_image)
    views = _gather_inputs(Path(renders_dir), Path(depths_dir), cameras)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if cfg.strength == 0.0:
        # Degenerate identity: bytes pass through, no model is touched.
        for cam in cameras:
            shutil.copyfile(views[cam.view_id].render_path,
                            out / f"{cam.view_id}.png")
    else:
        pipe = _load_pipeline(cfg)
        stylized = _run_diffusion(pipe, cfg, cameras, views, reference)
        for view_id, image in stylized.items():
            write_png(image, out / f"{view_id}.png")

    entries = [{"view_id": c.view_id, "path": f"{c.view_id}.png",
                "anchor": c.view_id == cfg.anchor_view} for c in cameras]
    manifest_path = out / "manifest.json"
    save_manifest(style_id, entries, manifest_path)
    return StylizeResult(style_id=style_id, alignment=ALIGNMENT_TAG,
                         anchor_view=cfg.anchor_view,
                         view_ids=tuple(c.view_id for c in cameras),
                         out_dir=out, manifest_path=manifest_path)


def _load_pipeline(cfg: BridgeConfig):
    """Import the diffusion stack and load the model, or explain how to."""
    try:
        import torch  # noqa: F401
        from diffusers import StableDiffusionImg2ImgPipeline
    except ImportError as exc:
        raise BridgeModelError(
            f"strength {cfg.strength} needs the diffusion stack and "
            f"'{exc.name}' is not installed. Install the optional extra "
            f"(pip install 'splatstyle-bridge[model]') to stylize with "
            f"{cfg.model_id}, or rerun with --strength 0 for the "
            f"model-free identity pass.") from exc
    try:
        pipe = StableDiffusionImg2ImgPipeline.from_pretrained(
            cfg.model_id, safety_checker=None, requires_safety_checker=False)
    except Exception as exc:  # from_pretrained raises many distinct types
        raise BridgeModelError(
            f"could not load diffusion model {cfg.model_id!r}: {exc}. Pass "
            f"--model with a local checkout or pre-download the weights; "
            f"--strength 0 runs without any model.") from exc
    pipe.set_progress_bar_config(disable=True)
    return pipe


def _grid_factor(height: int, width: int, tokens: int) -> int | None:
    """Downscale factor mapping the image grid onto ``tokens`` cells."""
    if tokens <= 0 or (height * width) % tokens:
        return None
    ratio = (height * width) // tokens
    factor = int(round(math.sqrt(ratio)))
    if factor * factor != ratio or height % factor or width % factor:
        return None
    return factor


def _downsample_depth(depth: np.ndarray, factor: int) -> np.ndarray:
    """Blockwise mean of finite depths; +inf where a block has none."""
    h, w = depth.shape
    blocks = depth.reshape(h // factor, factor, w // factor, factor)
    finite = np.isfinite(blocks)
    counts = finite.sum(axis=(1, 3))
    sums = np.where(finite, blocks, 0.0).sum(axis=(1, 3))
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, sums / np.maximum(counts, 1), np.inf)


class _SelfAttentionTap:
    """Wraps a layer's stock attention processor.

    In capture mode the pre-attention hidden states of each self-attention
    call are stored per denoise step. In inject mode extra tokens are
    appended to the key/value set by routing the concatenation through
    ``encoder_hidden_states`` — the stock processor then computes exactly
    softmax(Q [K_extra; K_cur]^T / sqrt(d)) [V_extra; V_cur], which is the
    cross-view calibration attention. Cross-attention calls pass through
    untouched.
    """

    def __init__(self, inner, layer_key: str, capture=None, inject=None):
        self.inner = inner
        self.layer_key = layer_key
        self.capture = capture
        self.inject = inject
        self.step = 0

    def __call__(self, attn, hidden_states, encoder_hidden_states=None,
                 **kwargs):
        if encoder_hidden_states is not None:
            return self.inner(attn, hidden_states,
                              encoder_hidden_states=encoder_hidden_states,
                              **kwargs)
        import torch

        step = self.step
        self.step = step + 1
        if self.capture is not None:
            self.capture(self.layer_key, step,
                         hidden_states.detach().to("cpu"))
        kv = hidden_states
        if self.inject is not None:
            extra = self.inject(self.layer_key, step, hidden_states)
            if extra is not None:
                kv = torch.cat([extra, hidden_states], dim=1)
        if kv is hidden_states:
            return self.inner(attn, hidden_states, **kwargs)
        return self.inner(attn, hidden_states, encoder_hidden_states=kv,
                          **kwargs)


def _tap_layers(unet, up_blocks: tuple[int, ...], capture=None, inject=None):
    """Install taps on the selected up-blocks' self-attention layers.

    Returns the previous processor mapping so callers can restore it.
    """
    previous = dict(unet.attn_processors)
    prefixes = tuple(f"up_blocks.{i}." for i in up_blocks)
    replaced = {}
    for key, proc in previous.items():
        if key.startswith(prefixes) and ".attn1." in key:
            replaced[key] = _SelfAttentionTap(proc, key, capture=capture,
                                              inject=inject)
        else:
            replaced[key] = proc
    unet.set_attn_processor(replaced)
    return previous


def _run_img2img(pipe, cfg: BridgeConfig, image: np.ndarray):
    """One seeded image-to-image pass; returns (H, W, 3) float in [0, 1]."""
    import torch
    from PIL import Image

    u8 = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    generator = torch.Generator(pipe.device.type).manual_seed(cfg.seed)
    result = pipe(prompt=cfg.prompt, image=Image.fromarray(u8, mode="RGB"),
                  strength=cfg.strength, num_inference_steps=cfg.steps,
                  guidance_scale=cfg.guidance_scale, generator=generator,
                  output_type="np")
    out = np.asarray(result.images[0], dtype=np.float64)
    if out.shape[:2] != image.shape[:2]:
        raise BridgeError(
            f"model returned {out.shape[1]}x{out.shape[0]} for a "
            f"{image.shape[1]}x{image.shape[0]} input; view sizes must be "
            f"multiples of 8 so the latent grid round-trips")
    return out


def _run_diffusion(pipe, cfg: BridgeConfig, cameras: list[BridgeCamera],
                   views: dict[str, _ViewInputs],
                   reference: np.ndarray) -> dict[str, np.ndarray]:
    import torch

    device = "cuda" if torch.cuda.is_available() else "cpu"
    pipe = pipe.to(device)
    anchor = views[cfg.anchor_view]
    z_tol = depth_tolerance([v.depth for v in views.values()])

    # Pass 1 — style capture: denoise the style image along the same
    # trajectory, remembering its self-attention features per layer/step.
    style_store: dict[tuple[str, int], "torch.Tensor"] = {}
    stock = _tap_layers(pipe.unet, cfg.up_blocks,
                        capture=lambda key, step, h: style_store
                        .__setitem__((key, step), h))
    try:
        side = 8 * max(1, int(round(max(reference.shape[:2]) / 8)))
        ref_square = _resize_rgb(reference, side, side)
        _run_img2img(pipe, cfg, ref_square)
    finally:
        pipe.unet.set_attn_processor(stock)

    # Pass 2 — anchor: inject the style tokens (no geometry; every token
    # is a valid key/value), capture the stylized anchor's own features.
    anchor_store: dict[tuple[str, int], "torch.Tensor"] = {}

    def inject_style(layer_key, step, hidden_states):
        tokens = style_store.get((layer_key, step))
        if tokens is None:
            return None
        return tokens.to(device=hidden_states.device,
                         dtype=hidden_states.dtype)

    stock = _tap_layers(pipe.unet, cfg.up_blocks,
                        capture=lambda key, step, h: anchor_store
                        .__setitem__((key, step), h),
                        inject=inject_style)
    try:
        outputs = {cfg.anchor_view: _run_img2img(pipe, cfg, anchor.render)}
    finally:
        pipe.unet.set_attn_processor(stock)

    # Pass 3 — every other view: warp the anchor's captured features into
    # the view at each layer's grid resolution and append the valid tokens
    # to the self-attention key/value set.
    for cam in cameras:
        if cam.view_id == cfg.anchor_view:
            continue
        view = views[cam.view_id]
        injector = _make_warp_injector(anchor_store, anchor, view, z_tol)
        stock = _tap_layers(pipe.unet, cfg.up_blocks, inject=injector)
        try:
            outputs[cam.view_id] = _run_img2img(pipe, cfg, view.render)
        finally:
            pipe.unet.set_attn_processor(stock)
    return outputs


def _resize_rgb(image: np.ndarray, width: int, height: int) -> np.ndarray:
    from PIL import Image

    u8 = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    pil = Image.fromarray(u8, mode="RGB").resize((width, height),
                                                 Image.BILINEAR)
    return np.asarray(pil, dtype=np.float64) / 255.0


def _make_warp_injector(anchor_store, anchor: _ViewInputs, view: _ViewInputs,
                        z_tol: float):
    """Injector warping captured anchor tokens into ``view``'s grid."""
    cache: dict[tuple[str, int], object] = {}

    def inject(layer_key, step, hidden_states):
        import torch

        tokens = anchor_store.get((layer_key, step))
        if tokens is None:
            return None
        cached = cache.get((layer_key, step))
        if cached is None:
            batch, count, dim = tokens.shape
            factor = _grid_factor(anchor.camera.height, anchor.camera.width,
                                  count)
            if factor is None:
                # layer grid does not align with the camera grid; leave
                # this layer untouched rather than guessing
                cache[(layer_key, step)] = False
                return None
            src_cam = anchor.camera.scaled(factor)
            dst_cam = view.camera.scaled(factor)
            src_depth = _downsample_depth(anchor.depth, factor)
            dst_depth = _downsample_depth(view.depth, factor)
            grids = tokens.to(torch.float64).numpy().reshape(
                batch, src_cam.height, src_cam.width, dim)
            ones = np.ones((src_cam.height, src_cam.width), dtype=bool)
            warped_batches = []
            validity = None
            for b in range(batch):
                result = warp_features(grids[b], ones, src_depth, src_cam,
                                       dst_cam, dst_depth=dst_depth,
                                       z_tolerance=z_tol)
                warped_batches.append(
                    result.features.reshape(-1, dim)[result.validity.reshape(-1)])
                validity = result.validity
            if validity is None or not validity.any():
                cache[(layer_key, step)] = False
                return None
            cache[(layer_key, step)] = np.stack(warped_batches, axis=0)
            cached = cache[(layer_key, step)]
        if cached is False:
            return None
        return torch.from_numpy(np.asarray(cached)).to(
            device=hidden_states.device, dtype=hidden_states.dtype)

    return inject
