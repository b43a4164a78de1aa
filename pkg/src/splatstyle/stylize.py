"""Procedural stylization of rendered views and the target manifest.

The procedural stylizer transfers per-channel statistics of a reference
image onto a rendered view: ``out = (view - mean_view) * (std_ref /
std_view) + mean_ref``, clamped to [0, 1] with the view deviation floored
at 1e-4. It is deterministic, needs no external model, and produces the
training targets for style fitting.

Targets are exchanged through a manifest: a JSON file pointing at one PNG
per training view, a style identifier, an alignment tag, and exactly one
view marked as the anchor (the view other targets may later be calibrated
against).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .images import read_png, write_png
from .render import RenderConfig, render
from .scene import Camera, GaussianScene

STD_FLOOR = 1e-4
ALIGNMENT_TAGS = ("none", "feature-injected", "content-calibrated")


@dataclass(frozen=True)
class StyleReference:
    """Reference image plus the channel statistics driving the transfer."""

    image: np.ndarray          # (H, W, 3) in [0, 1]
    channel_means: np.ndarray  # (3,)
    channel_stds: np.ndarray   # (3,)

    @classmethod
    def from_image(cls, image: np.ndarray) -> "StyleReference":
        arr = np.asarray(image, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValidationError(f"style reference must be (H, W, 3), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("style reference contains non-finite values")
        return cls(image=arr,
                   channel_means=arr.mean(axis=(0, 1)),
                   channel_stds=arr.std(axis=(0, 1)))

    @classmethod
    def from_file(cls, path: str | Path) -> "StyleReference":
        return cls.from_image(read_png(path))


def procedural_stylize(view: np.ndarray, reference: StyleReference) -> np.ndarray:
    """Channel-statistics color transfer of ``reference`` onto ``view``."""
    img = np.asarray(view, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"view must be (H, W, 3), got {img.shape}")
    mean_v = img.mean(axis=(0, 1))
    std_v = np.maximum(img.std(axis=(0, 1)), STD_FLOOR)
    out = (img - mean_v) * (reference.channel_stds / std_v) + reference.channel_means
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class ManifestEntry:
    view_id: str
    path: str      # relative to the manifest file
    anchor: bool


@dataclass(frozen=True)
class StyleTargetManifest:
    style_id: str
    alignment: str
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        if self.alignment not in ALIGNMENT_TAGS:
            raise ValidationError(f"unknown alignment tag {self.alignment!r}")
        anchors = [e.view_id for e in self.entries if e.anchor]
        if len(anchors) != 1:
            raise ValidationError(
                f"manifest must mark exactly one anchor view, found {len(anchors)}")

    @property
    def anchor_view(self) -> str:
        return next(e.view_id for e in self.entries if e.anchor)


def build_manifest(scene: GaussianScene, cameras: list[Camera],
                   reference: StyleReference, out_dir: str | Path,
                   style_id: str, seed: int = 0,
                   config: RenderConfig = RenderConfig()) -> StyleTargetManifest:
    """Render every view, stylize it, and write targets plus manifest.json.

    The anchor view is a seeded uniform choice among the cameras. Returns
    the manifest that was written.
    """
    if not cameras:
        raise ValidationError("manifest needs at least one camera")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    anchor_idx = int(np.random.default_rng(seed).integers(len(cameras)))

    entries = []
    for i, cam in enumerate(cameras):
        view = render(scene, cam, config).image
        stylized = procedural_stylize(view, reference)
        name = f"{cam.view_id}.png"
        write_png(stylized, out / name)
        entries.append(ManifestEntry(view_id=cam.view_id, path=name,
                                     anchor=i == anchor_idx))
    manifest = StyleTargetManifest(style_id=style_id, alignment="none",
                                   entries=tuple(entries))
    save_manifest(manifest, out / "manifest.json")
    return manifest


def save_manifest(manifest: StyleTargetManifest, path: str | Path) -> None:
    data = {
        "style_id": manifest.style_id,
        "alignment": manifest.alignment,
        "entries": [{"view_id": e.view_id, "path": e.path, "anchor": e.anchor}
                    for e in manifest.entries],
    }
    Path(path).write_text(json.dumps(data, indent=2))


def load_manifest(path: str | Path, cameras: list[Camera] | None = None
                  ) -> tuple[StyleTargetManifest, dict[str, np.ndarray]]:
    """Load a manifest and its target images.

    With ``cameras`` given, every camera must have a target whose size
    matches the camera; mismatches raise ValidationError naming the view.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from exc
    try:
        manifest = StyleTargetManifest(
            style_id=str(data["style_id"]),
            alignment=str(data["alignment"]),
            entries=tuple(ManifestEntry(view_id=str(e["view_id"]),
                                        path=str(e["path"]),
                                        anchor=bool(e["anchor"]))
                          for e in data["entries"]),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: bad manifest structure: {exc}") from exc

    images: dict[str, np.ndarray] = {}
    for entry in manifest.entries:
        img_path = path.parent / entry.path
        if not img_path.exists():
            raise FileNotFoundError(
                f"{path}: target image {entry.path} for view {entry.view_id!r} "
                f"is missing")
        images[entry.view_id] = read_png(img_path)

    if cameras is not None:
        by_view = {e.view_id for e in manifest.entries}
        for cam in cameras:
            if cam.view_id not in by_view:
                raise ValidationError(
                    f"manifest has no target for view {cam.view_id!r}")
            img = images[cam.view_id]
            if img.shape[:2] != (cam.height, cam.width):
                raise ValidationError(
                    f"target for view {cam.view_id!r} is "
                    f"{img.shape[1]}x{img.shape[0]}, camera expects "
                    f"{cam.width}x{cam.height}")
    return manifest, images
