"""Diffusion-backed view stylizer that speaks splatstyle's file formats.

The bridge consumes base renders and depth dumps produced by the
``splatstyle render --dump-dir`` command, stylizes each view with an
image-conditioned diffusion model (anchor first, then every other view
with the anchor's attention features warped in), and writes a style-target
manifest the ``splatstyle fit`` command accepts unchanged.

It shares no code with the main package: every format it reads or writes
is re-implemented from the published contract, so the two sides can only
drift apart by breaking a documented format.
"""

from .config import BridgeConfig, BridgeError, BridgeModelError
from .formats import (
    BridgeCamera,
    load_cameras,
    read_f32img,
    read_png,
    save_manifest,
    write_png,
)
from .pipeline import stylize_views
from .warp import warp_features

__all__ = [
    "BridgeCamera",
    "BridgeConfig",
    "BridgeError",
    "BridgeModelError",
    "load_cameras",
    "read_f32img",
    "read_png",
    "save_manifest",
    "stylize_views",
    "warp_features",
    "write_png",
]
