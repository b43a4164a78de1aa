"""Bridge configuration and error types."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class BridgeError(Exception):
    """Any bridge-level failure with a user-facing message."""


class BridgeModelError(BridgeError):
    """The diffusion stack is missing or the model cannot be loaded."""


@dataclass(frozen=True)
class BridgeConfig:
    """Everything that determines a stylization run.

    ``strength`` is the denoise fraction handed to the image-to-image
    pipeline. Zero is a supported degenerate setting: the outputs equal
    the inputs and no model is ever loaded, which gives downstream
    tooling a model-free way to exercise the full file contract.
    """

    style_image: str | Path
    anchor_view: str
    model_id: str = "runwayml/stable-diffusion-v1-5"
    strength: float = 0.6
    # indices of the UNet up-block groups whose self-attention receives
    # injected features; the first group carries most of the style
    up_blocks: tuple[int, ...] = (0,)
    steps: int = 30
    seed: int = 0
    guidance_scale: float = 5.0
    prompt: str = ""

    def __post_init__(self):
        if not 0.0 <= self.strength <= 1.0:
            raise BridgeError(
                f"strength must be in [0, 1], got {self.strength}")
        if not self.anchor_view:
            raise BridgeError("anchor_view must name a view")
        if not self.model_id:
            raise BridgeError("model_id must be non-empty")
        blocks = tuple(int(b) for b in self.up_blocks)
        if len(blocks) == 0:
            raise BridgeError("up_blocks must select at least one group")
        if any(b < 0 for b in blocks):
            raise BridgeError(f"up_blocks must be non-negative, got {blocks}")
        if self.steps < 1:
            raise BridgeError(f"steps must be >= 1, got {self.steps}")
        if self.guidance_scale < 0:
            raise BridgeError(
                f"guidance_scale must be >= 0, got {self.guidance_scale}")
        object.__setattr__(self, "up_blocks", blocks)
        object.__setattr__(self, "style_image", Path(self.style_image))
