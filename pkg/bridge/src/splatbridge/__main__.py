"""Command line for the diffusion bridge.

Mirrors the render-side ``stylize-views`` flags, swapping the scene for
the render/depth dumps it consumes, and adds the model options. Exit
codes: 0 success, 1 validation, 2 unreadable/missing files, 3 diffusion
stack unavailable, 64 usage.
"""

from __future__ import annotations

import argparse
import sys

from .config import BridgeConfig, BridgeError, BridgeModelError
from .pipeline import stylize_views


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="splatbridge",
                description="stylize rendered views with a diffusion model")
    p.add_argument("--renders-dir", required=True,
                   help="directory of {view}.png base renders")
    p.add_argument("--cameras", required=True)
    p.add_argument("--depths-dir", required=True,
                   help="directory of {view}_depth.f32img dumps")
    p.add_argument("--reference", required=True, help="style image (PNG)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--style-id", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--anchor", required=True,
                   help="view stylized first and propagated to the others")
    p.add_argument("--strength", type=float, default=0.6,
                   help="denoise fraction in [0, 1]; 0 copies inputs through")
    p.add_argument("--model", default="runwayml/stable-diffusion-v1-5")
    p.add_argument("--up-blocks", default="0",
                   help="comma-separated up-block groups receiving injection")
    p.add_argument("--steps", type=int, default=30)
    p.add_argument("--guidance", type=float, default=5.0)
    p.add_argument("--prompt", default="")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 64
    except SystemExit:
        return 0

    try:
        blocks = tuple(int(b) for b in args.up_blocks.split(","))
        cfg = BridgeConfig(style_image=args.reference, anchor_view=args.anchor,
                           model_id=args.model, strength=args.strength,
                           up_blocks=blocks, steps=args.steps, seed=args.seed,
                           guidance_scale=args.guidance, prompt=args.prompt)
        result = stylize_views(args.renders_dir, args.cameras,
                               args.depths_dir, args.reference, cfg,
                               args.out_dir, style_id=args.style_id)
    except BridgeModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    print(f"stylized {len(result.view_ids)} views -> {result.out_dir} "
          f"(anchor {result.anchor_view})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
