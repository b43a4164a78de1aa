"""Command-line workflow: import, filter, stylize, align, fit, render, eval, serve.

Exit codes: 0 success, 1 validation error, 2 file/format error, 64 usage
error. All randomness sits behind ``--seed``; identical invocations
produce identical artifacts byte for byte.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .guidance import TrainConfig, save_loss_trace, train_stage1, train_stage2
from .images import read_f32img, read_png, write_f32img, write_png
from .importance import filter_scene, importance_scores
from .metrics import consistency, save_consistency_report
from .render import render, render_depth
from .scene import (file_fingerprint, load_cameras_json, load_scene_json,
                    load_scene_ply, save_scene_json)
from .stylefield import (StyleOffsetField, StyleTuner, compose,
                         embedding_for, load_field, save_field)
from .stylize import StyleReference, build_manifest, load_manifest
from .viewalign import align_manifest

USAGE_EXIT = 64


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_scene(path):
    if str(path).endswith(".ply"):
        return load_scene_ply(path)
    return load_scene_json(path)


def _load_image(path):
    if str(path).endswith(".f32img"):
        return read_f32img(path)
    return read_png(path)


def _write_index_map(index_map: np.ndarray, path) -> None:
    # Hand-rolled so the self-describing key is stamped verbatim.
    entries = ", ".join(str(int(v)) for v in index_map)
    text = ('{"old_to_new": [' + entries + '], "-1 means removed": true}\n')
    Path(path).write_text(text)


def cmd_import_ply(args) -> int:
    scene = load_scene_ply(args.input)
    save_scene_json(scene, args.output)
    print(f"imported {scene.count} primitives -> {args.output}")
    return 0


def cmd_filter(args) -> int:
    scene = _load_scene(args.scene)
    cameras = load_cameras_json(args.cameras)
    scores = importance_scores(scene, cameras, mode=args.mode)
    filtered, index_map = filter_scene(scene, scores, keep=args.keep)
    save_scene_json(filtered, args.out)
    _write_index_map(index_map, args.index_map)
    print(f"kept {filtered.count} of {scene.count} primitives -> {args.out}")
    return 0


def cmd_stylize_views(args) -> int:
    scene = _load_scene(args.scene)
    cameras = load_cameras_json(args.cameras)
    reference = StyleReference.from_image(_load_image(args.reference))
    manifest = build_manifest(scene, cameras, reference, args.out_dir,
                              style_id=args.style_id, seed=args.seed)
    print(f"stylized {len(manifest.entries)} views -> {args.out_dir} "
          f"(anchor {manifest.anchor_view})")
    return 0


def cmd_align(args) -> int:
    scene = _load_scene(args.scene)
    cameras = load_cameras_json(args.cameras)
    manifest, images = load_manifest(args.manifest, cameras=cameras)
    aligned = align_manifest(scene, cameras, manifest, images, args.out_dir,
                             feature_scale=args.feature_scale,
                             blend=args.blend, z_tolerance=args.z_tolerance,
                             dump_dir=args.dump_features)
    print(f"calibrated {len(aligned.entries)} targets -> {args.out_dir}")
    return 0


def cmd_fit(args) -> int:
    scene = _load_scene(args.scene)
    cameras = load_cameras_json(args.cameras)
    out = Path(args.out)

    scene_for_hash = Path(args.scene)
    if args.keep < 1.0:
        scores = importance_scores(scene, cameras)
        scene, index_map = filter_scene(scene, scores, keep=args.keep)
        base_path = out.with_suffix(".base.json")
        save_scene_json(scene, base_path)
        _write_index_map(index_map, out.with_suffix(".indexmap.json"))
        scene_for_hash = base_path
        print(f"filtered base scene ({scene.count} primitives) -> {base_path}")
    fingerprint = file_fingerprint(scene_for_hash)

    manifest, targets = load_manifest(args.manifest, cameras=cameras)

    external_table = None
    if args.external_table is not None:
        import json as _json
        external_table = _json.loads(Path(args.external_table).read_text())
    cfg = TrainConfig(stage1_steps=args.stage1_steps,
                      stage2_steps=args.stage2_steps, seed=args.seed,
                      perceptual=args.perceptual,
                      external_table=external_table)

    field = StyleOffsetField.zeros(scene.count, manifest.style_id,
                                   scene_fingerprint=fingerprint)
    tuner = StyleTuner()
    trace = train_stage1(scene, cameras, manifest, targets, field, tuner, cfg)
    trace += train_stage2(scene, cameras, manifest, targets, field, tuner, cfg)

    save_field(field, tuner, out)
    trace_path = out.with_suffix(".losses.csv")
    save_loss_trace(trace, trace_path)
    from .report import loss_curve_png
    figure_path = out.with_suffix(".losses.png")
    loss_curve_png(trace, figure_path)
    print(f"trained field -> {out}")
    print(f"loss trace -> {trace_path}")
    print(f"loss figure -> {figure_path}")
    return 0


def _composed_scene(scene, args):
    if args.field is None:
        return scene
    offsets, tuner = load_field(args.field,
                                expected_fingerprint=file_fingerprint(
                                    args.scene))
    if offsets.count != scene.count:
        raise ValidationError(
            f"field covers {offsets.count} primitives, scene has "
            f"{scene.count}")
    return compose(scene, offsets, embedding_for(tuner, args.beta))


def cmd_render(args) -> int:
    if args.view is None and args.dump_dir is None:
        raise _UsageError("render needs --view or --dump-dir")
    scene = _load_scene(args.scene)
    cameras = load_cameras_json(args.cameras)
    composed = _composed_scene(scene, args)

    if args.view is not None:
        by_id = {c.view_id: c for c in cameras}
        cam = by_id.get(args.view)
        if cam is None:
            raise ValidationError(f"unknown view {args.view!r}")
        out = render(composed, cam)
        write_png(out.image, args.out)
        print(f"rendered {args.view} -> {args.out}")

    if args.dump_dir is not None:
        dump = Path(args.dump_dir)
        dump.mkdir(parents=True, exist_ok=True)
        for cam in cameras:
            out = render(composed, cam)
            write_png(out.image, dump / f"{cam.view_id}.png")
            write_f32img(out.image, dump / f"{cam.view_id}.f32img")
            write_f32img(out.depth[:, :, None],
                         dump / f"{cam.view_id}_depth.f32img")
        print(f"dumped {len(cameras)} views -> {dump}")
    return 0


def cmd_eval(args) -> int:
    scene = _load_scene(args.scene)
    cameras = load_cameras_json(args.cameras)
    composed = _composed_scene(scene, args)
    intervals = tuple(int(v) for v in args.intervals.split(","))
    report = consistency(lambda cam: render(composed, cam).image,
                         lambda cam: render_depth(composed, cam),
                         cameras, intervals=intervals,
                         pairs_per_interval=args.pairs, seed=args.seed)
    save_consistency_report(report, args.out)
    from .report import consistency_png
    figure_path = Path(args.out).with_suffix(".png")
    consistency_png(report, figure_path)
    means = {report.short_interval: report.short_mean,
             report.long_interval: report.long_mean}
    for k in sorted(means):
        mean = means[k]
        shown = "n/a" if mean is None else f"{mean:.6f}"
        print(f"interval {k} mean rmse: {shown}")
    print(f"report -> {args.out}")
    print(f"figure -> {figure_path}")
    return 0


def cmd_serve(args) -> int:
    from .service import build_state, serve_forever

    host, _, port = args.bind.rpartition(":")
    if not host or not port.isdigit():
        raise _UsageError(f"--bind must be host:port, got {args.bind!r}")

    def rebuild():
        return build_state(args.scene, args.cameras, args.fields,
                           args.masks, cache_size=args.cache_size)

    serve_forever(rebuild(), host, int(port), rebuild=rebuild)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="splatstyle",
                     description="Intensity-tunable scene stylization.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("import-ply", help="convert a binary PLY to scene JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_import_ply)

    p = sub.add_parser("filter", help="keep the most visible primitives")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--keep", type=float, default=0.5)
    p.add_argument("--mode", choices=("alpha", "sigma"), default="alpha")
    p.add_argument("--out", required=True)
    p.add_argument("--index-map", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("stylize-views",
                       help="write per-view stylized targets + manifest")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--reference", required=True,
                   help="style reference (PNG or .f32img)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--style-id", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stylize_views)

    p = sub.add_parser("align",
                       help="calibrate stylized targets across views")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--feature-scale", type=int, default=4)
    p.add_argument("--blend", type=float, default=0.5)
    p.add_argument("--z-tolerance", type=float, default=None)
    p.add_argument("--dump-features", default=None,
                   help="also write feature grids + validity as .f32img")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("fit", help="train a style field on a manifest")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output .stylefield path")
    p.add_argument("--stage1-steps", type=int, default=2000)
    p.add_argument("--stage2-steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perceptual", choices=("msssim", "none", "external"),
                   default="msssim")
    p.add_argument("--external-table", default=None,
                   help="JSON table of precomputed perceptual distances")
    p.add_argument("--keep", type=float, default=0.5,
                   help="importance-filter fraction applied before training")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="render a view to PNG")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--field", default=None)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--view", default=None)
    p.add_argument("--out", default="render.png")
    p.add_argument("--dump-dir", default=None,
                   help="write PNG + .f32img + depth for every view")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="multi-view consistency report")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--field", default=None)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--intervals", default="2,10")
    p.add_argument("--pairs", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="consistency_report.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="HTTP render service")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--fields", nargs="+", required=True)
    p.add_argument("--masks", nargs="*", default=())
    p.add_argument("--bind", default="127.0.0.1:8080")
    p.add_argument("--cache-size", type=int, default=64)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else USAGE_EXIT
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
