"""Deterministic demo scenes for tests, benchmarks, and the CLI walkthrough.

Two bundles:

* toy — a 256-primitive cloud in front of an opaque backdrop, seen from an
  8-camera arc at 64x64. The backdrop keeps every pixel covered so color
  statistics are fittable by per-primitive offsets.
* planar — a single dominant plane with laterally shifted cameras; warps
  between its views are exact, which makes it the reference fixture for
  alignment and consistency checks.

``python3 -m splatstyle.fixtures OUTDIR`` writes both, plus a style
reference image.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .images import write_png
from .scene import (Camera, GaussianScene, lookat_camera, save_cameras_json,
                    save_scene_json, save_scene_ply)

TOY_SIZE = 64
TOY_FOCAL = 70.0
TOY_VIEWS = 8


def make_toy_scene(seed: int = 0) -> GaussianScene:
    """256 primitives: 240 random blobs plus a 16-blob opaque backdrop."""
    rng = np.random.default_rng([seed, 101])
    n_cloud = 240
    cloud_pos = np.stack([rng.uniform(-2.0, 2.0, n_cloud),
                          rng.uniform(-2.0, 2.0, n_cloud),
                          rng.uniform(4.0, 7.0, n_cloud)], axis=1)
    cloud_scales = rng.uniform(np.log(0.12), np.log(0.4), (n_cloud, 3))
    quats = rng.normal(size=(n_cloud, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    cloud_colors = rng.uniform(0.15, 0.85, (n_cloud, 3))
    cloud_logits = rng.uniform(-1.0, 3.0, n_cloud)

    grid = np.linspace(-5.5, 5.5, 4)
    bx, by = np.meshgrid(grid, grid)
    n_back = bx.size
    back_pos = np.stack([bx.ravel(), by.ravel(), np.full(n_back, 9.0)], axis=1)
    back_scales = np.tile(np.log([1.9, 1.9, 0.05]), (n_back, 1))
    back_quats = np.tile([1.0, 0.0, 0.0, 0.0], (n_back, 1))
    back_colors = rng.uniform(0.3, 0.5, (n_back, 3))
    back_logits = np.full(n_back, 6.0)

    return GaussianScene(
        positions=np.concatenate([cloud_pos, back_pos]),
        log_scales=np.concatenate([cloud_scales, back_scales]),
        rotations=np.concatenate([quats, back_quats]),
        opacity_logits=np.concatenate([cloud_logits, back_logits]),
        colors=np.concatenate([cloud_colors, back_colors]))


def make_toy_cameras(count: int = TOY_VIEWS, size: int = TOY_SIZE,
                     focal: float = TOY_FOCAL) -> list[Camera]:
    """An arc of cameras in trajectory order, all aimed at the cloud."""
    target = np.array([0.0, 0.0, 5.5])
    radius = 5.5
    cams = []
    for i, angle in enumerate(np.linspace(-0.45, 0.45, count)):
        eye = target + radius * np.array([np.sin(angle), 0.0, -np.cos(angle)])
        eye[1] = 0.35 * np.sin(2.5 * angle)
        cams.append(lookat_camera(
            f"v{i}", eye, target, fx=focal, fy=focal,
            cx=(size - 1) / 2.0, cy=(size - 1) / 2.0,
            width=size, height=size))
    return cams


def make_style_reference(seed: int = 0, size: int = 64) -> np.ndarray:
    """A warm-to-cool gradient with diagonal stripes; purely synthetic."""
    rng = np.random.default_rng([seed, 202])
    rows, cols = np.mgrid[0:size, 0:size] / (size - 1.0)
    stripes = 0.5 + 0.5 * np.sin((rows + cols) * 18.0)
    img = np.stack([0.75 - 0.45 * rows + 0.1 * stripes,
                    0.35 + 0.25 * stripes,
                    0.3 + 0.5 * cols - 0.1 * stripes], axis=2)
    img += rng.normal(0.0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0)


def make_planar_scene(seed: int = 0, grid: int = 9, z: float = 5.0,
                      extent: float = 3.2) -> GaussianScene:
    """A single dominant plane of overlapping blobs at constant depth."""
    rng = np.random.default_rng([seed, 303])
    xs = np.linspace(-extent, extent, grid)
    px, py = np.meshgrid(xs, xs)
    n = grid * grid
    return GaussianScene(
        positions=np.stack([px.ravel(), py.ravel(), np.full(n, z)], axis=1),
        log_scales=np.full((n, 3), np.log(0.45)),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        opacity_logits=np.full(n, 4.0),
        colors=rng.uniform(0.25, 0.75, (n, 3)))


def make_planar_cameras(count: int = 4, size: int = 64,
                        focal: float = 80.0,
                        baseline: float = 0.125) -> list[Camera]:
    """Laterally translated, parallel cameras in trajectory order."""
    cams = []
    for i in range(count):
        cams.append(Camera(
            view_id=f"p{i}", fx=focal, fy=focal, cx=(size - 1) / 2.0,
            cy=(size - 1) / 2.0, width=size, height=size,
            w2c_rot=np.array([1.0, 0.0, 0.0, 0.0]),
            w2c_trans=np.array([-baseline * i, 0.0, 0.0])))
    return cams


def write_fixture_bundle(out_dir: str | Path, seed: int = 0) -> dict:
    """Write toy + planar bundles; returns the paths keyed by role."""
    out = Path(out_dir)
    toy = out / "toy"
    planar = out / "planar"
    toy.mkdir(parents=True, exist_ok=True)
    planar.mkdir(parents=True, exist_ok=True)

    scene = make_toy_scene(seed)
    cameras = make_toy_cameras()
    save_scene_json(scene, toy / "scene.json")
    save_scene_ply(scene, toy / "scene.ply")
    save_cameras_json(cameras, toy / "cameras.json")
    write_png(make_style_reference(seed), toy / "style_ref.png")

    plane = make_planar_scene(seed)
    plane_cams = make_planar_cameras()
    save_scene_json(plane, planar / "scene.json")
    save_cameras_json(plane_cams, planar / "cameras.json")

    return {"toy_scene": toy / "scene.json", "toy_ply": toy / "scene.ply",
            "toy_cameras": toy / "cameras.json",
            "style_ref": toy / "style_ref.png",
            "planar_scene": planar / "scene.json",
            "planar_cameras": planar / "cameras.json"}


def _main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="python3 -m splatstyle.fixtures",
        description="Write the deterministic demo fixture bundles.")
    parser.add_argument("out_dir")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    paths = write_fixture_bundle(args.out_dir, seed=args.seed)
    for role, path in sorted(paths.items()):
        print(f"{role}: {path}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(_main())
