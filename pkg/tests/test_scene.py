import json

import numpy as np
import pytest

from splatstyle.errors import FormatError, ValidationError
from splatstyle.scene import (
    Camera,
    GaussianScene,
    load_cameras_json,
    load_scene_json,
    load_scene_ply,
    lookat_camera,
    quat_to_rotmat,
    save_cameras_json,
    save_scene_json,
    save_scene_ply,
    scene_from_dict,
)


def _small_scene(n=5, seed=0):
    rng = np.random.default_rng(seed)
    return GaussianScene(
        positions=rng.normal(size=(n, 3)),
        log_scales=rng.uniform(-2.0, 0.0, size=(n, 3)),
        rotations=rng.normal(size=(n, 4)),
        opacity_logits=rng.uniform(-1.0, 1.0, size=n),
        colors=rng.uniform(0.0, 1.0, size=(n, 3)),
    )


def test_rotations_are_renormalized_on_construction():
    scene = scene_from_dict({"primitives": [{
        "mu": [0, 0, 0], "log_scale": [0, 0, 0], "rot": [2, 0, 0, 0],
        "opacity_logit": 0.0, "color": [1, 0, 0],
    }]})
    assert np.allclose(scene.rotations[0], [1, 0, 0, 0])


def test_non_finite_opacity_rejected_with_index():
    with pytest.raises(ValidationError, match="index 0"):
        GaussianScene(
            positions=np.zeros((1, 3)),
            log_scales=np.zeros((1, 3)),
            rotations=np.array([[1.0, 0, 0, 0]]),
            opacity_logits=np.array([np.nan]),
            colors=np.zeros((1, 3)),
        )


def test_scene_arrays_are_immutable():
    scene = _small_scene()
    with pytest.raises(ValueError):
        scene.positions[0, 0] = 5.0


def test_json_round_trip_is_exact(tmp_path):
    scene = _small_scene(n=17, seed=3)
    path = tmp_path / "scene.json"
    save_scene_json(scene, path)
    loaded = load_scene_json(path)
    assert np.array_equal(loaded.positions, scene.positions)
    assert np.array_equal(loaded.log_scales, scene.log_scales)
    assert np.array_equal(loaded.rotations, scene.rotations)
    assert np.array_equal(loaded.opacity_logits, scene.opacity_logits)
    assert np.array_equal(loaded.colors, scene.colors)


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"primitives": [\n  {"mu": [0, 0, 0],}\n]}')
    with pytest.raises(FormatError, match="line 2"):
        load_scene_json(path)


def test_ply_round_trip_within_float32(tmp_path):
    scene = _small_scene(n=9, seed=7)
    path = tmp_path / "scene.ply"
    save_scene_ply(scene, path)
    loaded = load_scene_ply(path)
    assert loaded.count == scene.count
    assert np.allclose(loaded.positions, scene.positions, atol=1e-6)
    assert np.allclose(loaded.log_scales, scene.log_scales, atol=1e-6)
    # Sign of a quaternion may not flip; values only renormalize.
    assert np.allclose(loaded.rotations, scene.rotations, atol=1e-6)
    assert np.allclose(loaded.opacity_logits, scene.opacity_logits, atol=1e-6)
    assert np.allclose(loaded.colors, scene.colors, atol=1e-6)


def test_ply_missing_property_is_named(tmp_path):
    header = (
        "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
        "property float x\nproperty float y\nproperty float z\n"
        "end_header\n"
    )
    path = tmp_path / "short.ply"
    path.write_bytes(header.encode() + b"\x00" * 12)
    with pytest.raises(FormatError, match="opacity"):
        load_scene_ply(path)


def test_ascii_ply_rejected(tmp_path):
    path = tmp_path / "ascii.ply"
    path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(FormatError, match="ascii"):
        load_scene_ply(path)


def test_identity_camera_maps_origin_to_origin():
    cam = Camera(view_id="v", fx=50, fy=50, cx=16, cy=16, width=32, height=32,
                 w2c_rot=np.array([1.0, 0, 0, 0]), w2c_trans=np.zeros(3))
    assert np.allclose(cam.world_to_camera(np.zeros((1, 3))), 0.0)


def test_non_unit_camera_quaternion_rejected():
    with pytest.raises(ValidationError, match="unit quaternion"):
        Camera(view_id="v", fx=50, fy=50, cx=16, cy=16, width=32, height=32,
               w2c_rot=np.array([0.9, 0, 0, 0]), w2c_trans=np.zeros(3))


def test_camera_json_round_trip(tmp_path):
    cams = [
        lookat_camera(f"v{i}", eye=(np.cos(a), 0.3, np.sin(a)), target=(0, 0, 0),
                      fx=60, fy=60, cx=31.5, cy=31.5, width=64, height=64)
        for i, a in enumerate(np.linspace(0.0, 1.0, 4))
    ]
    path = tmp_path / "cams.json"
    save_cameras_json(cams, path)
    loaded = load_cameras_json(path)
    assert [c.view_id for c in loaded] == [c.view_id for c in cams]
    for a, b in zip(loaded, cams):
        assert np.allclose(a.w2c_rot, b.w2c_rot)
        assert np.allclose(a.w2c_trans, b.w2c_trans)


def test_duplicate_view_ids_rejected(tmp_path):
    cam = {"view_id": "v0", "fx": 50, "fy": 50, "cx": 16, "cy": 16,
           "width": 32, "height": 32, "w2c_rot": [1, 0, 0, 0],
           "w2c_trans": [0, 0, 0]}
    path = tmp_path / "cams.json"
    path.write_text(json.dumps({"cameras": [cam, cam]}))
    with pytest.raises(ValidationError, match="duplicate"):
        load_cameras_json(path)


def test_lookat_camera_looks_down_positive_z():
    cam = lookat_camera("v", eye=(0, 0, -4), target=(0, 0, 0),
                        fx=50, fy=50, cx=16, cy=16, width=32, height=32)
    p = cam.world_to_camera(np.array([[0.0, 0.0, 0.0]]))
    assert p[0, 2] > 0
    R = quat_to_rotmat(cam.w2c_rot)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)


def test_scaled_camera_preserves_projection_geometry():
    cam = Camera(view_id="v", fx=64, fy=64, cx=31.5, cy=31.5,
                 width=64, height=64,
                 w2c_rot=np.array([1.0, 0, 0, 0]), w2c_trans=np.zeros(3))
    small = cam.scaled(4)
    assert (small.width, small.height) == (16, 16)
    # A world point projecting to image pixel u lands at (u - 1.5) / 4 on
    # the feature grid, matching block centers of 4x4 pixel cells.
    pt = np.array([[0.7, -0.2, 5.0]])
    u_full = cam.fx * pt[0, 0] / pt[0, 2] + cam.cx
    u_feat = small.fx * pt[0, 0] / pt[0, 2] + small.cx
    assert np.isclose(u_feat, (u_full - 1.5) / 4.0)
    with pytest.raises(ValidationError):
        cam.scaled(5)
