import numpy as np
import pytest

from splatstyle.errors import ValidationError
from splatstyle.images import quantize_u8, read_png, write_png
from splatstyle.scene import Camera, GaussianScene
from splatstyle.stylize import (
    StyleReference,
    StyleTargetManifest,
    ManifestEntry,
    build_manifest,
    load_manifest,
    procedural_stylize,
)


def _gradient_image(h=32, w=32, lo=0.3, hi=0.7):
    ramp = np.linspace(lo, hi, w)
    img = np.zeros((h, w, 3))
    img[:] = ramp[None, :, None]
    img[:, :, 1] *= 0.8
    img[:, :, 2] *= 1.1
    return np.clip(img, 0, 1)


def test_transfer_matches_reference_statistics():
    rng = np.random.default_rng(0)
    view = np.clip(rng.normal(0.5, 0.08, size=(40, 40, 3)), 0, 1)
    ref = StyleReference.from_image(np.clip(rng.normal(0.45, 0.05, size=(24, 24, 3)), 0, 1))
    out = procedural_stylize(view, ref)
    # Moderate statistics keep the transfer inside [0, 1]: the match is exact.
    assert np.allclose(out.mean(axis=(0, 1)), ref.channel_means, atol=1e-9)
    assert np.allclose(out.std(axis=(0, 1)), ref.channel_stds, atol=1e-9)


def test_stylize_is_idempotent_in_distribution():
    rng = np.random.default_rng(1)
    view = np.clip(rng.normal(0.5, 0.07, size=(32, 32, 3)), 0, 1)
    ref = StyleReference.from_image(np.clip(rng.normal(0.5, 0.06, size=(32, 32, 3)), 0, 1))
    once = procedural_stylize(view, ref)
    twice = procedural_stylize(once, ref)
    delta = np.abs(twice.mean(axis=(0, 1)) - once.mean(axis=(0, 1)))
    assert np.all(delta < 1e-6)


def test_constant_view_uses_deviation_floor():
    view = np.full((16, 16, 3), 0.5)
    ref = StyleReference.from_image(_gradient_image())
    out = procedural_stylize(view, ref)
    assert np.all(np.isfinite(out))
    assert np.all(out >= 0) and np.all(out <= 1)


def test_output_is_clamped():
    view = _gradient_image(lo=0.0, hi=1.0)
    ref = StyleReference.from_image(_gradient_image(lo=0.0, hi=1.0) * 0.5 + 0.5)
    strong = StyleReference(image=ref.image, channel_means=np.array([0.9, 0.5, 0.1]),
                            channel_stds=np.array([3.0, 3.0, 3.0]))
    out = procedural_stylize(view, strong)
    assert out.max() <= 1.0 and out.min() >= 0.0


def _toy_scene_and_cameras():
    rng = np.random.default_rng(7)
    n = 24
    z = rng.uniform(4, 7, n)
    scene = GaussianScene(
        positions=np.column_stack([rng.uniform(-1, 1, (n, 2)) * z[:, None] / 4, z]),
        log_scales=np.full((n, 3), np.log(0.35)),
        rotations=np.tile([1.0, 0, 0, 0], (n, 1)),
        opacity_logits=np.full(n, 2.0),
        colors=rng.uniform(0.1, 0.9, (n, 3)),
    )
    cams = [Camera(view_id=f"v{i}", fx=40, fy=40, cx=15.5, cy=15.5,
                   width=32, height=32, w2c_rot=np.array([1.0, 0, 0, 0]),
                   w2c_trans=np.array([0.02 * i, 0.0, 0.0]))
            for i in range(3)]
    return scene, cams


def test_build_manifest_writes_targets_and_round_trips(tmp_path):
    scene, cams = _toy_scene_and_cameras()
    ref = StyleReference.from_image(_gradient_image())
    manifest = build_manifest(scene, cams, ref, tmp_path, "warm", seed=3)
    assert manifest.alignment == "none"
    assert len(manifest.entries) == 3

    loaded, images = load_manifest(tmp_path / "manifest.json", cameras=cams)
    assert loaded.style_id == "warm"
    assert loaded.anchor_view == manifest.anchor_view
    # PNG storage is lossless: reloading reproduces the quantized pixels.
    for entry in loaded.entries:
        reread = read_png(tmp_path / entry.path)
        assert np.array_equal(quantize_u8(reread), quantize_u8(images[entry.view_id]))


def test_build_manifest_is_deterministic(tmp_path):
    scene, cams = _toy_scene_and_cameras()
    ref = StyleReference.from_image(_gradient_image())
    m1 = build_manifest(scene, cams, ref, tmp_path / "a", "s", seed=11)
    m2 = build_manifest(scene, cams, ref, tmp_path / "b", "s", seed=11)
    assert m1.anchor_view == m2.anchor_view
    for entry in m1.entries:
        b1 = (tmp_path / "a" / entry.path).read_bytes()
        b2 = (tmp_path / "b" / entry.path).read_bytes()
        assert b1 == b2


def test_manifest_validates_anchor_count():
    entries = tuple(ManifestEntry(f"v{i}", f"v{i}.png", anchor=True) for i in range(2))
    with pytest.raises(ValidationError, match="anchor"):
        StyleTargetManifest(style_id="s", alignment="none", entries=entries)


def test_load_manifest_flags_missing_image_and_bad_dims(tmp_path):
    scene, cams = _toy_scene_and_cameras()
    ref = StyleReference.from_image(_gradient_image())
    build_manifest(scene, cams, ref, tmp_path, "s", seed=0)

    (tmp_path / "v1.png").unlink()
    with pytest.raises(FileNotFoundError, match="v1"):
        load_manifest(tmp_path / "manifest.json")

    write_png(np.zeros((8, 8, 3)), tmp_path / "v1.png")
    with pytest.raises(ValidationError, match="v1"):
        load_manifest(tmp_path / "manifest.json", cameras=cams)
