import numpy as np
import pytest

from splatstyle.errors import ValidationError
from splatstyle.importance import filter_scene, importance_scores
from splatstyle.render import RenderConfig
from splatstyle.scene import Camera, GaussianScene


def _camera(view_id="v", size=32, fx=40.0):
    c = (size - 1) / 2.0
    return Camera(view_id=view_id, fx=fx, fy=fx, cx=c, cy=c,
                  width=size, height=size,
                  w2c_rot=np.array([1.0, 0, 0, 0]), w2c_trans=np.zeros(3))


def _scene_from(mu, logit, scale=0.12):
    n = len(mu)
    return GaussianScene(
        positions=np.asarray(mu, dtype=float),
        log_scales=np.full((n, 3), np.log(scale)),
        rotations=np.tile([1.0, 0, 0, 0], (n, 1)),
        opacity_logits=np.asarray(logit, dtype=float),
        colors=np.tile([0.8, 0.4, 0.2], (n, 1)),
    )


def test_occlusion_attenuates_score():
    # An opaque wide splat in front of a small one on the same axis: the
    # back primitive keeps only a sliver of its unoccluded weight.
    front = [0.0, 0.0, 4.0]
    back = [0.0, 0.0, 8.0]
    pair = GaussianScene(
        positions=np.array([front, back]),
        log_scales=np.array([[np.log(1.0)] * 3, [np.log(0.15)] * 3]),
        rotations=np.tile([1.0, 0, 0, 0], (2, 1)),
        opacity_logits=np.array([40.0, 40.0]),
        colors=np.tile([0.8, 0.4, 0.2], (2, 1)),
    )
    alone = pair.subset(np.array([1]))
    occluded_score = importance_scores(pair, [_camera()])[1]
    alone_score = importance_scores(alone, [_camera()])[0]
    assert occluded_score < 0.05 * alone_score


def test_transparent_primitive_scores_below_opaque_twin():
    scene = _scene_from([[-0.5, 0, 5], [0.5, 0, 5]], [-6.0, 3.0])
    scores = importance_scores(scene, [_camera()])
    assert scores[1] > 100.0 * scores[0]


def test_scores_invariant_to_storage_order():
    rng = np.random.default_rng(3)
    n = 20
    z = np.linspace(3, 7, n)
    scene = _scene_from(
        np.column_stack([rng.uniform(-0.6, 0.6, (n, 2)), z]),
        rng.uniform(-1, 2, n))
    perm = rng.permutation(n)
    shuffled = GaussianScene(
        positions=scene.positions[perm], log_scales=scene.log_scales[perm],
        rotations=scene.rotations[perm], opacity_logits=scene.opacity_logits[perm],
        colors=scene.colors[perm])
    s1 = importance_scores(scene, [_camera()])
    s2 = importance_scores(shuffled, [_camera()])
    assert np.allclose(s1[perm], s2, atol=1e-12)


def test_filter_keeps_top_fraction_in_original_order():
    scene = _scene_from([[0, 0, 3 + i] for i in range(4)], [0.0] * 4)
    scores = np.array([0.1, 0.9, 0.5, 0.8])
    filtered, index_map = filter_scene(scene, scores, keep=0.5)
    assert filtered.count == 2
    # Indices 1 and 3 survive, in storage order.
    assert np.allclose(filtered.positions[:, 2], [4.0, 6.0])
    assert index_map.tolist() == [-1, 0, -1, 1]


def test_filter_count_uses_ceiling():
    scene = _scene_from([[0, 0, 3 + i] for i in range(5)], [0.0] * 5)
    scores = np.arange(5, dtype=float)
    filtered, _ = filter_scene(scene, scores, keep=0.5)
    assert filtered.count == 3  # ceil(2.5)


def test_filter_threshold_ties_resolve_to_lower_index():
    scene = _scene_from([[0, 0, 3 + i] for i in range(4)], [0.0] * 4)
    scores = np.array([0.5, 0.5, 0.5, 0.9])
    _, index_map = filter_scene(scene, scores, keep=0.5)
    assert index_map.tolist() == [0, -1, -1, 1]


def test_filter_keep_one_is_identity():
    scene = _scene_from([[0, 0, 3 + i] for i in range(3)], [0.0] * 3)
    filtered, index_map = filter_scene(scene, np.zeros(3), keep=1.0)
    assert filtered.count == 3
    assert np.array_equal(filtered.positions, scene.positions)
    assert index_map.tolist() == [0, 1, 2]


def test_filter_rejects_bad_keep_fraction():
    scene = _scene_from([[0, 0, 4]], [0.0])
    for bad in (0.0, -0.2, 1.5):
        with pytest.raises(ValidationError):
            filter_scene(scene, np.zeros(1), keep=bad)


def test_importance_requires_cameras():
    scene = _scene_from([[0, 0, 4]], [0.0])
    with pytest.raises(ValidationError):
        importance_scores(scene, [])


def test_sigma_mode_flag_changes_weighting():
    scene = _scene_from([[0, 0, 4], [0, 0, 8]], [0.0, 0.0], scale=0.3)
    cfg = RenderConfig()
    alpha_scores = importance_scores(scene, [_camera()], cfg, mode="alpha")
    sigma_scores = importance_scores(scene, [_camera()], cfg, mode="sigma")
    assert not np.allclose(alpha_scores, sigma_scores)
