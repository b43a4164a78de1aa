import csv

import numpy as np
import pytest
from scipy.signal import correlate2d

from splatstyle.errors import ValidationError
from splatstyle.guidance import (Adam, LossReport, TrainConfig, l1_loss,
                                 perceptual_loss, perceptual_value_and_grad,
                                 save_loss_trace, train_stage1, train_stage2,
                                 tunable_loss)
from splatstyle.render import RenderConfig, render
from splatstyle.scene import Camera, GaussianScene
from splatstyle.stylefield import StyleOffsetField, StyleTuner, compose
from splatstyle.stylize import ManifestEntry, StyleTargetManifest

_SMOOTH = RenderConfig(alpha_cutoff=0.0, transmittance_floor=0.0,
                       sigma_clip=1e5)


def _oracle_msssim_loss(a, b):
    """Independent multi-scale SSIM distance built on 2-D correlation."""
    taps = np.exp(-0.5 * ((np.arange(11) - 5.0) / 1.5) ** 2)
    taps /= taps.sum()
    window = np.outer(taps, taps)
    c1, c2 = 0.01 ** 2, 0.03 ** 2

    def smooth(img):
        return correlate2d(img, window, mode="same", boundary="fill",
                           fillvalue=0.0)

    def pool(img):
        h2, w2 = img.shape[0] // 2, img.shape[1] // 2
        return img[:h2 * 2, :w2 * 2].reshape(h2, 2, w2, 2, -1).mean(axis=(1, 3))

    total = 0.0
    x, y = np.array(a, dtype=np.float64), np.array(b, dtype=np.float64)
    for scale in range(3):
        means = []
        for ch in range(x.shape[2]):
            xc, yc = x[:, :, ch], y[:, :, ch]
            mx, my = smooth(xc), smooth(yc)
            sxx = smooth(xc * xc) - mx * mx
            syy = smooth(yc * yc) - my * my
            sxy = smooth(xc * yc) - mx * my
            num = (2 * mx * my + c1) * (2 * sxy + c2)
            den = (mx * mx + my * my + c1) * (sxx + syy + c2)
            means.append((num / den).mean())
        total += float(np.mean(means))
        if scale < 2:
            x, y = pool(x), pool(y)
    return 1.0 - total / 3.0


def test_l1_matches_mean_abs_oracle():
    rng = np.random.default_rng(0)
    for _ in range(4):
        a = rng.uniform(0, 1, (9, 7, 3))
        b = rng.uniform(0, 1, (9, 7, 3))
        acc = 0.0
        for r in range(9):
            for c in range(7):
                for ch in range(3):
                    acc += abs(a[r, c, ch] - b[r, c, ch])
        assert abs(l1_loss(a, b) - acc / (9 * 7 * 3)) < 1e-7
    assert l1_loss(a, a) == 0.0
    assert l1_loss(np.zeros((4, 4, 3)), np.ones((4, 4, 3))) == 1.0
    with pytest.raises(ValidationError):
        l1_loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_perceptual_matches_independent_reference():
    rng = np.random.default_rng(3)
    for _ in range(3):
        a = rng.uniform(0, 1, (24, 20, 3))
        b = np.clip(a + rng.normal(0, 0.15, a.shape), 0, 1)
        assert abs(perceptual_loss(a, b) - _oracle_msssim_loss(a, b)) < 1e-5


def test_perceptual_trivial_cases():
    rng = np.random.default_rng(5)
    a = rng.uniform(0, 1, (20, 20, 3))
    assert perceptual_loss(a, a) == 0.0
    flipped = perceptual_loss(a, 1.0 - a)
    assert 0.0 < flipped <= 1.0
    assert abs(perceptual_loss(1.0 - a, a) - flipped) < 1e-9
    with pytest.raises(ValidationError):
        perceptual_loss(a[:12], a[:12])
    with pytest.raises(ValidationError):
        perceptual_loss(a, a[:, :, :2])


def test_perceptual_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    a = rng.uniform(0.1, 0.9, (16, 16, 3))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    val, grad = perceptual_value_and_grad(a, b)
    assert abs(val - perceptual_loss(a, b)) < 1e-12
    h = 1e-5
    for _ in range(12):
        r, c, ch = (int(rng.integers(16)), int(rng.integers(16)),
                    int(rng.integers(3)))
        ap = a.copy()
        ap[r, c, ch] += h
        am = a.copy()
        am[r, c, ch] -= h
        fd = (perceptual_loss(ap, b) - perceptual_loss(am, b)) / (2 * h)
        assert abs(grad[r, c, ch] - fd) < 1e-6 + 1e-3 * abs(fd)


def test_tunable_loss_endpoints_and_mixing():
    rng = np.random.default_rng(7)
    img = rng.uniform(0, 1, (20, 20, 3))
    base = rng.uniform(0, 1, (20, 20, 3))
    target = rng.uniform(0, 1, (20, 20, 3))
    cfg = TrainConfig()

    zero = tunable_loss(img, base, target, 0.0, cfg)
    assert zero.total == l1_loss(img, base) + perceptual_loss(img, base)
    assert zero.beta_used == 0.0

    full = tunable_loss(img, base, target, 1.0, cfg)
    assert full.total == l1_loss(img, target) + perceptual_loss(img, target)

    mid = tunable_loss(img, base, target, 0.3, cfg)
    expected = 0.7 * zero.total + 0.3 * full.total
    assert abs(mid.total - expected) < 1e-12
    assert abs(mid.total - (mid.l1 + cfg.perceptual_weight * mid.perceptual)) \
        < 1e-12

    with pytest.raises(ValidationError):
        tunable_loss(img, base, target, 1.5, cfg)
    with pytest.raises(ValidationError):
        tunable_loss(img, base[:10], target, 0.5, cfg)


def test_tunable_loss_perceptual_modes():
    rng = np.random.default_rng(9)
    img = rng.uniform(0, 1, (16, 16, 3))
    base = rng.uniform(0, 1, (16, 16, 3))
    target = rng.uniform(0, 1, (16, 16, 3))

    off = tunable_loss(img, base, target, 0.5, TrainConfig(perceptual="none"))
    assert off.perceptual == 0.0
    assert off.total == off.l1

    table = {"v7:base": 0.25, "v7:target": 0.75}
    ext = tunable_loss(img, base, target, 0.5,
                       TrainConfig(perceptual="external",
                                   external_table=table), view_id="v7")
    assert ext.perceptual == pytest.approx(0.5)

    with pytest.raises(ValidationError):
        TrainConfig(perceptual="vgg")


def test_loss_report_rejects_non_finite():
    with pytest.raises(ValidationError):
        LossReport(l1=np.nan, perceptual=0.0, total=0.0, beta_used=0.0,
                   stage="stage1")


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(stage1_steps=-1)
    with pytest.raises(ValidationError):
        TrainConfig(lr_color=0.0)
    with pytest.raises(ValidationError):
        TrainConfig(views_per_step=0)


def test_adam_matches_hand_computed_steps():
    opt = Adam(lr=0.1)
    p = np.array([1.0])
    g = np.array([2.0])
    p1 = opt.step(p, g)
    # First step: m_hat = g, v_hat = g^2 -> update = lr * g / (|g| + eps).
    assert p1[0] == pytest.approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8))
    m = 0.9 * (0.1 * 2.0) / 0.1  # running m after step 1 is 0.2
    p2 = opt.step(p1, np.array([1.0]))
    m2 = (0.9 * 0.2 + 0.1 * 1.0) / (1 - 0.9 ** 2)
    v2 = (0.999 * (0.001 * 4.0) + 0.001 * 1.0) / (1 - 0.999 ** 2)
    assert p2[0] == pytest.approx(p1[0] - 0.1 * m2 / (np.sqrt(v2) + 1e-8))
    assert m == pytest.approx(1.8)  # keep the intermediate honest


def test_adam_minimizes_a_quadratic():
    rng = np.random.default_rng(2)
    target = rng.normal(size=4)
    p = np.zeros(4)
    opt = Adam(lr=0.05)
    for _ in range(400):
        p = opt.step(p, 2.0 * (p - target))
    assert np.max(np.abs(p - target)) < 1e-3


def _fd_scene(rng, count=5):
    depths = np.linspace(4.0, 7.0, count) + rng.uniform(-0.05, 0.05, count)
    positions = np.stack([rng.uniform(-1.1, 1.1, count),
                          rng.uniform(-1.1, 1.1, count), depths], axis=1)
    quats = rng.normal(size=(count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return GaussianScene(
        positions=positions,
        log_scales=rng.uniform(np.log(0.25), np.log(0.6), (count, 3)),
        rotations=quats,
        opacity_logits=rng.uniform(-1.0, 2.0, count),
        colors=rng.uniform(0.3, 0.7, (count, 3)))


def _fd_camera():
    return Camera(view_id="v0", fx=40.0, fy=40.0, cx=15.5, cy=15.5,
                  width=32, height=32, w2c_rot=np.array([1.0, 0, 0, 0]),
                  w2c_trans=np.zeros(3))


def test_full_chain_gradient_matches_finite_differences():
    # Composition -> render -> L1 + perceptual, differentiated end to end.
    rng = np.random.default_rng(17)
    scene = _fd_scene(rng)
    cam = _fd_camera()
    n = scene.count
    off_arrays = {
        "d_position": rng.uniform(-0.05, 0.05, (n, 3)),
        "d_log_scale": rng.uniform(-0.1, 0.1, (n, 3)),
        "d_rotation": rng.uniform(-0.05, 0.05, (n, 4)),
        "d_opacity_logit": rng.uniform(-0.3, 0.3, n),
        "d_color": rng.uniform(-0.08, 0.08, (n, 3)),
    }
    gains = rng.uniform(0.6, 1.4, 14)
    base_img = render(scene, cam, _SMOOTH).image
    target = np.clip(base_img + rng.normal(0, 0.12, base_img.shape),
                     0.05, 0.95)

    def make_field(arrays):
        return StyleOffsetField(style_id="s", **{k: v.copy()
                                                 for k, v in arrays.items()})

    def loss_of(arrays, gain_vec):
        composed = compose(scene, make_field(arrays), gain_vec)
        img = render(composed, cam, _SMOOTH).image
        return l1_loss(img, target) + perceptual_loss(img, target)

    from splatstyle.guidance import _l1_value_and_grad
    from splatstyle.render import backward
    from splatstyle.stylefield import compose_backward

    field = make_field(off_arrays)
    composed = compose(scene, field, gains)
    img = render(composed, cam, _SMOOTH).image
    _, g_l1 = _l1_value_and_grad(img, target)
    _, g_p = perceptual_value_and_grad(img, target)
    scene_grads = backward(composed, cam, _SMOOTH, g_l1 + g_p)
    f_grads, g_gain = compose_backward(scene, field, gains, scene_grads)

    h = 1e-4
    for name in off_arrays:
        flat_idx = rng.choice(off_arrays[name].size,
                              size=min(3, off_arrays[name].size),
                              replace=False)
        analytic, numeric = [], []
        for fi in flat_idx:
            plus = {k: v.copy() for k, v in off_arrays.items()}
            minus = {k: v.copy() for k, v in off_arrays.items()}
            plus[name].ravel()[fi] += h
            minus[name].ravel()[fi] -= h
            numeric.append((loss_of(plus, gains) - loss_of(minus, gains))
                           / (2 * h))
            analytic.append(f_grads[name].ravel()[fi])
        analytic, numeric = np.asarray(analytic), np.asarray(numeric)
        err = np.linalg.norm(analytic - numeric) / max(
            np.linalg.norm(numeric), 1e-8)
        assert err < 2e-3, f"{name}: {analytic} vs {numeric}"

    numeric_g = np.zeros(14)
    for ch in range(14):
        gp, gm = gains.copy(), gains.copy()
        gp[ch] += h
        gm[ch] -= h
        numeric_g[ch] = (loss_of(off_arrays, gp) - loss_of(off_arrays, gm)) \
            / (2 * h)
    err = np.linalg.norm(g_gain - numeric_g) / max(
        np.linalg.norm(numeric_g), 1e-8)
    assert err < 2e-3, f"gains: {g_gain} vs {numeric_g}"


def _training_setup(rng, grid=5, size=32, views=2):
    xs = np.linspace(-1.4, 1.4, grid)
    px, py = np.meshgrid(xs, xs)
    n = grid * grid
    scene = GaussianScene(
        positions=np.stack([px.ravel(), py.ravel(), np.full(n, 5.0)], axis=1),
        log_scales=np.full((n, 3), np.log(0.4)),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        opacity_logits=np.full(n, 3.0),
        colors=rng.uniform(0.3, 0.7, (n, 3)))
    cameras = []
    for i in range(views):
        cameras.append(Camera(
            view_id=f"v{i}", fx=40.0, fy=40.0, cx=(size - 1) / 2,
            cy=(size - 1) / 2, width=size, height=size,
            w2c_rot=np.array([1.0, 0, 0, 0]),
            w2c_trans=np.array([0.12 * i, 0.0, 0.0])))
    targets = {}
    for cam in cameras:
        img = render(scene, cam).image
        targets[cam.view_id] = np.clip(
            img + np.array([0.15, 0.0, -0.1]), 0.05, 0.95)
    manifest = StyleTargetManifest(
        style_id="shift", alignment="none",
        entries=tuple(ManifestEntry(view_id=c.view_id, path=f"{c.view_id}.png",
                                    anchor=(i == 0))
                      for i, c in enumerate(cameras)))
    return scene, cameras, manifest, targets


def test_stage1_validates_before_training():
    rng = np.random.default_rng(1)
    scene, cameras, manifest, targets = _training_setup(rng)
    cfg = TrainConfig(stage1_steps=0, perceptual="none")

    field = StyleOffsetField.zeros(scene.count, "shift")
    tuner = StyleTuner()
    extra = Camera(view_id="ghost", fx=40.0, fy=40.0, cx=15.5, cy=15.5,
                   width=32, height=32, w2c_rot=np.array([1.0, 0, 0, 0]),
                   w2c_trans=np.zeros(3))
    with pytest.raises(ValidationError, match="ghost"):
        train_stage1(scene, cameras + [extra], manifest, targets, field,
                     tuner, cfg)

    dirty = StyleOffsetField.zeros(scene.count, "shift")
    dirty.d_color[0, 0] = 0.5
    with pytest.raises(ValidationError, match="all-zero"):
        train_stage1(scene, cameras, manifest, targets, dirty, tuner, cfg)

    short = StyleOffsetField.zeros(scene.count - 1, "shift")
    with pytest.raises(ValidationError):
        train_stage1(scene, cameras, manifest, targets, short, tuner, cfg)

    bad_shape = dict(targets)
    bad_shape[cameras[0].view_id] = targets[cameras[0].view_id][:16]
    with pytest.raises(ValidationError, match="shape"):
        train_stage1(scene, cameras, manifest, bad_shape, field, tuner, cfg)


def test_stage1_zero_steps_changes_nothing():
    rng = np.random.default_rng(2)
    scene, cameras, manifest, targets = _training_setup(rng)
    field = StyleOffsetField.zeros(scene.count, "shift")
    tuner = StyleTuner()
    trace = train_stage1(scene, cameras, manifest, targets, field, tuner,
                         TrainConfig(stage1_steps=0, perceptual="none"))
    assert trace == []
    assert all(np.all(a == 0.0) for a in field.arrays().values())
    full = compose(scene, field, tuner.embeddings[-1])
    zero = compose(scene, field, tuner.embeddings[0])
    assert zero is scene
    cam = cameras[0]
    assert np.array_equal(render(full, cam).image, render(scene, cam).image)


def test_stage1_first_step_moves_offsets_not_pinned_bucket():
    rng = np.random.default_rng(3)
    scene, cameras, manifest, targets = _training_setup(rng)
    field = StyleOffsetField.zeros(scene.count, "shift")
    tuner = StyleTuner()
    train_stage1(scene, cameras, manifest, targets, field, tuner,
                 TrainConfig(stage1_steps=1, perceptual="none"))
    moved = any(np.any(a != 0.0) for a in field.arrays().values())
    assert moved
    assert np.all(tuner.embeddings[0] == 0.0)


def test_stage1_learns_a_color_shift():
    rng = np.random.default_rng(4)
    scene, cameras, manifest, targets = _training_setup(rng)
    field = StyleOffsetField.zeros(scene.count, "shift")
    tuner = StyleTuner()
    cfg = TrainConfig(stage1_steps=150, perceptual="none", seed=0)
    trace = train_stage1(scene, cameras, manifest, targets, field, tuner, cfg)
    first = np.mean([r.total for _, r in trace[:10]])
    last = np.mean([r.total for _, r in trace[-10:]])
    assert last < 0.5 * first
    assert all(r.stage == "stage1" and r.beta_used == 1.0 for _, r in trace)


def test_stage1_trace_is_deterministic():
    rng = np.random.default_rng(5)
    scene, cameras, manifest, targets = _training_setup(rng)
    traces = []
    for _ in range(2):
        field = StyleOffsetField.zeros(scene.count, "shift")
        tuner = StyleTuner()
        traces.append(train_stage1(
            scene, cameras, manifest, targets, field, tuner,
            TrainConfig(stage1_steps=12, perceptual="none", seed=9)))
    a, b = traces
    assert [r.total for _, r in a] == [r.total for _, r in b]


def _trained_setup(rng, stage1_steps=60):
    scene, cameras, manifest, targets = _training_setup(rng)
    field = StyleOffsetField.zeros(scene.count, "shift")
    tuner = StyleTuner(bucket_count=5)
    cfg = TrainConfig(stage1_steps=stage1_steps, stage2_steps=0,
                      perceptual="none", seed=1)
    train_stage1(scene, cameras, manifest, targets, field, tuner, cfg)
    return scene, cameras, manifest, targets, field, tuner


def test_stage2_freezes_offsets_and_endpoints():
    rng = np.random.default_rng(6)
    scene, cameras, manifest, targets, field, tuner = _trained_setup(rng)
    frozen = [a.tobytes() for a in field.arrays().values()]
    frozen.append(tuner.embeddings[-1].tobytes())

    cfg = TrainConfig(stage2_steps=40, perceptual="none", seed=2)
    trace = train_stage2(scene, cameras, manifest, targets, field, tuner, cfg)
    assert len(trace) == 40

    after = [a.tobytes() for a in field.arrays().values()]
    after.append(tuner.embeddings[-1].tobytes())
    assert frozen == after
    assert np.all(tuner.embeddings[0] == 0.0)

    width = tuner.bucket_width
    for _, report in trace:
        assert tuner.lo + width <= report.beta_used <= tuner.hi - width
        assert report.stage == "stage2"
    # With 40 seeded draws over 3 interior buckets, every bucket moves.
    fresh = StyleTuner(bucket_count=5)
    for z in range(1, 4):
        assert not np.array_equal(tuner.embeddings[z], fresh.embeddings[z])


def test_stage2_no_interior_buckets_warns_and_noops():
    rng = np.random.default_rng(7)
    scene, cameras, manifest, targets = _training_setup(rng)
    field = StyleOffsetField.zeros(scene.count, "shift")
    tuner = StyleTuner(bucket_count=2)
    with pytest.warns(UserWarning):
        trace = train_stage2(scene, cameras, manifest, targets, field, tuner,
                             TrainConfig(stage2_steps=5, perceptual="none"))
    assert trace == []


def test_stage2_trace_is_deterministic():
    rng = np.random.default_rng(8)
    scene, cameras, manifest, targets, field, tuner = _trained_setup(rng)
    emb = tuner.embeddings.copy()
    runs = []
    for _ in range(2):
        t = StyleTuner(bucket_count=5, embeddings=emb.copy())
        runs.append(train_stage2(scene, cameras, manifest, targets, field, t,
                                 TrainConfig(stage2_steps=15,
                                             perceptual="none", seed=3)))
    assert [r.total for _, r in runs[0]] == [r.total for _, r in runs[1]]
    assert [r.beta_used for _, r in runs[0]] == \
        [r.beta_used for _, r in runs[1]]


def test_loss_trace_round_trips_through_csv(tmp_path):
    trace = [(0, LossReport(l1=0.25, perceptual=0.125, total=0.375,
                            beta_used=1.0, stage="stage1")),
             (1, LossReport(l1=0.1, perceptual=0.05, total=0.15,
                            beta_used=0.37, stage="stage2"))]
    path = tmp_path / "trace.csv"
    save_loss_trace(trace, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "stage", "beta", "l1", "perceptual", "total"]
    assert rows[1][0] == "0" and rows[1][1] == "stage1"
    assert float(rows[2][2]) == 0.37
    assert float(rows[2][5]) == 0.15
