import math

import numpy as np
import pytest

from irrflow import datagen
from irrflow.datagen import (
    DataConfig,
    Layer,
    MotionSpec,
    SceneSample,
    analytic_flow,
    analytic_occlusion,
    forward_backward_errors,
    make_sample,
    mark_out_of_bounds,
    render_pair,
    sample_scene,
)


# ---------------------------------------------------------------------------
# independent per-pixel oracle: recomputes visibility and mappings with
# nested loops straight from the motion matrices


def _scalar_apply(m, x, y):
    d = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    return ((m[0, 0] * x + m[0, 1] * y + m[0, 2]) / d,
            (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / d)


def _scalar_present(layer, frame, x, y):
    if frame == 1:
        m = np.linalg.inv(layer.placement)
    else:
        m = np.linalg.inv(layer.motion @ layer.placement)
    tx, ty = _scalar_apply(m, x, y)
    ti, tj = int(np.rint(tx)), int(np.rint(ty))
    th, tw = layer.alpha.shape
    return 0 <= ti < tw and 0 <= tj < th and layer.alpha[tj, ti] > 0


def oracle_index_map(spec, frame):
    idx = np.full((spec.height, spec.width), -1, dtype=np.int64)
    for y in range(spec.height):
        for x in range(spec.width):
            for k in reversed(range(len(spec.layers))):
                if _scalar_present(spec.layers[k], frame, float(x), float(y)):
                    idx[y, x] = k
                    break
    return idx


def oracle_occlusion(spec, frame):
    """Forward-splat visibility check, one pixel at a time."""
    idx_own = oracle_index_map(spec, frame)
    idx_other = oracle_index_map(spec, 2 if frame == 1 else 1)
    h, w = spec.height, spec.width
    occ = np.zeros((h, w), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            k = idx_own[y, x]
            if k < 0:
                occ[y, x] = 1
                continue
            motion = spec.layers[k].motion if frame == 1 else np.linalg.inv(spec.layers[k].motion)
            qx, qy = _scalar_apply(motion, float(x), float(y))
            x0, y0 = math.floor(qx), math.floor(qy)
            fx, fy = qx - x0, qy - y0
            for dy, wy in ((0, 1 - fy), (1, fy)):
                for dx, wx in ((0, 1 - fx), (1, fx)):
                    if wx * wy <= 0:
                        continue
                    xi, yi = x0 + dx, y0 + dy
                    if not (0 <= xi < w and 0 <= yi < h) or idx_other[yi, xi] != k:
                        occ[y, x] = 1
    return occ


# ---------------------------------------------------------------------------
# hand-built specs


def translation(tx, ty):
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def flat_texture(h, w, value=0.5):
    return np.full((h, w, 3), value, dtype=np.float64)


def bg_layer(w, h, motion, margin=12, value=0.5):
    texture = flat_texture(h + 2 * margin, w + 2 * margin, value)
    alpha = np.ones(texture.shape[:2], dtype=np.uint8)
    return Layer(texture, alpha, translation(-margin, -margin), motion)


def square_layer(x0, y0, size, motion, value=0.9):
    return Layer(flat_texture(size, size, value), np.ones((size, size), dtype=np.uint8),
                 translation(x0, y0), motion)


def manual_spec(w, h, layers, seed=0):
    return MotionSpec(width=w, height=h, layers=layers, seed=seed)


class TestSampleScene:
    def test_deterministic_in_seed(self):
        cfg = DataConfig()
        a = sample_scene(123, cfg)
        b = sample_scene(123, cfg)
        assert len(a.layers) == len(b.layers)
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.motion, lb.motion)
            np.testing.assert_array_equal(la.texture, lb.texture)
            np.testing.assert_array_equal(la.alpha, lb.alpha)

    def test_background_only_scene(self):
        cfg = DataConfig(min_layers=0, max_layers=0)
        spec = sample_scene(5, cfg)
        assert len(spec.layers) == 1
        flow = analytic_flow(spec, "forward")
        xs, ys = np.meshgrid(np.arange(cfg.width, dtype=np.float64),
                             np.arange(cfg.height, dtype=np.float64))
        qx, qy = _scalar_apply(spec.layers[0].motion, xs, ys)
        np.testing.assert_allclose(flow[..., 0], (qx - xs).astype(np.float32), atol=1e-6)
        np.testing.assert_allclose(flow[..., 1], (qy - ys).astype(np.float32), atol=1e-6)

    def test_flow_bounded_by_corner_displacement(self):
        cfg = DataConfig()
        for seed in range(8):
            spec = sample_scene(seed, cfg)
            # affine displacement fields attain their maximum at the corners
            bound = max(datagen._max_corner_displacement(layer.motion, cfg.width, cfg.height)
                        for layer in spec.layers)
            flow = analytic_flow(spec, "forward")
            assert np.hypot(flow[..., 0], flow[..., 1]).max() <= bound + 1e-6


class TestRenderPair:
    def test_identity_motions_give_identical_frames(self):
        spec = manual_spec(16, 12, [bg_layer(16, 12, translation(0, 0)),
                                    square_layer(4, 3, 5, translation(0, 0), value=0.9)])
        i1, i2, idx1, idx2 = render_pair(spec)
        np.testing.assert_array_equal(i1, i2)
        np.testing.assert_array_equal(idx1, idx2)

    def test_opaque_foreground_carries_its_index(self):
        spec = manual_spec(16, 12, [bg_layer(16, 12, translation(0, 0)),
                                    square_layer(5, 4, 4, translation(1, 0))])
        _, _, idx1, idx2 = render_pair(spec)
        assert np.all(idx1[4:8, 5:9] == 1)
        assert np.all(idx2[4:8, 6:10] == 1)

    def test_front_layer_wins_against_zorder_oracle(self):
        rng = np.random.default_rng(0)
        for seed in range(5):
            spec = sample_scene(seed, DataConfig(width=24, height=20, min_layers=2, max_layers=3))
            _, _, idx1, idx2 = render_pair(spec)
            np.testing.assert_array_equal(idx1, oracle_index_map(spec, 1))
            np.testing.assert_array_equal(idx2, oracle_index_map(spec, 2))
        del rng


class TestAnalyticFlow:
    def test_identity_motion_zero_flow(self):
        spec = manual_spec(8, 8, [bg_layer(8, 8, translation(0, 0))])
        for direction in ("forward", "backward"):
            assert np.abs(analytic_flow(spec, direction)).max() == 0.0

    def test_pure_translation(self):
        spec = manual_spec(10, 8, [bg_layer(10, 8, translation(2.0, -1.0))])
        fw = analytic_flow(spec, "forward")
        bw = analytic_flow(spec, "backward")
        np.testing.assert_allclose(fw[..., 0], 2.0)
        np.testing.assert_allclose(fw[..., 1], -1.0)
        np.testing.assert_allclose(bw[..., 0], -2.0)
        np.testing.assert_allclose(bw[..., 1], 1.0)

    def test_rotation_about_center(self):
        c = 2.0
        rot = np.array([[0.0, -1.0, c + c], [1.0, 0.0, c - c], [0.0, 0.0, 1.0]])  # 90 degrees
        spec = manual_spec(5, 5, [bg_layer(5, 5, rot, margin=8)])
        flow = analytic_flow(spec, "forward")
        for y in range(5):
            for x in range(5):
                ex = (-(y - c) + c) - x
                ey = ((x - c) + c) - y
                assert flow[y, x, 0] == pytest.approx(ex, abs=1e-6)
                assert flow[y, x, 1] == pytest.approx(ey, abs=1e-6)

    def test_bad_direction(self):
        spec = manual_spec(4, 4, [bg_layer(4, 4, translation(0, 0))])
        with pytest.raises(ValueError):
            analytic_flow(spec, "sideways")


class TestAnalyticOcclusion:
    def test_identity_nonoverlapping_all_visible(self):
        spec = manual_spec(16, 12, [bg_layer(16, 12, translation(0, 0)),
                                    square_layer(2, 2, 4, translation(0, 0))])
        assert analytic_occlusion(spec, 1).max() == 0
        assert analytic_occlusion(spec, 2).max() == 0

    def test_background_translation_occludes_edge_strip(self):
        t = 3
        spec = manual_spec(16, 12, [bg_layer(16, 12, translation(t, 0))])
        occ = analytic_occlusion(spec, 1)
        expected = np.zeros((12, 16), dtype=np.uint8)
        expected[:, 16 - t:] = 1
        np.testing.assert_array_equal(occ, expected)
        np.testing.assert_array_equal(occ, oracle_occlusion(spec, 1))

    def test_foreground_covers_background(self):
        spec = manual_spec(20, 12, [bg_layer(20, 12, translation(0, 0)),
                                    square_layer(3, 3, 5, translation(6, 0))])
        occ1 = analytic_occlusion(spec, 1)
        # background pixels under the frame-2 footprint (x in 9..13) are occluded
        assert np.all(occ1[4:7, 10:13] == 1)
        # the moved square itself remains visible
        assert np.all(occ1[4:7, 4:7] == 0)
        np.testing.assert_array_equal(occ1, oracle_occlusion(spec, 1))

    def test_matches_visibility_oracle_on_random_scenes(self):
        cfg = DataConfig(width=32, height=32, min_layers=1, max_layers=3,
                         bg_max_translation=4.0, fg_max_translation=6.0)
        for seed in range(6):
            spec = sample_scene(seed, cfg)
            for frame in (1, 2):
                got = analytic_occlusion(spec, frame)
                np.testing.assert_array_equal(got, oracle_occlusion(spec, frame))


class TestMarkOutOfBounds:
    def test_zero_flow_unchanged(self):
        occ = (np.random.default_rng(1).uniform(size=(6, 8)) > 0.7).astype(np.uint8)
        flow = np.zeros((6, 8, 2), dtype=np.float32)
        np.testing.assert_array_equal(mark_out_of_bounds(occ, flow), occ)

    def test_uniform_push_marks_half(self):
        occ = np.zeros((4, 8), dtype=np.uint8)
        flow = np.zeros((4, 8, 2), dtype=np.float32)
        flow[..., 0] = 4.0
        out = mark_out_of_bounds(occ, flow)
        np.testing.assert_array_equal(out[:, 4:], 1)
        np.testing.assert_array_equal(out[:, :4], 0)

    def test_idempotent_or(self):
        occ = np.ones((4, 4), dtype=np.uint8)
        flow = np.zeros((4, 4, 2), dtype=np.float32)
        np.testing.assert_array_equal(mark_out_of_bounds(occ, flow), occ)


class TestForwardBackwardConsistency:
    def test_exact_at_integer_landings(self):
        spec = manual_spec(12, 10, [bg_layer(12, 10, translation(2.0, 1.0))])
        sample = _sample_from_spec(spec)
        err, visible = forward_backward_errors(sample)
        assert err[visible].max() <= 1e-9

    def test_random_scenes_within_interpolation_tolerance(self):
        cfg = DataConfig(width=48, height=32)
        worst = 0.0
        for seed in range(50):
            sample = make_sample(seed, cfg)
            err, visible = forward_backward_errors(sample)
            if visible.any():
                worst = max(worst, float(err[visible].max()))
        assert worst <= 0.51


def _sample_from_spec(spec):
    img1, img2, idx1, idx2 = render_pair(spec)
    return SceneSample(
        image1=img1, image2=img2,
        flow_fw=analytic_flow(spec, "forward", idx1),
        flow_bw=analytic_flow(spec, "backward", idx2),
        occ1=analytic_occlusion(spec, 1, (idx1, idx2)),
        occ2=analytic_occlusion(spec, 2, (idx1, idx2)),
        seed=spec.seed,
    )


class TestMakeSample:
    def test_deterministic(self):
        cfg = DataConfig()
        a = make_sample(11, cfg)
        b = make_sample(11, cfg)
        np.testing.assert_array_equal(a.image1, b.image1)
        np.testing.assert_array_equal(a.flow_fw, b.flow_fw)
        np.testing.assert_array_equal(a.occ2, b.occ2)

    def test_fields_consistent(self):
        sample = make_sample(3, DataConfig())
        assert sample.image1.dtype == np.uint8
        assert sample.flow_fw.dtype == np.float32
        assert set(np.unique(sample.occ1)) <= {0, 1}
        assert sample.flow_fw.shape == (48, 64, 2)
