import math

import numpy as np
import pytest

from mpfusion.errors import ConfigError, DimensionError, InvalidWeightsError
from mpfusion.geometry import EXACT_LATTICE, PoseTransform, Volume, apply_inverse
from mpfusion.projector import ScanGeometry
from mpfusion.simulate import METAL, build_phantom
from mpfusion.config import load_config
from mpfusion.weights import (
    SUM_TOL,
    DistortionImage,
    MaskPair,
    WeightSet,
    distortion_image,
    make_masks,
    normalize_weights,
    pixel_weighted_postprocess,
    pixel_weights,
    pose_masks,
    postprocess_fuse,
    softmax_weights,
)

from oracles import disk_pixels, ray_row

IDENTITY = PoseTransform.identity()


def assert_partition(ws: WeightSet):
    d = ws.diagonals
    assert np.all(d >= 0) and np.all(d <= 1)
    assert np.max(np.abs(d.sum(axis=0) - 1.0)) <= 1e-9


def scalar_distortions(values):
    return [DistortionImage(Volume(np.full((1, 1, 1), float(v))), 1e-6) for v in values]


def softmax_at(values, alpha):
    ws = softmax_weights(scalar_distortions(values), [IDENTITY] * len(values), alpha)
    return ws.diagonals[:, 0, 0, 0]


def mask_pair(metal, obj):
    return MaskPair(Volume(metal.astype(float)), Volume(obj.astype(float)), 1.0, 0.5)


class TestMakeMasks:
    def test_all_zero_volume(self):
        m = make_masks(Volume(np.zeros((4, 4, 4))), 1.0, 0.5)
        assert not m.metal.values.any() and not m.object.values.any()

    def test_recovers_phantom_labels(self):
        cfg = load_config()
        truth, labels = build_phantom(cfg.phantom)
        m = make_masks(truth, cfg.weighting.tau_metal, cfg.weighting.tau_object)
        assert np.array_equal(m.metal.values == 1, labels.values == METAL)
        assert np.array_equal(m.object.values == 1, labels.values > 0)

    def test_threshold_is_strict(self):
        tau = 1.0
        m = make_masks(Volume(np.full((3, 3, 3), tau + 1)), tau, tau - 1e-3)
        assert m.metal.values.all() and m.object.values.all()
        at = make_masks(Volume(np.full((3, 3, 3), tau)), tau, tau - 1e-3)
        assert not at.metal.values.any() and at.object.values.all()

    def test_metal_is_inside_object(self, rng):
        m = make_masks(Volume(rng.uniform(0, 2, (6, 6, 6))), 1.2, 0.4)
        assert np.all(m.metal.values <= m.object.values)

    @pytest.mark.parametrize("tm,to", [(0.5, 0.5), (0.4, 0.5), (1.0, 0.0)])
    def test_rejects_bad_thresholds(self, tm, to):
        with pytest.raises(ConfigError):
            make_masks(Volume(np.zeros((2, 2, 2))), tm, to)


class TestPoseMasks:
    def test_identity_leaves_masks_unchanged(self, rng):
        m = mask_pair(rng.uniform(size=(5, 5, 5)) > 0.7, rng.uniform(size=(5, 5, 5)) > 0.3)
        p = pose_masks(m, IDENTITY)
        assert np.array_equal(p.metal.values, m.metal.values)
        assert np.array_equal(p.object.values, m.object.values)

    def test_quarter_turn_keeps_voxel_count(self, rng):
        metal = rng.uniform(size=(6, 6, 6)) > 0.8
        m = mask_pair(metal, metal | (rng.uniform(size=(6, 6, 6)) > 0.5))
        p = pose_masks(m, PoseTransform.about_axis("y", math.pi / 2, interpolation=EXACT_LATTICE))
        assert p.metal.values.sum() == metal.sum()
        assert set(np.unique(p.metal.values)) <= {0.0, 1.0}

    def test_trilinear_thirty_degrees_matches_rotated_disk(self):
        n, r, c = 32, 4.0, (4.0, 2.0)
        disk = disk_pixels(n, n, 1.0, c, r)[:, :, None]
        m = mask_pair(disk, disk)
        theta = math.radians(30)
        p = pose_masks(m, PoseTransform.about_axis("z", theta))
        rot = (c[0] * math.cos(theta) - c[1] * math.sin(theta), c[0] * math.sin(theta) + c[1] * math.cos(theta))
        expected = disk_pixels(n, n, 1.0, rot, r).sum()
        assert set(np.unique(p.metal.values)) <= {0.0, 1.0}
        assert abs(p.metal.values.sum() - expected) <= 0.1 * expected
        # and the posed disk sits where the rotated one is
        overlap = np.sum(p.metal.values[:, :, 0] * disk_pixels(n, n, 1.0, rot, r))
        assert overlap >= 0.9 * expected


class TestDistortionImage:
    geometry = ScanGeometry.uniform(8, 1, 24, 1.0)

    def body(self):
        return disk_pixels(16, 16, 1.0, (0.0, 0.0), 7.0)[:, :, None]

    def test_empty_metal_gives_zero(self):
        body = self.body()
        d = distortion_image(self.geometry, mask_pair(np.zeros_like(body), body), 1e-6)
        assert np.all(d.values.values == 0.0)

    def test_metal_equal_to_object(self):
        body = self.body()
        d = distortion_image(self.geometry, mask_pair(body, body), 1e-6).values.values
        assert np.all(d <= 1.0)
        assert np.all(np.abs(d[body] - 1.0) <= 1e-6)

    @pytest.mark.parametrize("eps", [0.0, -1e-3])
    def test_rejects_nonpositive_epsilon(self, eps):
        body = self.body()
        with pytest.raises(ConfigError):
            distortion_image(self.geometry, mask_pair(body, body), eps)

    def test_relative_epsilon_scales_with_median(self):
        body = self.body()
        d = distortion_image(self.geometry, mask_pair(np.zeros_like(body), body), 1e-3, relative=True)
        absolute = distortion_image(self.geometry, mask_pair(np.zeros_like(body), body), 1e-3)
        assert d.epsilon > absolute.epsilon == 1e-3

    def test_band_through_metal_carries_distortion(self):
        n, s = 20, 1.0
        g = ScanGeometry((0.0, 1.0, 2.2), 1, 32, 1.0)
        body = disk_pixels(n, n, s, (0.0, 0.0), 9.0)
        metal = disk_pixels(n, n, s, (3.0, -2.0), 1.6)
        d = distortion_image(g, mask_pair(metal[:, :, None], body[:, :, None]), 1e-6).values.values[:, :, 0]
        # a voxel is in the band when some ray crosses both it and the metal
        band = np.zeros((n, n), dtype=bool)
        for theta in g.angles:
            for col in range(g.n_det_cols):
                hit = ray_row(n, n, s, s, theta, (col - (g.n_det_cols - 1) / 2.0) * g.det_pitch) > 1e-12
                if np.any(hit & metal):
                    band |= hit
        on = band & body & ~metal
        off = ~band & body
        assert on.sum() > 20 and off.sum() > 20
        assert np.all(d[on] > 0) and np.all(d[off] == 0.0)
        assert np.median(d[on]) >= 2 * np.median(d[off])


class TestSoftmaxWeights:
    def test_zero_alpha_is_uniform(self, rng):
        ds = [DistortionImage(Volume(rng.uniform(0, 3, (4, 4, 4))), 1e-6) for _ in range(3)]
        ws = softmax_weights(ds, [IDENTITY] * 3, 0.0)
        assert np.all(ws.diagonals == 1.0 / 3.0)

    def test_two_pose_example(self):
        w = softmax_at([0.0, 1.0], 1.0)
        assert np.allclose(w, [0.73106, 0.26894], atol=1e-5)
        assert w[0] == pytest.approx(1 / (1 + math.exp(-1)), abs=1e-15)

    def test_identical_distortions_are_uniform(self, rng):
        d = Volume(rng.uniform(0, 3, (4, 4, 4)))
        ws = softmax_weights([DistortionImage(d, 1e-6)] * 4, [IDENTITY] * 4, 4.0)
        assert np.all(ws.diagonals == 0.25)

    def test_monotone_in_own_distortion(self, rng):
        for _ in range(20):
            base = rng.uniform(0, 2, 3)
            k = int(rng.integers(3))
            bumped = base.copy()
            bumped[k] += rng.uniform(0.05, 1.0)
            a, b = softmax_at(base, 2.0), softmax_at(bumped, 2.0)
            others = np.arange(3) != k
            assert b[k] < a[k] and np.all(b[others] > a[others])

    def test_shift_invariance(self, rng):
        for _ in range(20):
            base = rng.uniform(0, 2, 4)
            shift = rng.uniform(-5, 5)
            assert np.max(np.abs(softmax_at(base + shift, 3.0) - softmax_at(base, 3.0))) <= 1e-12

    def test_large_alpha_stays_finite(self, rng):
        ds = [DistortionImage(Volume(rng.uniform(0, 3, (4, 4, 2))), 1e-6) for _ in range(2)]
        ws = softmax_weights(ds, [IDENTITY] * 2, 1e6)
        assert_partition(ws)
        assert set(np.unique(ws.diagonals)) <= {0.0, 1.0}

    def test_distortions_are_brought_back_to_common_frame(self, rng):
        t = PoseTransform.about_axis("z", math.pi / 2, interpolation=EXACT_LATTICE)
        d_pose = Volume(rng.uniform(0, 1, (5, 5, 3)))
        ws = softmax_weights([DistortionImage(d_pose, 1e-6), *scalar_like(d_pose, 0.5)], [t, IDENTITY], 1.0)
        common = apply_inverse(t, d_pose).values
        assert np.allclose(ws.diagonals[0], 1 / (1 + np.exp(common - 0.5)), atol=1e-14)

    def test_errors(self):
        with pytest.raises(ConfigError):
            softmax_weights([], [], 1.0)
        with pytest.raises(ConfigError):
            softmax_weights(scalar_distortions([0.0]), [IDENTITY] * 2, 1.0)
        with pytest.raises(ConfigError):
            softmax_weights(scalar_distortions([0.0]), [IDENTITY], -1.0)


def scalar_like(v, value):
    return [DistortionImage(v.with_values(np.full_like(v.values, value)), 1e-6)]


class TestWeightSet:
    def test_construction_paths_are_partitions(self, rng):
        dims = (4, 4, 3)
        ds = [DistortionImage(Volume(rng.uniform(0, 2, dims)), 1e-6) for _ in range(3)]
        paths = [
            WeightSet.uniform(3, dims),
            WeightSet.uniform(1, dims),
            normalize_weights(rng.uniform(0.1, 1, (3, *dims))),
            softmax_weights(ds, [IDENTITY] * 3, 0.0),
            softmax_weights(ds, [IDENTITY] * 3, 4.0),
            softmax_weights(ds, [IDENTITY] * 3, 1e3),
            softmax_weights(ds[:1], [IDENTITY], 4.0),
        ]
        for ws in paths:
            assert_partition(ws)

    def test_rejects_invalid(self):
        with pytest.raises(InvalidWeightsError):
            WeightSet(np.array([[[[1.2]]], [[[-0.2]]]]))
        with pytest.raises(InvalidWeightsError):
            WeightSet(np.full((2, 2, 2, 2), 0.5 + 10 * SUM_TOL))
        with pytest.raises(InvalidWeightsError):
            normalize_weights(np.zeros((2, 2, 2, 2)))
        with pytest.raises(ConfigError):
            WeightSet.uniform(0, (2, 2, 2))

    def test_is_read_only(self):
        ws = WeightSet.uniform(2, (2, 2, 2))
        with pytest.raises(ValueError):
            ws.diagonals[0, 0, 0, 0] = 1.0


class TestPostprocessFuse:
    def test_single_pose_returns_common_frame_recon(self, rng):
        t = PoseTransform.about_axis("x", math.pi / 2, interpolation=EXACT_LATTICE)
        x = Volume(rng.standard_normal((5, 5, 5)))
        out = postprocess_fuse([x], [t], WeightSet.uniform(1, (5, 5, 5)))
        assert np.array_equal(out.values, apply_inverse(t, x).values)

    def test_identical_inputs_are_reproduced(self, rng):
        x = Volume(rng.standard_normal((4, 4, 4)))
        ws = normalize_weights(rng.uniform(0.1, 1, (3, 4, 4, 4)))
        assert np.array_equal(postprocess_fuse([x] * 3, [IDENTITY] * 3, ws).values, x.values)

    def test_weighted_sum(self, rng):
        xs = [Volume(rng.standard_normal((3, 3, 3))) for _ in range(2)]
        ws = normalize_weights(rng.uniform(0.1, 1, (2, 3, 3, 3)))
        expected = ws.diagonals[0] * xs[0].values + ws.diagonals[1] * xs[1].values
        assert np.allclose(postprocess_fuse(xs, [IDENTITY] * 2, ws).values, expected, atol=1e-14)

    def test_shape_mismatch(self, rng):
        xs = [Volume(rng.standard_normal((3, 3, 3))) for _ in range(2)]
        with pytest.raises(DimensionError):
            postprocess_fuse(xs, [IDENTITY] * 2, WeightSet.uniform(2, (4, 3, 3)))
        with pytest.raises(DimensionError):
            postprocess_fuse(xs, [IDENTITY], WeightSet.uniform(2, (3, 3, 3)))

    @pytest.mark.slow
    def test_pixel_weighted_fusion_beats_plain_average(self, reference_run):
        masked = {k: m.masked_rmse for k, m in reference_run.report.methods.items()}
        assert masked["pw-avg"] <= masked["avg"]


def test_pipeline_is_a_composition_of_the_operations(rng):
    dims = (12, 12, 12)
    x0 = np.zeros(dims)
    x0[2:10, 2:10, 2:10] = 0.05
    x0[4:6, 6:8, 5:7] = 1.0
    x0 = Volume(x0)
    transforms = [IDENTITY, PoseTransform.about_axis("x", math.pi / 2, interpolation=EXACT_LATTICE)]
    geoms = [ScanGeometry.uniform(10, 12, 20, 1.0)] * 2
    recons = [Volume(rng.standard_normal(dims)) for _ in transforms]
    args = (0.5, 0.01, 4.0, 1e-6, True)
    fused = pixel_weighted_postprocess(recons, transforms, geoms, x0, *args)

    masks = make_masks(x0, 0.5, 0.01)
    dists = [distortion_image(g, pose_masks(masks, t), 1e-6, True) for g, t in zip(geoms, transforms)]
    ws = softmax_weights(dists, transforms, 4.0)
    assert np.array_equal(pixel_weights(x0, geoms, transforms, *args).diagonals, ws.diagonals)
    assert np.array_equal(fused.values, postprocess_fuse(recons, transforms, ws).values)
    assert_partition(ws)
    assert not np.all(ws.diagonals == 0.5)
