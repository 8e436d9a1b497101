import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relcon import augment
from relcon.augment import AugmentationError, AugmentationPipeline, AugmentationSpec
from relcon.dataio import Window


def make_window(seed=0, T=32):
    return Window(np.random.default_rng(seed).normal(size=(T, 3)), "u0", "r0", 0, 1)


class TestRotation:
    def test_zero_angle_identity(self):
        w = make_window()
        assert np.allclose(augment.rotation3d(w, [0, 0, 1], 0.0).data, w.data, atol=0)

    def test_quarter_turn_about_z(self):
        w = Window(np.array([[1.0, 2.0, 3.0]]), "u", "r", 0)
        assert np.allclose(augment.rotation3d(w, [0, 0, 1], math.pi / 2).data, [[-2.0, 1.0, 3.0]])

    def test_non_unit_axis(self):
        with pytest.raises(AugmentationError):
            augment.rotation3d(make_window(), [0, 0, 2], 1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 2 * math.pi))
    def test_norms_preserved(self, seed, angle):
        w = make_window(seed)
        axis = augment.random_unit_vector(np.random.default_rng(seed))
        out = augment.rotation3d(w, axis, angle)
        assert np.allclose(np.linalg.norm(out.data, axis=1), np.linalg.norm(w.data, axis=1), atol=1e-9)

    def test_matrix_orthonormal(self):
        R = augment.rotation_matrix(augment.random_unit_vector(np.random.default_rng(1)), 1.234)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(R), 1.0)


class TestPointOps:
    def test_jitter_zero(self):
        w = make_window()
        assert np.array_equal(augment.jitter(w, 0.0).data, w.data)

    def test_jitter_negative(self):
        with pytest.raises(AugmentationError):
            augment.jitter(make_window(), -0.1)

    def test_time_reverse_involution(self):
        w = make_window()
        assert np.array_equal(augment.time_reverse(augment.time_reverse(w)).data, w.data)

    def test_scale_doubles(self):
        w = make_window()
        assert np.array_equal(augment.scale(w, 2.0).data, 2.0 * w.data)

    @pytest.mark.parametrize("factor", [0.0, -1.0])
    def test_scale_non_positive(self, factor):
        with pytest.raises(AugmentationError):
            augment.scale(make_window(), factor)

    def test_invert_preserves_norm(self):
        w = make_window()
        assert np.array_equal(augment.invert(w).data, -w.data)

    @pytest.mark.parametrize("perm", [[0, 0, 1], [0, 1], [0, 1, 3]])
    def test_bad_permutation(self, perm):
        with pytest.raises(AugmentationError):
            augment.channel_shuffle(make_window(), perm)

    def test_channel_shuffle(self):
        w = make_window()
        assert np.array_equal(augment.channel_shuffle(w, [2, 0, 1]).data, w.data[:, [2, 0, 1]])

    def test_time_warp_shape_and_endpoints(self):
        w = make_window(T=50)
        out = augment.time_warp(w, 4, 1.5, np.random.default_rng(0))
        assert out.data.shape == (50, 3)
        assert np.allclose(out.data[[0, -1]], w.data[[0, -1]])

    def test_time_warp_unit_ratio_is_identity(self):
        w = make_window()
        assert np.allclose(augment.time_warp(w, 3, 1.0).data, w.data, atol=1e-12)

    @pytest.mark.parametrize("kind", augment.KINDS)
    def test_every_kind_preserves_shape(self, kind):
        pipe = AugmentationPipeline([AugmentationSpec(kind)], 3)
        out = augment.apply_pipeline(pipe, make_window(T=40))
        assert out.data.shape == (40, 3)
        assert out.augmented


class TestPipeline:
    def test_spec_validation(self):
        with pytest.raises(AugmentationError):
            AugmentationSpec("rotation3d", probability=1.5)
        with pytest.raises(AugmentationError):
            AugmentationSpec("warp")
        with pytest.raises(AugmentationError):
            AugmentationSpec("scale", {"low": -1.0, "high": 1.0})

    def test_zero_probability_identity(self):
        pipe = AugmentationPipeline([AugmentationSpec(k, probability=0.0) for k in augment.KINDS], 0)
        w = make_window()
        assert pipe.is_identity()
        assert np.array_equal(augment.apply_pipeline(pipe, w).data, w.data)

    def test_deterministic(self):
        pipe = augment.default_pipeline(7)
        w = make_window()
        assert np.array_equal(augment.apply_pipeline(pipe, w).data, augment.apply_pipeline(pipe, w).data)

    def test_rotation_then_zero_jitter_is_rotation(self):
        pipe = AugmentationPipeline([AugmentationSpec("rotation3d"), AugmentationSpec("jitter", {"sigma": 0.0})], 5)
        w = make_window()
        out = augment.apply_pipeline(pipe, w)
        # replay the pipeline's stream to recover the drawn axis and angle
        rng = np.random.default_rng(5)
        rng.random()
        axis = augment.random_unit_vector(rng)
        angle = rng.uniform(0, 2 * math.pi)
        assert np.allclose(out.data, augment.rotation3d(w, axis, angle).data, atol=1e-12)

    def test_length_check(self):
        with pytest.raises(AugmentationError):
            augment.apply_pipeline(augment.default_pipeline(), make_window(T=10), length=64)

    def test_json_round_trip(self):
        pipe = augment.default_pipeline(11)
        again = AugmentationPipeline.from_dict(pipe.to_dict())
        assert again.to_dict() == pipe.to_dict()
