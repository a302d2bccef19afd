"""Primitive tensor operation contracts."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mamafnet import kernels
from mamafnet import tensor as T

from conftest import conv2d_oracle, conv3d_oracle, matmul_oracle


def f32(*shape, rng=None, scale=1.0):
    rng = rng or np.random.default_rng(0)
    return (rng.random(shape, dtype=np.float32) - 0.5) * scale


class TestConv2d:
    def test_hand_valid_window_sums(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 4, 4, 1)
        w = np.ones((3, 3, 1, 1), dtype=np.float32)
        out = T.conv2d(x, w, np.zeros(1, np.float32), (1, 1), "valid")
        assert out.shape == (1, 2, 2, 1)
        np.testing.assert_array_equal(out.reshape(2, 2), [[45, 54], [81, 90]])

    def test_zero_kernel_yields_bias(self, rng):
        x = f32(2, 8, 8, 3, rng=rng)
        w = np.zeros((3, 3, 3, 5), dtype=np.float32)
        b = rng.normal(size=5).astype(np.float32)
        out = T.conv2d(x, w, b, (2, 2))
        np.testing.assert_array_equal(out, np.broadcast_to(b, out.shape))

    def test_published_stage_shape(self, rng):
        x = f32(2, 224, 224, 3, rng=rng)
        out = T.conv2d(x, f32(3, 3, 3, 64, rng=rng), np.zeros(64, np.float32), (2, 2))
        assert out.shape == (2, 112, 112, 64)

    def test_matches_oracle_random(self, rng):
        for _ in range(10):
            n, h, w_, ci, co = (int(rng.integers(1, d)) for d in (4, 9, 9, 4, 5))
            kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            sh, sw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            x = f32(n, h, w_, ci, rng=rng)
            k = f32(kh, kw, ci, co, rng=rng)
            b = f32(co, rng=rng)
            got = T.conv2d(x, k, b, (sh, sw))
            want = conv2d_oracle(x, k, b, (sh, sw))
            assert np.abs(got - want).max() < 1e-5

    def test_same_padding_ceil_law_exhaustive(self, rng):
        x1 = f32(1, 16, 16, 1, rng=rng)
        for k in range(1, 6):
            kern = f32(k, k, 1, 1, rng=rng)
            for s in range(1, 5):
                for h in range(1, 17):
                    for w_ in range(1, 17):
                        out = T.conv2d(x1[:, :h, :w_, :], kern, np.zeros(1, np.float32), (s, s))
                        assert out.shape == (1, math.ceil(h / s), math.ceil(w_ / s), 1)

    def test_backend_fallback_agrees(self, rng):
        x = f32(3, 10, 10, 4, rng=rng)
        k = f32(3, 3, 4, 6, rng=rng)
        b = f32(6, rng=rng)
        initial = kernels.active_backend()
        try:
            kernels.set_backend("numba")
            a = T.conv2d(x, k, b, (2, 2))
            kernels.set_backend("numpy")
            c = T.conv2d(x, k, b, (2, 2))
        finally:
            kernels.set_backend(initial)
        assert np.abs(a - c).max() < 1e-5

    def test_channel_mismatch_raises(self, rng):
        with pytest.raises(T.ShapeError, match="Cin"):
            T.conv2d(f32(1, 4, 4, 3, rng=rng), f32(3, 3, 2, 4, rng=rng), np.zeros(4, np.float32))

    def test_empty_output_raises(self, rng):
        with pytest.raises(T.ShapeError, match="empty"):
            T.conv2d(f32(1, 2, 2, 1, rng=rng), f32(3, 3, 1, 1, rng=rng), np.zeros(1, np.float32),
                     (1, 1), "valid")

    def test_input_not_mutated(self, rng):
        x = f32(2, 6, 6, 2, rng=rng)
        before = x.copy()
        T.conv2d(x, f32(3, 3, 2, 3, rng=rng), np.zeros(3, np.float32), (2, 2))
        np.testing.assert_array_equal(x, before)


class TestConv3d:
    def test_published_temporal_reduction(self, rng):
        x = f32(75, 14, 14, 8, rng=rng, scale=0.5)
        w1 = f32(3, 3, 3, 8, 3, rng=rng, scale=0.5)
        mid = T.conv3d(x, w1, np.zeros(3, np.float32), (5, 2, 2))
        assert mid.shape == (15, 7, 7, 3)
        w2 = f32(3, 3, 3, 3, 3, rng=rng, scale=0.5)
        out = T.conv3d(mid, w2, np.zeros(3, np.float32), (5, 1, 1))
        assert out.shape == (3, 7, 7, 3)

    def test_dirac_kernel_is_identity(self, rng):
        x = f32(5, 6, 6, 1, rng=rng)
        w = np.zeros((3, 3, 3, 1, 1), dtype=np.float32)
        w[1, 1, 1, 0, 0] = 1.0
        out = T.conv3d(x, w, np.zeros(1, np.float32), (1, 1, 1))
        np.testing.assert_allclose(out, x, atol=1e-7)

    def test_matches_nested_loop_oracle(self, rng):
        x = f32(5, 4, 4, 2, rng=rng)
        w = f32(3, 3, 3, 2, 2, rng=rng)
        b = f32(2, rng=rng)
        for stride in ((1, 1, 1), (5, 2, 2), (2, 1, 3)):
            got = T.conv3d(x, w, b, stride)
            want = conv3d_oracle(x, w, b, stride)
            assert np.abs(got - want).max() < 1e-5

    def test_temporal_ceil_law(self, rng):
        kern = f32(3, 3, 3, 1, 2, rng=rng)
        for t in range(1, 17):
            x = f32(t, 8, 8, 1, rng=rng)
            for s in range(1, 5):
                out = T.conv3d(x, kern, np.zeros(2, np.float32), (s, 2, 2))
                assert out.shape[0] == math.ceil(t / s)


class TestMatmul:
    def test_identity(self, rng):
        b = f32(3, 4, rng=rng)
        np.testing.assert_allclose(T.matmul(np.eye(3, dtype=np.float32), b), b, atol=1e-7)

    def test_hand_values_vs_triple_loop(self, rng):
        a = f32(2, 3, rng=rng)
        b = f32(3, 2, rng=rng)
        np.testing.assert_allclose(T.matmul(a, b), matmul_oracle(a, b), atol=1e-6)

    def test_batched_equals_per_slice(self, rng):
        a = f32(4, 2, 3, rng=rng)
        b = f32(4, 3, 5, rng=rng)
        got = T.matmul(a, b)
        assert got.shape == (4, 2, 5)
        for i in range(4):
            np.testing.assert_allclose(got[i], matmul_oracle(a[i], b[i]), atol=1e-6)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(T.ShapeError):
            T.matmul(f32(2, 3, rng=rng), f32(4, 2, rng=rng))
        with pytest.raises(T.ShapeError):
            T.matmul(f32(2, 2, 3, rng=rng), f32(3, 3, 4, rng=rng))


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(T.softmax(np.zeros(4, np.float32)), np.full(4, 0.25), atol=1e-7)

    def test_analytic_quarter_three_quarters(self):
        out = T.softmax(np.array([0.0, math.log(3)], dtype=np.float32))
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-6)

    def test_large_inputs_shift_invariant(self):
        big = T.softmax(np.array([1000.0, 1001.0], dtype=np.float32))
        small = T.softmax(np.array([0.0, 1.0], dtype=np.float32))
        assert np.all(np.isfinite(big))
        np.testing.assert_allclose(big, small, atol=1e-6)

    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 3))
    @settings(max_examples=30, deadline=None)
    def test_rows_sum_to_one_and_shift_invariance(self, seed, axis_pick):
        r = np.random.default_rng(seed)
        x = (r.random((3, 4, 5), dtype=np.float32) - 0.5) * 10
        axis = axis_pick - 1
        s = T.softmax(x, axis=axis)
        np.testing.assert_allclose(s.sum(axis=axis), 1.0, atol=1e-6)
        shifted = T.softmax(x + np.float32(3.7), axis=axis)
        np.testing.assert_allclose(s, shifted, atol=1e-6)


class TestReluRollElementwise:
    def test_relu_values(self):
        np.testing.assert_array_equal(
            T.relu(np.array([-1.0, 0.0, 2.0], dtype=np.float32)), [0.0, 0.0, 2.0]
        )
        assert T.relu(-np.ones((3, 3), np.float32)).max() == 0.0

    def test_relu_idempotent(self, rng):
        x = f32(4, 5, rng=rng, scale=4)
        np.testing.assert_array_equal(T.relu(T.relu(x)), T.relu(x))

    def test_roll_forward_convention(self):
        frames = np.array([[0.0], [1.0], [2.0]], dtype=np.float32)
        np.testing.assert_array_equal(T.roll_forward(frames).ravel(), [1.0, 2.0, 0.0])

    def test_roll_single_frame_identity(self, rng):
        x = f32(1, 3, 3, 2, rng=rng)
        np.testing.assert_array_equal(T.roll_forward(x), x)

    @given(st.integers(1, 8), st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_roll_cycles_to_identity(self, n, seed):
        x = np.random.default_rng(seed).random((n, 2), dtype=np.float32)
        out = x
        for _ in range(n):
            out = T.roll_forward(out)
        np.testing.assert_array_equal(out, x)

    def test_elementwise_identities(self, rng):
        a = f32(3, 4, rng=rng)
        b = f32(3, 4, rng=rng)
        np.testing.assert_array_equal(T.sub(a, a), np.zeros_like(a))
        np.testing.assert_array_equal(T.mul(a, np.ones_like(a)), a)
        np.testing.assert_allclose(T.sub(T.add(a, b), b), a, atol=1e-6)

    def test_elementwise_shape_mismatch(self, rng):
        with pytest.raises(T.ShapeError):
            T.add(f32(2, 3, rng=rng), f32(3, 2, rng=rng))


class TestReshape:
    def test_flatten_published_feature_count(self, rng):
        x = f32(3, 7, 7, 3, rng=rng)
        assert T.flatten(x).shape == (441,)

    def test_same_shape_identity_and_roundtrip(self, rng):
        x = f32(2, 3, 4, rng=rng)
        np.testing.assert_array_equal(T.reshape(x, (2, 3, 4)), x)
        np.testing.assert_array_equal(T.reshape(T.reshape(x, (4, 6)), (2, 3, 4)), x)

    def test_count_mismatch(self, rng):
        with pytest.raises(T.ShapeError):
            T.reshape(f32(2, 3, rng=rng), (7,))
