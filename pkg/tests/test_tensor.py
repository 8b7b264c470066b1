import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rank1cnn.tensor import (
    PADDING_MODES,
    ShapeError,
    add,
    argmax,
    as_tensor,
    conv1d_axis,
    conv2d_multi,
    flatten_index,
    matmul,
    outer3,
    reduce_sum,
    reshape,
    scale,
    transpose,
    unflatten_index,
)

import naive


class TestOuter3:
    def test_known_values(self):
        w = outer3([1, 2], [3, 0, 1], [1, -1])
        assert w.shape == (2, 2, 3)
        np.testing.assert_array_equal(w[0], [[3, 0, 1], [6, 0, 2]])
        np.testing.assert_array_equal(w[1], [[-3, 0, -1], [-6, 0, -2]])

    def test_entrywise_definition(self):
        rng = np.random.default_rng(0)
        p, q, t = rng.standard_normal(4), rng.standard_normal(5), rng.standard_normal(3)
        w = outer3(p, q, t)
        for k, i, j in itertools.product(range(3), range(4), range(5)):
            assert w[k, i, j] == p[i] * q[j] * t[k]

    def test_rejects_non_vectors(self):
        with pytest.raises(ShapeError):
            outer3(np.ones((2, 2)), np.ones(3), np.ones(3))
        with pytest.raises(ShapeError):
            outer3(np.ones(3), np.array([]), np.ones(3))


class TestConv2dMulti:
    def test_ones_valid(self):
        out = conv2d_multi(np.ones((1, 3, 3)), np.ones((1, 3, 3)), "valid")
        np.testing.assert_array_equal(out, [[9.0]])

    def test_impulse_response_is_rotated_filter(self):
        # cross-correlation of a centered delta reproduces the filter
        # rotated by 180 degrees around the delta
        x = np.zeros((1, 7, 7))
        x[0, 3, 3] = 1.0
        rng = np.random.default_rng(1)
        f = rng.standard_normal((1, 3, 3))
        out = conv2d_multi(x, f, "same")
        np.testing.assert_allclose(out[2:5, 2:5], f[0, ::-1, ::-1], atol=1e-15)

    @pytest.mark.parametrize("padding", PADDING_MODES)
    @pytest.mark.parametrize("stride", [1, 2])
    def test_matches_loop_oracle(self, padding, stride):
        rng = np.random.default_rng(7)
        for _ in range(10):
            n = int(rng.integers(1, 4))
            h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
            d1, d2 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            x = rng.standard_normal((n, h, w))
            f = rng.standard_normal((n, d1, d2))
            got = conv2d_multi(x, f, padding, stride)
            want = naive.conv2d_multi_loops(x, f, padding, stride)
            assert naive.rel_err(got, want) <= 1e-12

    def test_linear_in_both_arguments(self):
        rng = np.random.default_rng(2)
        x1, x2 = rng.standard_normal((2, 2, 5, 5))
        f1, f2 = rng.standard_normal((2, 2, 3, 3))
        a, b = 0.7, -1.3
        lhs = conv2d_multi(a * x1 + b * x2, f1, "same")
        rhs = a * conv2d_multi(x1, f1, "same") + b * conv2d_multi(x2, f1, "same")
        assert naive.rel_err(lhs, rhs) <= 1e-12
        lhs = conv2d_multi(x1, a * f1 + b * f2, "same")
        rhs = a * conv2d_multi(x1, f1, "same") + b * conv2d_multi(x1, f2, "same")
        assert naive.rel_err(lhs, rhs) <= 1e-12

    def test_output_shapes(self):
        x = np.zeros((2, 6, 5))
        f = np.zeros((2, 3, 3))
        assert conv2d_multi(x, f, "same").shape == (6, 5)
        assert conv2d_multi(x, f, "valid").shape == (4, 3)
        assert conv2d_multi(x, f, "circular").shape == (6, 5)
        assert conv2d_multi(x, f, "same", stride=2).shape == (3, 3)

    def test_errors(self):
        with pytest.raises(ShapeError):
            conv2d_multi(np.zeros((2, 5, 5)), np.zeros((3, 3, 3)), "same")
        with pytest.raises(ShapeError):
            conv2d_multi(np.zeros((1, 2, 2)), np.zeros((1, 3, 3)), "valid")
        with pytest.raises(ShapeError):
            conv2d_multi(np.zeros((1, 2, 5)), np.zeros((1, 3, 3)), "circular")
        with pytest.raises(ValueError):
            conv2d_multi(np.zeros((1, 5, 5)), np.zeros((1, 3, 3)), "reflect")
        with pytest.raises(ValueError):
            conv2d_multi(np.zeros((1, 5, 5)), np.zeros((1, 3, 3)), "same", stride=0)


class TestConv1dAxis:
    def test_channel_selector(self):
        x = np.stack([np.full((3, 4), 1.0), np.full((3, 4), 5.0)])
        out = conv1d_axis(x, [1.0, 0.0], "channel")
        np.testing.assert_array_equal(out, np.ones((3, 4)))

    def test_length_one_kernel_is_identity(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 6))
        for axis in ("vertical", "horizontal"):
            np.testing.assert_array_equal(conv1d_axis(x, [1.0], axis, "same"), x)

    @pytest.mark.parametrize("padding", PADDING_MODES)
    def test_matches_2d_conv_on_single_axis_filters(self, padding):
        # a horizontal/vertical 1-D pass equals conv2d_multi with a 1xD
        # or Dx1 single-channel filter
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 6))
        k = rng.standard_normal(3)
        got = conv1d_axis(x, k, "horizontal", padding)
        want = conv2d_multi(x[None], k[None, None, :], padding)
        assert naive.rel_err(got, want) <= 1e-12
        got = conv1d_axis(x, k, "vertical", padding)
        want = conv2d_multi(x[None], k[None, :, None], padding)
        assert naive.rel_err(got, want) <= 1e-12

    def test_applies_per_channel_on_3d_input(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 5, 6))
        k = rng.standard_normal(3)
        out = conv1d_axis(x, k, "horizontal", "same")
        for c in range(3):
            np.testing.assert_allclose(out[c], conv1d_axis(x[c], k, "horizontal", "same"))

    def test_errors(self):
        with pytest.raises(ShapeError):
            conv1d_axis(np.zeros((2, 3, 3)), [1.0, 2.0, 3.0], "channel")
        with pytest.raises(ShapeError):
            conv1d_axis(np.zeros((4, 4)), np.ones(3), "channel")
        with pytest.raises(ValueError):
            conv1d_axis(np.zeros((4, 4)), np.ones(3), "diagonal")
        with pytest.raises(ShapeError):
            conv1d_axis(np.zeros((2, 4)), np.ones(3), "vertical", "valid")


class TestSeparability:
    @pytest.mark.parametrize("padding", PADDING_MODES)
    def test_composed_equals_pipeline(self, padding):
        rng = np.random.default_rng(11)
        for _ in range(25):
            n = int(rng.integers(1, 9))
            h, w = int(rng.integers(3, 13)), int(rng.integers(3, 13))
            d1, d2 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            x = rng.standard_normal((n, h, w))
            p, q, t = rng.standard_normal(d1), rng.standard_normal(d2), rng.standard_normal(n)
            composed = conv2d_multi(x, outer3(p, q, t), padding)
            mixed = conv1d_axis(x, t, "channel")
            vert_first = conv1d_axis(conv1d_axis(mixed, p, "vertical", padding),
                                     q, "horizontal", padding)
            horiz_first = conv1d_axis(conv1d_axis(mixed, q, "horizontal", padding),
                                      p, "vertical", padding)
            assert naive.rel_err(vert_first, composed) <= 1e-10
            assert naive.rel_err(horiz_first, composed) <= 1e-10


class TestKitOps:
    def test_matmul(self):
        a = np.arange(6.0).reshape(2, 3)
        b = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(matmul(a, b), a @ b)
        with pytest.raises(ShapeError):
            matmul(a, a)

    def test_transpose_involution(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((3, 5))
        np.testing.assert_array_equal(transpose(transpose(a)), a)

    def test_reshape(self):
        a = np.arange(12.0)
        assert reshape(a, (3, 4)).shape == (3, 4)
        with pytest.raises(ShapeError):
            reshape(a, (5, 3))

    def test_add_scale(self):
        a = np.ones((2, 2))
        np.testing.assert_array_equal(add(a, a), 2 * a)
        np.testing.assert_array_equal(scale(a, -3), -3 * a)
        with pytest.raises(ShapeError):
            add(a, np.ones(3))

    def test_argmax_reduce_sum(self):
        a = np.array([[1.0, 9.0], [4.0, 2.0]])
        assert argmax(a) == 1
        np.testing.assert_array_equal(argmax(a, axis=1), [1, 0])
        assert reduce_sum(a) == 16.0
        np.testing.assert_array_equal(reduce_sum(a, axis=0), [5.0, 11.0])

    def test_as_tensor_dtype(self):
        assert as_tensor([1, 2]).dtype == np.float64


class TestFlatIndices:
    @given(st.lists(st.integers(min_value=1, max_value=6), min_size=1, max_size=4),
           st.data())
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, shape, data):
        multi = tuple(data.draw(st.integers(0, extent - 1)) for extent in shape)
        flat = flatten_index(shape, multi)
        assert unflatten_index(shape, flat) == multi
        total = int(np.prod(shape))
        assert 0 <= flat < total

    def test_row_major_order(self):
        # last axis varies fastest
        assert flatten_index((2, 3), (0, 1)) == 1
        assert flatten_index((2, 3), (1, 0)) == 3
        assert unflatten_index((2, 3), 5) == (1, 2)

    def test_bounds(self):
        with pytest.raises(IndexError):
            flatten_index((2, 3), (2, 0))
        with pytest.raises(IndexError):
            unflatten_index((2, 3), 6)
        with pytest.raises(ShapeError):
            flatten_index((2, 3), (1,))
