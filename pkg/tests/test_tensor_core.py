import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from fade import tensor_core as tc
from fade.errors import ChannelMismatch, NonIntegerOutputShape, OddSpatialDims, ShapeMismatch
from fade.oracles import bilinear_loops, conv2d_loops, maxpool_loops
from fade.tensor_core import ConvWeights, Padding

small_maps = hnp.arrays(np.float64, st.tuples(st.integers(1, 2), st.integers(1, 3), st.integers(1, 5), st.integers(1, 5)),
                        elements=st.floats(-10, 10))


class TestConv2d:
    def test_ones_count_window_size(self):
        x = np.ones((1, 1, 3, 3), np.float32)
        out = tc.conv2d(x, ConvWeights(np.ones((1, 1, 3, 3), np.float32)), padding=Padding.uniform(1))
        np.testing.assert_array_equal(out[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    def test_one_hot_centre_is_identity(self, rng):
        x = rng.normal((2, 3, 5, 4)).astype(np.float32)
        w = np.zeros((3, 3, 3, 3), np.float32)
        for c in range(3):
            w[c, c, 1, 1] = 1
        np.testing.assert_array_equal(tc.conv2d(x, ConvWeights(w), padding=Padding.uniform(1)), x)

    def test_strided_asymmetric_padding_matches_loops(self, rng):
        # 7 rows would give (7 + 1 - 3) / 2 + 1, which is not an integer; 8 rows is the nearest legal shape.
        x = rng.normal((2, 5, 8, 6)).astype(np.float32)
        w = rng.normal((4, 5, 3, 3)).astype(np.float32)
        b = rng.normal((4,)).astype(np.float32)
        pad = Padding(1, 0, 1, 0)
        out = tc.conv2d(x, ConvWeights(w, b), stride=2, padding=pad)
        ref = conv2d_loops(x, w, b, stride=2, padding=pad)
        assert out.shape == ref.shape == (2, 4, 4, 3)
        assert np.abs(out - ref).max() <= 1e-5

    def test_channel_mismatch(self):
        with pytest.raises(ChannelMismatch):
            tc.conv2d(np.zeros((1, 2, 4, 4)), ConvWeights(np.zeros((1, 3, 1, 1))))

    def test_seven_rows_stride_two_is_rejected(self):
        with pytest.raises(NonIntegerOutputShape):
            tc.conv2d(np.zeros((2, 5, 7, 6)), ConvWeights(np.zeros((4, 5, 3, 3))), stride=2, padding=Padding(1, 0, 1, 0))

    def test_non_integer_output(self):
        with pytest.raises(NonIntegerOutputShape):
            tc.conv2d(np.zeros((1, 1, 6, 5)), ConvWeights(np.zeros((1, 1, 3, 3))), stride=2)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 3), st.integers(0, 2), st.sampled_from([1, 3]))
    def test_matches_loops_property(self, seed, stride, p, k):
        from fade.rng import SplitMix64
        r = SplitMix64(seed)
        size = stride * 3 + k - 1 - 2 * p + stride  # keeps the output size integral
        if size < k:
            return
        size -= stride
        x = r.normal((1, 2, size, size))
        w = r.normal((3, 2, k, k))
        try:
            out = tc.conv2d(x, ConvWeights(w), stride=stride, padding=Padding.uniform(p))
        except NonIntegerOutputShape:
            return
        np.testing.assert_allclose(out, conv2d_loops(x, w, None, stride, Padding.uniform(p)), atol=1e-10)


class TestPad:
    def test_top_left(self):
        x = np.array([[[[1, 2], [3, 4]]]], np.float32)
        np.testing.assert_array_equal(tc.pad2d(x, Padding(1, 0, 1, 0))[0, 0], [[0, 0, 0], [0, 1, 2], [0, 3, 4]])

    def test_zero_pad_is_identity(self, rng):
        x = rng.normal((1, 2, 3, 4))
        np.testing.assert_array_equal(tc.pad2d(x, tc.NO_PAD), x)

    def test_sum_preserved_and_unpad_inverts(self, rng):
        x = rng.normal((2, 3, 4, 5))
        pad = Padding(1, 2, 0, 3)
        y = tc.pad2d(x, pad)
        assert y.shape == (2, 3, 7, 8)
        assert np.isclose(y.sum(), x.sum(), rtol=0, atol=1e-12)
        np.testing.assert_array_equal(tc.unpad2d(y, pad), x)

    def test_negative_padding_rejected(self):
        with pytest.raises(ValueError):
            tc.pad2d(np.zeros((1, 1, 2, 2)), Padding(-1, 0, 0, 0))


class TestResampling:
    def test_nn_interpolate(self):
        x = np.array([[[[1, 2], [3, 4]]]], np.float32)
        np.testing.assert_array_equal(tc.nn_interpolate_x2(x)[0, 0],
                                      [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])

    @settings(max_examples=30, deadline=None)
    @given(small_maps)
    def test_nn_blocks_constant_and_maxpool_inverts(self, x):
        up = tc.nn_interpolate_x2(x)
        blocks = up.reshape(*x.shape[:2], x.shape[2], 2, x.shape[3], 2)
        assert np.all(blocks.var(axis=(3, 5)) == 0)
        np.testing.assert_array_equal(tc.maxpool_x2(up), x)
        np.testing.assert_allclose(tc.block_sum_x2(up), 4 * x)

    def test_bilinear_hand_values(self):
        out = tc.bilinear_x2(np.array([[[[0.0, 1.0]]]]))
        np.testing.assert_allclose(out[0, 0], [[0, 0.25, 0.75, 1], [0, 0.25, 0.75, 1]])

    def test_bilinear_constant_and_loops(self, rng):
        np.testing.assert_array_equal(tc.bilinear_x2(np.full((1, 2, 3, 3), 2.5)), np.full((1, 2, 6, 6), 2.5))
        x = rng.normal((1, 2, 4, 5))
        np.testing.assert_allclose(tc.bilinear_x2(x), bilinear_loops(x), atol=1e-12)

    def test_bilinear_mean_close(self, rng):
        x = rng.random((1, 3, 16, 16)) + 0.5
        assert abs(tc.bilinear_x2(x).mean() / x.mean() - 1) < 0.05

    def test_maxpool(self, rng):
        np.testing.assert_array_equal(tc.maxpool_x2(np.array([[[[1.0, 2], [3, 4]]]])), [[[[4.0]]]])
        x = rng.normal((2, 3, 6, 4))
        np.testing.assert_array_equal(tc.maxpool_x2(x), maxpool_loops(x))
        with pytest.raises(OddSpatialDims):
            tc.maxpool_x2(np.zeros((1, 1, 3, 4)))


class TestPointwise:
    def test_softmax_equal_logits(self):
        np.testing.assert_allclose(tc.softmax_channels(np.full((1, 4, 2, 2), 3.0)), 0.25)

    def test_softmax_closed_form(self):
        out = tc.softmax_channels(np.array([0.0, np.log(3.0)]).reshape(1, 2, 1, 1))
        np.testing.assert_allclose(out.ravel(), [0.25, 0.75], atol=1e-15)

    def test_softmax_shift_invariant(self, rng):
        x = rng.normal((2, 5, 3, 3))
        shift = rng.normal((2, 1, 3, 3)) * 50
        assert np.abs(tc.softmax_channels(x + shift) - tc.softmax_channels(x)).max() <= 1e-6

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, (1, 4, 2, 3), elements=st.floats(-700, 700)))
    def test_softmax_normalised(self, x):
        y = tc.softmax_channels(x)
        assert np.all(y >= 0) and np.all(y <= 1)
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)

    def test_sigmoid(self, rng):
        assert tc.sigmoid_map(np.zeros((1, 1, 1, 1)))[0, 0, 0, 0] == 0.5
        big = tc.sigmoid_map(np.array([30.0, -30.0, 1000.0, -1000.0]).reshape(1, 1, 2, 2))
        assert abs(big[0, 0, 0, 0] - 1) < 1e-9 and big[0, 0, 0, 1] < 1e-9
        assert np.all(np.isfinite(big))
        x = rng.normal((1, 2, 4, 4)) * 5
        assert np.abs(tc.sigmoid_map(x) + tc.sigmoid_map(-x) - 1).max() <= 1e-6


class TestPixelShuffle:
    def test_arrangement(self):
        x = np.arange(4.0).reshape(1, 4, 1, 1)
        np.testing.assert_array_equal(tc.pixel_shuffle(x)[0, 0], [[0, 1], [2, 3]])

    def test_round_trip(self, rng):
        x = rng.normal((2, 8, 3, 4))
        np.testing.assert_array_equal(tc.pixel_unshuffle(tc.pixel_shuffle(x)), x)

    def test_bad_channels(self):
        with pytest.raises(ShapeMismatch):
            tc.pixel_shuffle(np.zeros((1, 3, 2, 2)))
