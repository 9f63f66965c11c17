import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framingattack import tensor as T
from framingattack.composition import Strategy, bilinear_resize, compose, compose_tensor
from framingattack.exceptions import GeometryError
from framingattack.framing import FramingParams, baseline_framing, border_pixel_count
from gradcheck import max_gradient_error


def framing_for(strategy, h, w, width, seed=0, trained_under=None):
    h_in, w_in = Strategy.parse(strategy).framing_interior(h, w, width)
    n = 3 * border_pixel_count(width, h_in, w_in)
    theta = np.random.default_rng(seed).standard_normal(n)
    return FramingParams(theta, width, h_in, w_in, strategy=trained_under)


class TestResize:
    def test_identity_is_bit_exact(self):
        img = np.random.default_rng(0).random((3, 7, 9)).astype(np.float32)
        assert bilinear_resize(img, 7, 9).tobytes() == img.tobytes()

    @pytest.mark.parametrize("size", [(1, 1), (5, 3), (20, 31)])
    def test_constant_is_preserved(self, size):
        img = np.full((3, 6, 8), 0.37)
        np.testing.assert_allclose(bilinear_resize(img, *size), 0.37, rtol=0, atol=1e-15)

    def test_checkerboard_centre(self):
        # output pixel 1 of 3 maps to source coordinate (1 + 0.5) * 2/3 - 0.5 = 0.5,
        # equidistant from all four source pixels
        board = np.array([[0.0, 1.0], [1.0, 0.0]])[None]
        out = bilinear_resize(board, 3, 3)
        assert out[0, 1, 1] == pytest.approx(0.5)
        # corners clamp to the nearest source pixel
        assert out[0, 0, 0] == 0.0 and out[0, 0, 2] == 1.0

    def test_downsample_by_two_averages_pairs(self):
        row = np.array([[0.0, 2.0, 4.0, 6.0]])[None]
        np.testing.assert_allclose(bilinear_resize(row, 1, 2)[0, 0], [1.0, 5.0])


class TestCompose:
    def test_vanilla_shape(self):
        img = np.zeros((3, 32, 32))
        assert compose(img, framing_for("vanilla", 32, 32, 3), "vanilla").shape == (3, 38, 38)

    @pytest.mark.parametrize("strategy", ["frame-and-resize", "resize-and-frame", "occlude"])
    def test_fixed_size_strategies(self, strategy):
        img = np.random.default_rng(0).random((3, 32, 32))
        assert compose(img, framing_for(strategy, 32, 32, 2), strategy).shape == (3, 32, 32)

    def test_occlude_preserves_interior_and_overwrites_ring(self):
        h, w, W = 20, 26, 3
        img = np.random.default_rng(1).random((3, h, w))
        fp = framing_for("occlude", h, w, W)
        out = compose(img, fp, "occlude")
        assert out[:, W:-W, W:-W].tobytes() == img[:, W:-W, W:-W].tobytes()
        changed = np.any(out != img, axis=0)
        assert changed.sum() == 2 * W * (h + w - 2 * W)

    def test_resize_and_frame_border_is_framing(self):
        fp = framing_for("resize-and-frame", 16, 16, 2)
        out = compose(np.zeros((3, 16, 16)), fp, "resize-and-frame")
        rows, cols = fp.layout()
        np.testing.assert_allclose(out[:, rows, cols], T.sigmoid(T.Tensor(fp.theta_hat)).data.reshape(-1, 3).T)

    def test_wrong_interior_names_strategy(self):
        fp = framing_for("vanilla", 32, 32, 2)
        with pytest.raises(GeometryError, match="occlude.*28x28"):
            compose(np.zeros((3, 32, 32)), fp, "occlude")

    def test_reuse_is_limited_to_geometry_family(self):
        vanilla_trained = framing_for("vanilla", 12, 12, 1, trained_under="vanilla")
        compose(np.zeros((3, 12, 12)), vanilla_trained, "frame-and-resize")
        rf_trained = framing_for("resize-and-frame", 12, 12, 1, trained_under="resize-and-frame")
        compose(np.zeros((3, 12, 12)), rf_trained, "occlude")

    def test_unknown_strategy(self):
        with pytest.raises(ValueError, match="unknown strategy"):
            Strategy.parse("crop")

    def test_clip_composition(self):
        clip = np.random.default_rng(2).random((3, 4, 10, 10))
        out = compose(clip, framing_for("vanilla", 10, 10, 2), "vanilla")
        assert out.shape == (3, 4, 14, 14)

    def test_black_baseline_under_every_strategy(self):
        img = np.ones((3, 16, 16))
        for s in Strategy:
            h_in, w_in = s.framing_interior(16, 16, 2)
            out = compose(img, baseline_framing("black", 2, h_in, w_in), s)
            assert out[:, 0, :].max() == 0.0


@settings(max_examples=60, deadline=None)
@given(
    st.sampled_from(list(Strategy)),
    st.integers(1, 4),
    st.integers(10, 24),
    st.integers(10, 24),
)
def test_output_dimension_contract(strategy, width, h, w):
    img = np.random.default_rng(h * w).random((3, h, w))
    out = compose(img, framing_for(strategy, h, w, width), strategy)
    assert out.shape[1:] == strategy.output_shape(h, w, width)
    if strategy is Strategy.VANILLA:
        assert out.shape[1:] == (h + 2 * width, w + 2 * width)
    else:
        assert out.shape[1:] == (h, w)
    assert np.array_equal(out, compose(img, framing_for(strategy, h, w, width), strategy))


@pytest.mark.parametrize("strategy", list(Strategy))
def test_pipeline_gradient(strategy):
    h, w, W = 9, 8, 2
    fp = framing_for(strategy, h, w, W, seed=3)
    rng = np.random.default_rng(4)
    img = rng.random((2, 3, h, w))
    oh, ow = strategy.output_shape(h, w, W)
    head = T.Tensor(rng.normal(size=(4, 3 * oh * ow)))

    def loss(theta):
        out = compose_tensor(T.Tensor(img), fp.border_tensor(theta), fp, strategy)
        return T.softmax_cross_entropy(T.linear(T.reshape(out, (2, -1)), head, T.Tensor(np.zeros(4))), [1, 3])

    assert max_gradient_error(loss, [fp.theta_hat]) <= 1e-4
