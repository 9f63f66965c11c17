import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from framingattack import tensor as T
from framingattack.exceptions import FormatError, GeometryError
from framingattack.framing import (
    FramingParams,
    apply_framing,
    apply_framing_clip,
    baseline_framing,
    border_layout,
    border_pixel_count,
    load_framing,
    materialize,
    save_framing,
)
from gradcheck import max_gradient_error


def make(width, h, w, seed=0, **kw):
    n = kw.get("channels", 3) * border_pixel_count(width, h, w)
    return FramingParams(np.random.default_rng(seed).standard_normal(n), width, h, w, **kw)


class TestGeometry:
    def test_224_width_1(self):
        fp = make(1, 224, 224)
        assert fp.n_pixels == 900 and fp.theta_hat.size == 2700

    def test_224_width_4(self):
        fp = make(4, 224, 224)
        assert fp.n_pixels == 3648
        assert fp.n_pixels / 232**2 == pytest.approx(0.0678, abs=5e-5)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 20), st.integers(1, 20))
    def test_layout_covers_border_once(self, width, h, w):
        rows, cols = border_layout(width, h, w)
        assert len(rows) == border_pixel_count(width, h, w)
        pos = set(zip(rows.tolist(), cols.tolist()))
        assert len(pos) == len(rows)
        for r, c in pos:
            assert not (width <= r < width + h and width <= c < width + w)
        # row-major scan order
        assert list(zip(rows, cols)) == sorted(zip(rows, cols))

    def test_zero_width_rejected(self):
        with pytest.raises(GeometryError):
            FramingParams(np.zeros(0), 0, 8, 8)

    def test_length_must_match(self):
        with pytest.raises(GeometryError, match="geometry mismatch"):
            FramingParams(np.zeros(10), 1, 8, 8)

    def test_single_channel_variant(self):
        fp = make(2, 8, 8, channels=1)
        vals = materialize(fp)
        assert vals.shape == (fp.n_pixels, 3)
        assert np.all(vals[:, 0] == vals[:, 2])


class TestMaterialize:
    def test_zero_params_give_mid_grey(self):
        fp = FramingParams(np.zeros(3 * border_pixel_count(2, 6, 6)), 2, 6, 6)
        assert np.all(materialize(fp) == 0.5)

    def test_trained_values_strictly_inside_unit_interval(self):
        vals = materialize(make(3, 10, 12, seed=1))
        assert vals.min() > 0 and vals.max() < 1

    def test_black_is_exactly_zero(self):
        assert np.all(materialize(baseline_framing("black", 4, 32, 32)) == 0.0)

    def test_random_is_reproducible(self):
        a = materialize(baseline_framing("random", 4, 32, 32, seed=5))
        b = materialize(baseline_framing("random", 4, 32, 32, seed=5))
        assert np.array_equal(a, b)

    def test_random_mean(self):
        vals = materialize(baseline_framing("random", 4, 32, 32, seed=0))
        assert vals.size == 1728
        assert 0.45 <= vals.mean() <= 0.55
        pooled = np.concatenate([materialize(baseline_framing("random", 4, 32, 32, seed=s)).ravel() for s in range(3)])
        assert pooled.size >= 4500
        assert 0.45 <= pooled.mean() <= 0.55
        assert vals.min() > 0 and vals.max() < 1

    def test_unknown_baseline(self):
        with pytest.raises(ValueError):
            baseline_framing("white", 1, 8, 8)


class TestApply:
    def test_shape_and_content(self):
        img = np.random.default_rng(0).random((3, 32, 32)).astype(np.float32)
        out = apply_framing(img, make(2, 32, 32))
        assert out.shape == (3, 36, 36)
        assert out[:, 2:34, 2:34].tobytes() == img.tobytes()

    def test_border_matches_layout(self):
        fp = make(1, 4, 5)
        out = apply_framing(np.zeros((3, 4, 5)), fp)
        rows, cols = fp.layout()
        np.testing.assert_array_equal(out[:, rows, cols].T, materialize(fp))

    def test_dimension_mismatch(self):
        with pytest.raises(GeometryError):
            apply_framing(np.zeros((3, 48, 48)), make(1, 32, 32))

    def test_gradient_through_sigmoid_and_embedding(self):
        fp = make(2, 5, 4)
        rng = np.random.default_rng(1)
        img = rng.random((2, 3, 5, 4))
        head = T.Tensor(rng.normal(size=(3, 3 * 9 * 8)))
        rows, cols = fp.layout()

        def loss(theta):
            canvas = T.frame(T.Tensor(img), fp.border_tensor(theta), rows, cols, 2)
            logits = T.linear(T.reshape(canvas, (2, -1)), head, T.Tensor(np.zeros(3)))
            return T.softmax_cross_entropy(logits, [0, 2])

        assert max_gradient_error(loss, [fp.theta_hat]) <= 1e-4


class TestClip:
    def test_border_constant_over_frames(self):
        clip = np.random.default_rng(0).random((3, 5, 8, 8))
        fp = make(2, 8, 8)
        out = apply_framing_clip(clip, fp)
        rows, cols = fp.layout()
        for t in range(5):
            assert out[:, t, rows, cols].tobytes() == out[:, 0, rows, cols].tobytes()
            assert out[:, t, 2:10, 2:10].tobytes() == clip[:, t].tobytes()

    def test_single_frame_matches_image(self):
        clip = np.random.default_rng(1).random((3, 1, 8, 8))
        fp = make(1, 8, 8)
        assert np.array_equal(apply_framing_clip(clip, fp)[:, 0], apply_framing(clip[:, 0], fp))


class TestFormat:
    def test_round_trip(self, tmp_path):
        fp = make(3, 16, 20, target=4)
        save_framing(fp, tmp_path / "f.affr")
        back = load_framing(tmp_path / "f.affr")
        assert back.theta_hat.tobytes() == fp.theta_hat.tobytes()
        assert (back.width, back.h_in, back.w_in, back.target, back.provenance) == (3, 16, 20, 4, "trained")
        assert np.array_equal(materialize(back), materialize(fp))

    def test_baselines_round_trip(self, tmp_path):
        for kind in ("black", "random"):
            fp = baseline_framing(kind, 2, 8, 8, seed=3)
            save_framing(fp, tmp_path / kind)
            back = load_framing(tmp_path / kind)
            assert back.provenance == kind and np.array_equal(materialize(back), materialize(fp))

    def test_geometry_mismatch(self, tmp_path):
        path = tmp_path / "g.affr"
        save_framing(make(1, 8, 8), path)
        raw = bytearray(path.read_bytes())
        raw[8:10] = (9).to_bytes(2, "little")  # h_in
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="geometry mismatch"):
            load_framing(path)

    def test_bad_magic_and_version(self, tmp_path):
        path = tmp_path / "m.affr"
        path.write_bytes(b"AFDS" + bytes(40))
        with pytest.raises(FormatError, match="not a framing file"):
            load_framing(path)
        save_framing(make(1, 8, 8), path)
        raw = bytearray(path.read_bytes())
        raw[4] = 7
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version mismatch"):
            load_framing(path)

    def test_truncated_and_trailing(self, tmp_path):
        path = tmp_path / "t.affr"
        save_framing(make(1, 8, 8), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(FormatError, match="truncated payload"):
            load_framing(path)
        path.write_bytes(raw + b"\0")
        with pytest.raises(FormatError, match="trailing data"):
            load_framing(path)

    def test_applied_to_wrong_size_after_load(self, tmp_path):
        save_framing(make(2, 32, 32), tmp_path / "w.affr")
        with pytest.raises(GeometryError):
            apply_framing(np.zeros((3, 48, 48)), load_framing(tmp_path / "w.affr"))
