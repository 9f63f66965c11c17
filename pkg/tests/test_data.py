import numpy as np
import pytest

from framingattack.data import (
    DatasetSplit,
    FormatError,
    generate_moving_shapes,
    generate_shapes,
    load_split,
    save_split,
)


@pytest.fixture(scope="module")
def small_images():
    return generate_shapes(seed=3, n_train=96, n_val=40, num_classes=8, h=20, w=24)


@pytest.fixture(scope="module")
def small_clips():
    return generate_moving_shapes(seed=4, n_train=24, n_val=12, num_classes=6, T=4, h=16, w=16)


def test_same_seed_is_bit_identical(small_images):
    again = generate_shapes(seed=3, n_train=96, n_val=40, num_classes=8, h=20, w=24)
    assert again[0] == small_images[0] and again[1] == small_images[1]


def test_different_seed_differs(small_images):
    other, _ = generate_shapes(seed=5, n_train=96, n_val=40, num_classes=8, h=20, w=24)
    assert other != small_images[0]


def test_pixels_in_unit_interval(small_images, small_clips):
    for split in (*small_images, *small_clips):
        assert split.X.min() >= 0.0 and split.X.max() <= 1.0
        assert split.X.dtype == np.float32


def test_shapes_and_tags(small_images, small_clips):
    train, val = small_images
    assert train.X.shape == (96, 3, 20, 24) and val.X.shape == (40, 3, 20, 24)
    assert (train.split, val.split, train.kind) == ("train", "val", "image")
    assert small_clips[0].X.shape == (24, 3, 4, 16, 16)
    assert small_clips[0].kind == "clip"


def test_class_balance_at_default_scale():
    # n_train=4096, 8 classes: each count must lie in [461, 563]
    train, _ = generate_shapes(seed=0, n_train=4096, n_val=8, num_classes=8)
    counts = train.class_counts()
    assert counts.min() >= 461 and counts.max() <= 563


@pytest.mark.parametrize("num_classes", [2, 5, 16])
def test_every_class_renders(num_classes):
    train, _ = generate_shapes(seed=1, n_train=4 * num_classes, n_val=num_classes, num_classes=num_classes, h=16, w=16)
    assert set(train.y.tolist()) == set(range(num_classes))


@pytest.mark.parametrize(
    "kwargs",
    [dict(num_classes=1), dict(num_classes=17), dict(h=15), dict(w=8), dict(scale=(0.3, 0.6))],
)
def test_rejects_bad_arguments(kwargs):
    args = dict(seed=0, n_train=8, n_val=8)
    args.update(kwargs)
    with pytest.raises(ValueError):
        generate_shapes(**args)


def test_background_noise_is_bounded():
    train, _ = generate_shapes(seed=2, n_train=16, n_val=1)
    # the darkest pixels are background noise drawn from [0, 0.1]
    assert np.quantile(train.X, 0.2) <= 0.1


def test_clip_single_frame_is_static_dataset():
    train, _ = generate_moving_shapes(seed=1, n_train=6, n_val=6, T=1, h=16, w=16)
    assert train.X.shape[2] == 1


def test_clip_determinism(small_clips):
    again = generate_moving_shapes(seed=4, n_train=24, n_val=12, num_classes=6, T=4, h=16, w=16)
    assert again[0] == small_clips[0]


def test_clip_figure_moves():
    train, _ = generate_moving_shapes(seed=9, n_train=6, n_val=6, T=3, h=16, w=16, speed=2.0)
    clip = train.X[0]
    assert not np.array_equal(clip[:, 0] > 0.2, clip[:, 2] > 0.2)


class TestFormat:
    def test_round_trip(self, tmp_path, small_images, small_clips):
        for i, split in enumerate((*small_images, *small_clips)):
            path = tmp_path / f"s{i}.afds"
            save_split(split, path)
            assert load_split(path) == split

    def test_truncated(self, tmp_path, small_images):
        path = tmp_path / "t.afds"
        save_split(small_images[1], path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(FormatError, match="truncated payload"):
            load_split(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "x.afds"
        path.write_bytes(b"PNG!" + bytes(64))
        with pytest.raises(FormatError, match="not a dataset file"):
            load_split(path)

    def test_version_mismatch(self, tmp_path, small_images):
        path = tmp_path / "v.afds"
        save_split(small_images[1], path)
        raw = bytearray(path.read_bytes())
        raw[4:6] = (99).to_bytes(2, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version mismatch"):
            load_split(path)

    def test_corrupt_header(self, tmp_path):
        path = tmp_path / "h.afds"
        path.write_bytes(b"AFDS\x01\x00")
        with pytest.raises(FormatError, match="corrupt header"):
            load_split(path)

    def test_split_validation(self):
        with pytest.raises(ValueError):
            DatasetSplit(np.zeros((2, 3, 4, 4), np.float32), np.zeros(3, int), 2)
