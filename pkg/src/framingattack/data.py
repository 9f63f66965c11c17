"""Synthetic image and clip datasets plus the AFDS on-disk format.

Images show one of up to 16 class-specific figures at a random position,
scale and colour over low-amplitude noise. Clips show a random figure
drifting across a toroidal canvas; the label is the drift direction, so a
single frame carries no information about the class.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import FormatError

MAGIC = b"AFDS"
VERSION = 1
_HEADER = struct.Struct("<4sHBBIHHHHH")
_KINDS = {"image": 0, "clip": 1}
_SPLITS = {"train": 0, "val": 1}

NOISE_MAX = 0.1
# unit velocity per class for clips: right, left, down, up, down-right, up-left, down-left, up-right
DIRECTIONS = np.array([(0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (-1, -1), (1, -1), (-1, 1)], dtype=np.float64)


@dataclass(eq=False)
class DatasetSplit:
    """A labelled split. ``X`` is N x 3 x h x w (images) or N x 3 x T x h x w (clips), float32 in [0, 1]."""

    X: np.ndarray
    y: np.ndarray
    num_classes: int
    kind: str = "image"
    split: str = "train"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be 'image' or 'clip', got {self.kind!r}")
        if self.split not in _SPLITS:
            raise ValueError(f"split must be 'train' or 'val', got {self.split!r}")
        expected_ndim = 4 if self.kind == "image" else 5
        if self.X.ndim != expected_ndim:
            raise ValueError(f"{self.kind} split needs {expected_ndim}-d pixels, got shape {self.X.shape}")
        if len(self.X) != len(self.y):
            raise ValueError(f"{len(self.X)} examples but {len(self.y)} labels")

    def __len__(self) -> int:
        return len(self.y)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetSplit):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.split == other.split
            and self.num_classes == other.num_classes
            and self.X.dtype == other.X.dtype
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )

    @property
    def image_shape(self) -> tuple:
        return self.X.shape[1:]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)


# ---------------------------------------------------------------------------
# figure masks; dy, dx are offsets from the centre, s the radius


def _disk(dy, dx, s):
    return dy**2 + dx**2 < s**2


def _square(dy, dx, s):
    return np.maximum(abs(dy), abs(dx)) < 0.75 * s


def _triangle(dy, dx, s):
    return (dy < 0.8 * s) & (abs(dx) < (dy + 0.8 * s) * 0.6)


def _plus(dy, dx, s):
    return ((abs(dx) < 0.28 * s) & (abs(dy) < s)) | ((abs(dy) < 0.28 * s) & (abs(dx) < s))


def _ring(dy, dx, s):
    r2 = dy**2 + dx**2
    return (r2 < s**2) & (r2 > (0.55 * s) ** 2)


def _hbar(dy, dx, s):
    return (abs(dy) < 0.3 * s) & (abs(dx) < s)


def _vbar(dy, dx, s):
    return (abs(dx) < 0.3 * s) & (abs(dy) < s)


def _diag(dy, dx, s):
    return (abs(dx - dy) < 0.42 * s) & (dy**2 + dx**2 < s**2)


def _xcross(dy, dx, s):
    return _diag(dy, dx, s) | _antidiag(dy, dx, s)


def _hollow_square(dy, dx, s):
    m = np.maximum(abs(dy), abs(dx))
    return (m < 0.8 * s) & (m > 0.45 * s)


def _diamond(dy, dx, s):
    return abs(dy) + abs(dx) < s


def _antidiag(dy, dx, s):
    return (abs(dx + dy) < 0.42 * s) & (dy**2 + dx**2 < s**2)


def _inv_triangle(dy, dx, s):
    return _triangle(-dy, dx, s)


def _two_dots(dy, dx, s):
    r = 0.4 * s
    return ((dx - 0.55 * s) ** 2 + dy**2 < r**2) | ((dx + 0.55 * s) ** 2 + dy**2 < r**2)


def _ell(dy, dx, s):
    return ((abs(dx + 0.5 * s) < 0.28 * s) & (abs(dy) < 0.8 * s)) | (
        (abs(dy - 0.55 * s) < 0.28 * s) & (abs(dx) < 0.8 * s)
    )


def _half_disk(dy, dx, s):
    return (dy**2 + dx**2 < s**2) & (dy < 0.15 * s)


FIGURES = (
    _disk, _square, _triangle, _plus, _ring, _hbar, _vbar, _diag,
    _xcross, _hollow_square, _diamond, _antidiag, _inv_triangle, _two_dots, _ell, _half_disk,
)  # fmt: skip


def _check_geometry(num_classes, h, w, scale, max_classes):
    if not 2 <= num_classes <= max_classes:
        raise ValueError(f"num_classes must be in [2, {max_classes}], got {num_classes}")
    if h < 16 or w < 16:
        raise ValueError(f"canvas must be at least 16x16, got {h}x{w}")
    lo, hi = scale
    if not 0 < lo <= hi:
        raise ValueError(f"invalid scale range {scale}")
    if 2 * hi > 1.0:
        raise ValueError(f"figure radius {hi} of the canvas does not fit inside a {h}x{w} canvas")


def _balanced_labels(rng, n, num_classes):
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    return labels


def _colour(rng):
    c = rng.uniform(0.25, 1.0, size=3)
    c[rng.integers(3)] = rng.uniform(0.8, 1.0)
    return c


def _render_image(rng, label, h, w, scale):
    side = min(h, w)
    s = rng.uniform(*scale) * side
    cy = rng.uniform(s, h - s)
    cx = rng.uniform(s, w - s)
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    mask = FIGURES[label](yy - cy, xx - cx, s)
    img = rng.uniform(0.0, NOISE_MAX, size=(3, h, w))
    img[:, mask] = _colour(rng)[:, None]
    return img


def generate_shapes(
    seed: int,
    n_train: int = 4096,
    n_val: int = 1024,
    num_classes: int = 8,
    h: int = 32,
    w: int = 32,
    scale: tuple = (0.2, 0.35),
) -> tuple[DatasetSplit, DatasetSplit]:
    """Render a train and a val split of labelled figures.

    The output is a pure function of the arguments. Each split is exactly
    balanced up to one example per class.
    """
    _check_geometry(num_classes, h, w, scale, len(FIGURES))
    rng = np.random.default_rng(seed)
    splits = []
    for tag, n in (("train", n_train), ("val", n_val)):
        labels = _balanced_labels(rng, n, num_classes)
        X = np.empty((n, 3, h, w), dtype=np.float32)
        for i, lab in enumerate(labels):
            X[i] = _render_image(rng, lab, h, w, scale)
        splits.append(DatasetSplit(X, labels.astype(np.int64), num_classes, "image", tag))
    return splits[0], splits[1]


def _render_clip(rng, label, T, h, w, scale, speed):
    side = min(h, w)
    s = rng.uniform(*scale) * side
    fig = FIGURES[rng.integers(8)]
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    vy, vx = DIRECTIONS[label] * speed
    colour = _colour(rng)
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    clip = rng.uniform(0.0, NOISE_MAX, size=(3, T, h, w))
    for t in range(T):
        # periodic offsets: the figure wraps around the canvas edges
        dy = (yy - (cy + vy * t) + h / 2) % h - h / 2
        dx = (xx - (cx + vx * t) + w / 2) % w - w / 2
        clip[:, t, fig(dy, dx, s)] = colour[:, None]
    return clip


def generate_moving_shapes(
    seed: int,
    n_train: int = 1536,
    n_val: int = 384,
    num_classes: int = 6,
    T: int = 8,
    h: int = 32,
    w: int = 32,
    scale: tuple = (0.2, 0.35),
    speed: float = 2.0,
) -> tuple[DatasetSplit, DatasetSplit]:
    """Render clips whose label is the motion direction of a random figure.

    Starting positions are uniform on a wrapping canvas, so any single frame
    is distributed identically for every class. ``T=1`` therefore yields a
    static dataset with uninformative labels.
    """
    _check_geometry(num_classes, h, w, scale, len(DIRECTIONS))
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    rng = np.random.default_rng(seed)
    splits = []
    for tag, n in (("train", n_train), ("val", n_val)):
        labels = _balanced_labels(rng, n, num_classes)
        X = np.empty((n, 3, T, h, w), dtype=np.float32)
        for i, lab in enumerate(labels):
            X[i] = _render_clip(rng, lab, T, h, w, scale, speed)
        splits.append(DatasetSplit(X, labels.astype(np.int64), num_classes, "clip", tag))
    return splits[0], splits[1]


# ---------------------------------------------------------------------------
# AFDS format


def save_split(split: DatasetSplit, path) -> None:
    X = np.ascontiguousarray(split.X, dtype="<f4")
    if split.kind == "image":
        n, c, h, w = X.shape
        t = 1
    else:
        n, c, t, h, w = X.shape
    header = _HEADER.pack(MAGIC, VERSION, _KINDS[split.kind], _SPLITS[split.split], n, c, t, h, w, split.num_classes)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(X.tobytes())
        fh.write(np.asarray(split.y, dtype="<u2").tobytes())


def load_split(path) -> DatasetSplit:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError("not a dataset file", path)
    if len(raw) < _HEADER.size:
        raise FormatError("corrupt header", path)
    _, version, kind, split, n, c, t, h, w, num_classes = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise FormatError(f"version mismatch: file has {version}, reader supports {VERSION}", path)
    kinds = {v: k for k, v in _KINDS.items()}
    splits = {v: k for k, v in _SPLITS.items()}
    if kind not in kinds or split not in splits or min(c, t, h, w) == 0 or num_classes < 2:
        raise FormatError("corrupt header", path)
    n_pix = n * c * t * h * w
    expected = _HEADER.size + 4 * n_pix + 2 * n
    if len(raw) < expected:
        raise FormatError(f"truncated payload: expected {expected} bytes, found {len(raw)}", path)
    if len(raw) > expected:
        raise FormatError(f"corrupt header: {len(raw) - expected} trailing bytes", path)
    X = np.frombuffer(raw, dtype="<f4", count=n_pix, offset=_HEADER.size).astype(np.float32)
    shape = (n, c, h, w) if kinds[kind] == "image" else (n, c, t, h, w)
    y = np.frombuffer(raw, dtype="<u2", count=n, offset=_HEADER.size + 4 * n_pix).astype(np.int64)
    if n and y.max() >= num_classes:
        raise FormatError("corrupt header: label exceeds declared class count", path)
    return DatasetSplit(X.reshape(shape), y, num_classes, kinds[kind], splits[split])
