"""Universal adversarial framings: parameters, materialization, application, storage.

A framing of width ``W`` around an ``h_in x w_in`` image owns every pixel of
the ``(h_in + 2W) x (w_in + 2W)`` canvas outside the interior rectangle.
Positions are enumerated by a row-major scan of that canvas; each position
carries ``channels`` unconstrained values (``theta_hat``) that a sigmoid maps
into pixel intensities.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .exceptions import FormatError, GeometryError

PROVENANCES = ("trained", "random", "black")


def border_pixel_count(width: int, h_in: int, w_in: int) -> int:
    return 2 * width * (h_in + w_in + 2 * width)


@lru_cache(maxsize=64)
def border_layout(width: int, h_in: int, w_in: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of border positions, in canonical order."""
    mask = np.ones((h_in + 2 * width, w_in + 2 * width), dtype=bool)
    mask[width : width + h_in, width : width + w_in] = False
    rows, cols = np.nonzero(mask)
    rows.flags.writeable = False
    cols.flags.writeable = False
    return rows, cols


@dataclass(eq=False)
class FramingParams:
    """Unconstrained framing parameters plus the geometry they belong to.

    ``target`` is None for an untargeted framing. ``strategy`` records the
    composition strategy a trained framing was optimized under.
    """

    theta_hat: np.ndarray
    width: int
    h_in: int
    w_in: int
    target: Optional[int] = None
    provenance: str = "trained"
    strategy: Optional[str] = None
    channels: int = 3

    def __post_init__(self):
        if self.width < 1:
            raise GeometryError(f"framing width must be >= 1, got {self.width}")
        if self.h_in < 1 or self.w_in < 1:
            raise GeometryError(f"interior must be at least 1x1, got {self.h_in}x{self.w_in}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}, got {self.provenance!r}")
        self.theta_hat = np.asarray(self.theta_hat, dtype=np.float64).reshape(-1)
        if self.theta_hat.size != self.n_values:
            raise GeometryError(
                f"geometry mismatch: {self.theta_hat.size} parameters, expected {self.n_values} "
                f"for W={self.width}, interior {self.h_in}x{self.w_in}, {self.channels} channel(s)"
            )

    @property
    def n_pixels(self) -> int:
        return border_pixel_count(self.width, self.h_in, self.w_in)

    @property
    def n_values(self) -> int:
        return self.channels * self.n_pixels

    @property
    def outer_shape(self) -> tuple[int, int]:
        return self.h_in + 2 * self.width, self.w_in + 2 * self.width

    @property
    def mode(self) -> str:
        return "untargeted" if self.target is None else f"targeted:{self.target}"

    def layout(self):
        return border_layout(self.width, self.h_in, self.w_in)

    def border_tensor(self, theta: Optional[T.Tensor] = None) -> T.Tensor:
        """Materialized border as a P x channels tensor, differentiable w.r.t. ``theta`` when given."""
        if self.provenance == "black":
            return T.Tensor(np.zeros((self.n_pixels, self.channels)))
        if theta is None:
            theta = T.Tensor(self.theta_hat)
        return T.reshape(T.sigmoid(theta), (self.n_pixels, self.channels))

    def copy(self) -> "FramingParams":
        return FramingParams(
            self.theta_hat.copy(), self.width, self.h_in, self.w_in,
            self.target, self.provenance, self.strategy, self.channels,
        )  # fmt: skip


def materialize(fp: FramingParams) -> np.ndarray:
    """Border pixel values in canonical order, shape P x 3."""
    with T.no_grad():
        vals = fp.border_tensor().data
    if fp.channels == 1:
        vals = np.repeat(vals, 3, axis=1)
    return vals


def _check_interior(shape, fp: FramingParams):
    h, w = shape[-2:]
    if (h, w) != (fp.h_in, fp.w_in):
        raise GeometryError(f"framing expects {fp.h_in}x{fp.w_in} inputs, got {h}x{w}")


def frame_batch(X: np.ndarray, fp: FramingParams) -> np.ndarray:
    """Frame a batch (N x 3 x h x w or N x 3 x T x h x w) with one framing."""
    _check_interior(X.shape, fp)
    rows, cols = fp.layout()
    with T.no_grad():
        return T.frame(T.Tensor(X), fp.border_tensor(), rows, cols, fp.width).data


def apply_framing(image: np.ndarray, fp: FramingParams) -> np.ndarray:
    """Surround a 3 x h x w image with the framing; output is 3 x (h+2W) x (w+2W)."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise GeometryError(f"apply_framing expects a 3 x h x w image, got shape {image.shape}")
    return frame_batch(image[None], fp)[0]


def apply_framing_clip(clip: np.ndarray, fp: FramingParams) -> np.ndarray:
    """Frame every frame of a 3 x T x h x w clip with the same border."""
    clip = np.asarray(clip)
    if clip.ndim != 4:
        raise GeometryError(f"apply_framing_clip expects a 3 x T x h x w clip, got shape {clip.shape}")
    return frame_batch(clip[None], fp)[0]


def baseline_framing(kind: str, width: int, h_in: int, w_in: int, seed: int = 0, channels: int = 3) -> FramingParams:
    """Untrained reference framing: ``'random'`` (uniform noise) or ``'black'``."""
    n = channels * border_pixel_count(width, h_in, w_in)
    if kind == "black":
        return FramingParams(np.zeros(n), width, h_in, w_in, provenance="black", channels=channels)
    if kind == "random":
        rng = np.random.default_rng(seed)
        u = rng.uniform(np.finfo(np.float64).tiny, 1.0, size=n)
        theta = np.log(u) - np.log1p(-u)
        return FramingParams(theta, width, h_in, w_in, provenance="random", channels=channels)
    raise ValueError(f"unknown baseline kind {kind!r}; expected 'random' or 'black'")


# ---------------------------------------------------------------------------
# AFFR files

FRAMING_MAGIC = b"AFFR"
FRAMING_VERSION = 1
_FR_HEADER = struct.Struct("<4sHHHHBHBBBI")
_STRATEGY_CODES = {None: 0, "vanilla": 1, "frame-and-resize": 2, "resize-and-frame": 3, "occlude": 4}


def save_framing(fp: FramingParams, path) -> None:
    header = _FR_HEADER.pack(
        FRAMING_MAGIC, FRAMING_VERSION, fp.width, fp.h_in, fp.w_in,
        0 if fp.target is None else 1, 0 if fp.target is None else fp.target,
        PROVENANCES.index(fp.provenance), _STRATEGY_CODES[fp.strategy], fp.channels, fp.theta_hat.size,
    )  # fmt: skip
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(fp.theta_hat, dtype="<f8").tobytes())


def load_framing(path) -> FramingParams:
    raw = Path(path).read_bytes()
    if raw[:4] != FRAMING_MAGIC:
        raise FormatError("not a framing file", path)
    if len(raw) < _FR_HEADER.size:
        raise FormatError("corrupt header", path)
    _, version, width, h_in, w_in, mode, target, prov, strat, channels, n = _FR_HEADER.unpack_from(raw)
    if version != FRAMING_VERSION:
        raise FormatError(f"version mismatch: file has {version}, reader supports {FRAMING_VERSION}", path)
    codes = {v: k for k, v in _STRATEGY_CODES.items()}
    if mode > 1 or prov >= len(PROVENANCES) or strat not in codes or channels not in (1, 3) or width == 0:
        raise FormatError("corrupt header", path)
    if n != channels * border_pixel_count(width, h_in, w_in):
        raise FormatError(f"geometry mismatch: {n} values declared for W={width}, interior {h_in}x{w_in}", path)
    got = len(raw) - _FR_HEADER.size
    if got < 8 * n:
        raise FormatError(f"truncated payload: expected {8 * n} bytes of parameters, found {got}", path)
    if got > 8 * n:
        raise FormatError(f"trailing data: {got - 8 * n} bytes after the parameters", path)
    theta = np.frombuffer(raw, dtype="<f8", offset=_FR_HEADER.size).astype(np.float64)
    return FramingParams(
        theta, width, h_in, w_in, target if mode else None, PROVENANCES[prov], codes[strat], channels
    )
