"""How a framing and an image are combined before reaching the classifier.

=================  ===========================================  =============
strategy           operation                                    output size
=================  ===========================================  =============
vanilla            frame the image                              (h+2W)x(w+2W)
frame-and-resize   frame, then resize back                      h x w
resize-and-frame   shrink to (h-2W)x(w-2W), then frame          h x w
occlude            frame the image's own interior crop          h x w
=================  ===========================================  =============

The first two share framing geometry (interior h x w), as do the last two
(interior (h-2W) x (w-2W)); a trained framing may only be reused within its
family.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import tensor as T
from .exceptions import GeometryError
from .framing import FramingParams


class Strategy(str, Enum):
    VANILLA = "vanilla"
    FRAME_AND_RESIZE = "frame-and-resize"
    RESIZE_AND_FRAME = "resize-and-frame"
    OCCLUDE = "occlude"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("_", "-"))
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown strategy {value!r}; choose from {names}") from None

    @property
    def shrinks_interior(self) -> bool:
        return self in (Strategy.RESIZE_AND_FRAME, Strategy.OCCLUDE)

    def framing_interior(self, h: int, w: int, width: int) -> tuple[int, int]:
        """Interior dims a framing needs to be composed with an h x w image."""
        if self.shrinks_interior:
            if h - 2 * width < 1 or w - 2 * width < 1:
                raise GeometryError(f"{self.value}: W={width} leaves no interior in a {h}x{w} image")
            return h - 2 * width, w - 2 * width
        return h, w

    def output_shape(self, h: int, w: int, width: int) -> tuple[int, int]:
        if self is Strategy.VANILLA:
            return h + 2 * width, w + 2 * width
        return h, w


def bilinear_resize(image: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Resize the last two axes with half-pixel-centred bilinear interpolation."""
    with T.no_grad():
        return T.resize_bilinear(T.Tensor(np.asarray(image)), new_h, new_w).data


def check_compatible(fp: FramingParams, strategy, h: int, w: int) -> Strategy:
    strategy = Strategy.parse(strategy)
    expected = strategy.framing_interior(h, w, fp.width)
    if (fp.h_in, fp.w_in) != expected:
        raise GeometryError(
            f"{strategy.value} on {h}x{w} inputs needs a framing with interior "
            f"{expected[0]}x{expected[1]}, got {fp.h_in}x{fp.w_in}"
        )
    if fp.strategy is not None and Strategy.parse(fp.strategy).shrinks_interior != strategy.shrinks_interior:
        raise GeometryError(f"framing trained under {fp.strategy} cannot be reused with {strategy.value}")
    return strategy


def compose_tensor(X: T.Tensor, border: T.Tensor, fp: FramingParams, strategy) -> T.Tensor:
    """Differentiable composition of a batch with a materialized border (P x channels)."""
    h, w = X.shape[-2:]
    strategy = check_compatible(fp, strategy, h, w)
    rows, cols = fp.layout()
    W = fp.width
    if strategy is Strategy.VANILLA:
        return T.frame(X, border, rows, cols, W)
    if strategy is Strategy.FRAME_AND_RESIZE:
        return T.resize_bilinear(T.frame(X, border, rows, cols, W), h, w)
    if strategy is Strategy.RESIZE_AND_FRAME:
        return T.frame(T.resize_bilinear(X, h - 2 * W, w - 2 * W), border, rows, cols, W)
    # occlude: framing the untouched interior crop overwrites exactly the outer W pixels
    inner = T.crop(X, W, W, h - 2 * W, w - 2 * W)
    return T.frame(inner, border, rows, cols, W)


def compose_batch(X: np.ndarray, fp: FramingParams, strategy) -> np.ndarray:
    with T.no_grad():
        return compose_tensor(T.Tensor(np.asarray(X)), fp.border_tensor(), fp, strategy).data


def compose(image: np.ndarray, fp: FramingParams, strategy) -> np.ndarray:
    """Compose one image (3 x h x w) or clip (3 x T x h x w) with a framing."""
    image = np.asarray(image)
    if image.ndim not in (3, 4):
        raise GeometryError(f"compose expects one image or clip, got shape {image.shape}")
    return compose_batch(image[None], fp, strategy)[0]
