"""Dense tensors with tape-based reverse-mode differentiation.

Only the operations needed by the victim classifiers and by the framing
attack are provided. Every op records a node on the global tape when any of
its inputs requires a gradient; :func:`backward` replays the tape in reverse
and then clears it.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "Tensor",
    "ShapeError",
    "backward",
    "no_grad",
    "conv2d",
    "conv3d",
    "relu",
    "crop",
    "reshape",
    "max_pool2d",
    "global_avg_pool",
    "linear",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
    "tsum",
    "mean",
    "scale",
    "frame",
    "resize_bilinear",
    "numerical_gradient",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """An n-dimensional array that may carry a gradient.

    ``data`` is a numpy array (float32 for training, float64 for gradient
    checks). ``grad`` is populated by :func:`backward` on leaves that have
    ``requires_grad`` set.
    """

    __slots__ = ("data", "grad", "requires_grad", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._node: Optional[_Node] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class _Tape:
    def __init__(self):
        self.nodes: list[_Node] = []
        self.enabled = True

    def clear(self):
        for node in self.nodes:
            node.output._node = None
        self.nodes = []


_TAPE = _Tape()


class no_grad:
    """Context manager that stops ops from being recorded."""

    def __enter__(self):
        self._prev = _TAPE.enabled
        _TAPE.enabled = False
        return self

    def __exit__(self, *exc):
        _TAPE.enabled = self._prev
        return False


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(inputs: Sequence[Tensor], out_data: np.ndarray, backward_fn: Callable) -> Tensor:
    """Wrap ``out_data`` and push a tape node if anything upstream needs a gradient.

    ``backward_fn(g)`` must return one gradient (or None) per input.
    """
    if not np.isfinite(out_data).all():
        raise FloatingPointError("operation produced non-finite values")
    needs = _TAPE.enabled and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        node = _Node(tuple(inputs), out, backward_fn)
        out._node = node
        _TAPE.nodes.append(node)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf that requires it, then clear the tape.

    Gradients accumulate into existing ``.grad`` arrays, so callers reset
    leaves between steps.
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        _TAPE.clear()
        raise ValueError("loss is not connected to any tensor that requires grad")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    try:
        for node in reversed(_TAPE.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._node is None:
                    # leaf
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
                else:
                    key = id(t)
                    grads[key] = gi if key not in grads else grads[key] + gi
        if loss._node is None:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
    finally:
        _TAPE.clear()


# ---------------------------------------------------------------------------
# elementwise and reductions


def reshape(t: Tensor, shape) -> Tensor:
    src = t.shape
    return _record((t,), t.data.reshape(shape), lambda g: (g.reshape(src),))


def crop(t: Tensor, top: int, left: int, h: int, w: int) -> Tensor:
    """Window of the last two axes."""
    shape = t.shape
    out = t.data[..., top : top + h, left : left + w]

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., top : top + h, left : left + w] = g
        return (full,)

    return _record((t,), np.ascontiguousarray(out), bw)


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0
    out = np.where(mask, t.data, 0).astype(t.dtype, copy=False)
    return _record((t,), out, lambda g: (g * mask,))


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _record((t,), out, lambda g: (g * out * (1.0 - out),))


def tsum(t: Tensor) -> Tensor:
    shape, dtype = t.shape, t.dtype
    return _record((t,), np.asarray(t.data.sum(), dtype=dtype), lambda g: (np.broadcast_to(g, shape).astype(dtype),))


def mean(t: Tensor) -> Tensor:
    n = t.data.size
    shape, dtype = t.shape, t.dtype
    out = np.asarray(t.data.mean(), dtype=dtype)
    return _record((t,), out, lambda g: (np.full(shape, g / n, dtype=dtype),))


def scale(t: Tensor, factor: float) -> Tensor:
    """Multiply by a Python constant."""
    return _record((t,), t.data * t.dtype.type(factor), lambda g: (g * t.dtype.type(factor),))


# ---------------------------------------------------------------------------
# dense layers


def linear(t: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``t @ weight.T + bias`` for ``t`` of shape N x in, ``weight`` out x in."""
    if t.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError(f"linear expects N x in, out x in, out; got {t.shape}, {weight.shape}, {bias.shape}")
    if t.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input features {t.shape[1]} != weight in_features {weight.shape[1]}")
    if bias.shape[0] != weight.shape[0]:
        raise ShapeError(f"linear: bias length {bias.shape[0]} != out_features {weight.shape[0]}")
    x, w = t.data, weight.data
    out = x @ w.T + bias.data

    def bw(g):
        gx = g @ w if t.requires_grad else None
        gw = g.T @ x if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return _record((t, weight, bias), out, bw)


def _conv_nd(x: Tensor, weight: Tensor, bias: Tensor, stride, padding: int, nd: int, name: str) -> Tensor:
    if x.ndim != nd + 2:
        raise ShapeError(f"{name}: input must have {nd + 2} dims, got shape {x.shape}")
    if weight.ndim != nd + 2:
        raise ShapeError(f"{name}: weight must have {nd + 2} dims, got shape {weight.shape}")
    strides = (stride,) * nd if np.isscalar(stride) else tuple(stride)
    if len(strides) != nd or min(strides) < 1 or padding < 0:
        raise ValueError(f"{name}: stride must be >= 1 per axis and padding >= 0, got {stride}, {padding}")
    n, c = x.shape[:2]
    o, ci = weight.shape[:2]
    if c != ci:
        raise ShapeError(f"{name}: input channels (dim 1) = {c} but weight expects {ci}")
    if bias.shape != (o,):
        raise ShapeError(f"{name}: bias shape {bias.shape} != ({o},) (output channels)")
    ks = weight.shape[2:]
    spatial = x.shape[2:]
    out_sp = []
    for axis, (s, k, st) in enumerate(zip(spatial, ks, strides)):
        span = s + 2 * padding - k
        if span < 0:
            raise ShapeError(f"{name}: spatial dim {axis + 2} of size {s} (padded {s + 2 * padding}) is smaller than kernel {k}")
        # floor division, as in every mainstream framework
        out_sp.append(span // st + 1)

    xp = x.data
    if padding:
        xp = np.pad(xp, [(0, 0), (0, 0)] + [(padding, padding)] * nd)
    offsets = list(np.ndindex(*ks))

    def window(offs):
        return tuple(slice(off, off + st * (m - 1) + 1, st) for off, m, st in zip(offs, out_sp, strides))

    # im2col as C x K x N x out: one strided block copy per kernel offset
    cols = np.empty((c, len(offsets), n, *out_sp), dtype=np.result_type(xp, weight.data))
    xt = xp.swapaxes(0, 1)
    for k, offs in enumerate(offsets):
        cols[:, k] = xt[(slice(None), slice(None)) + window(offs)]
    cols2 = cols.reshape(c * len(offsets), -1)
    w2 = weight.data.reshape(o, -1)
    out = (w2 @ cols2).reshape((o, n, *out_sp))
    out = np.ascontiguousarray(out.swapaxes(0, 1)) + bias.data.reshape((1, o) + (1,) * nd)

    def bw(g):
        g2 = np.ascontiguousarray(g.swapaxes(0, 1)).reshape(o, -1)
        gw = (g2 @ cols2.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=1) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape((c, len(offsets), n, *out_sp))
            gxt = np.zeros((c, n) + xp.shape[2:], dtype=g.dtype)
            for k, offs in enumerate(offsets):
                gxt[(slice(None), slice(None)) + window(offs)] += gcols[:, k]
            if padding:
                gxt = gxt[(slice(None), slice(None)) + tuple(slice(padding, padding + s) for s in spatial)]
            gx = np.ascontiguousarray(gxt.swapaxes(0, 1))
        return gx, gw, gb

    return _record((x, weight, bias), out, bw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride=1, padding: int = 0) -> Tensor:
    """Cross-correlation of an N x C x H x W batch with an O x C x K x K kernel."""
    return _conv_nd(x, weight, bias, stride, padding, 2, "conv2d")


def conv3d(x: Tensor, weight: Tensor, bias: Tensor, stride=1, padding: int = 0) -> Tensor:
    """Cross-correlation of an N x C x T x H x W batch with an O x C x K x K x K kernel.

    ``stride`` may be a (temporal, height, width) triple.
    """
    return _conv_nd(x, weight, bias, stride, padding, 3, "conv3d")


def max_pool2d(t: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k max pooling; trailing rows/cols that do not fill a window are dropped."""
    if t.ndim != 4:
        raise ShapeError(f"max_pool2d expects N x C x H x W, got {t.shape}")
    n, c, h, w = t.shape
    ho, wo = h // k, w // k
    if ho == 0 or wo == 0:
        raise ShapeError(f"max_pool2d: window {k} larger than input {h}x{w}")
    x = t.data[:, :, : ho * k, : wo * k].reshape(n, c, ho, k, wo, k)
    x = x.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    idx = x.argmax(axis=-1)  # first max wins ties
    out = np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gx = np.zeros((n, c, ho, wo, k * k), dtype=g.dtype)
        np.put_along_axis(gx, idx[..., None], g[..., None], axis=-1)
        gx = gx.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
        full = np.zeros((n, c, h, w), dtype=g.dtype)
        full[:, :, : ho * k, : wo * k] = gx
        return (full,)

    return _record((t,), out, bw)


def global_avg_pool(t: Tensor) -> Tensor:
    """Average over every axis after the channel axis: N x C x ... -> N x C."""
    if t.ndim < 3:
        raise ShapeError(f"global_avg_pool expects at least 3 dims, got {t.shape}")
    axes = tuple(range(2, t.ndim))
    count = int(np.prod(t.shape[2:]))
    shape = t.shape
    out = t.data.mean(axis=axes)

    def bw(g):
        g = g.reshape(g.shape + (1,) * len(axes)) / g.dtype.type(count)
        return (np.broadcast_to(g, shape).copy(),)

    return _record((t,), out, bw)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax on a plain array (max-subtracted)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be N x C, got {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError(f"got {labels.shape[0]} labels for {n} rows of logits")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c}): min {labels.min()}, max {labels.max()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.asarray((logsumexp - z[rows, labels]).mean(), dtype=logits.dtype)
    probs = np.exp(z - logsumexp[:, None])

    def bw(g):
        d = probs.copy()
        d[rows, labels] -= 1
        return (d * (g / n),)

    return _record((logits,), loss, bw)


# ---------------------------------------------------------------------------
# ops used by the framing attack


def frame(images: Tensor, border: Tensor, rows: np.ndarray, cols: np.ndarray, width: int) -> Tensor:
    """Surround every image with the same border.

    ``images`` is N x 3 x h x w or N x 3 x T x h x w. ``border`` is P x 3
    (or P x 1, shared by all channels) and is scattered to positions
    ``(rows[p], cols[p])`` of the enlarged (h + 2W) x (w + 2W) canvas; for
    clips the same border is written into every frame. The interior is copied, so original pixels are untouched bit for bit.
    """
    x = images.data
    if x.ndim not in (4, 5):
        raise ShapeError(f"frame expects a 4-d or 5-d batch, got {x.shape}")
    if border.ndim != 2 or border.shape[1] not in (1, x.shape[1]):
        raise ShapeError(f"border shape {border.shape} incompatible with {x.shape[1]} channels")
    if border.shape[0] != rows.shape[0]:
        raise ShapeError(f"border has {border.shape[0]} positions, layout has {rows.shape[0]}")
    h, w = x.shape[-2:]
    lead = x.shape[:-2]
    canvas = np.empty(lead + (h + 2 * width, w + 2 * width), dtype=x.dtype)
    canvas[..., width : width + h, width : width + w] = x
    bvals = border.data.T.astype(x.dtype, copy=False)  # 3 x P
    if x.ndim == 5:
        bvals = bvals[:, None, :]
    canvas[..., rows, cols] = bvals

    def bw(g):
        gi = g[..., width : width + h, width : width + w] if images.requires_grad else None
        gb = None
        if border.requires_grad:
            sel = g[..., rows, cols]  # N x 3 [x T] x P
            red = tuple(a for a in range(sel.ndim - 1) if a != 1)
            gb = sel.sum(axis=red).T.astype(border.dtype)
            if border.shape[1] == 1:
                gb = gb.sum(axis=1, keepdims=True)
        return gi, gb

    return _record((images, border), canvas, bw)


def _bilinear_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """n_out x n_in interpolation weights, half-pixel centres, edge-clamped."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    if n_in == n_out:
        np.fill_diagonal(m, 1.0)
        return m.astype(dtype)
    scale_ = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale_ - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m.astype(dtype)


def resize_bilinear(t: Tensor, new_h: int, new_w: int) -> Tensor:
    """Separable bilinear resize of the last two axes."""
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target size must be positive, got {new_h}x{new_w}")
    h, w = t.shape[-2:]
    ry = _bilinear_matrix(h, new_h, t.dtype)
    rx = _bilinear_matrix(w, new_w, t.dtype)
    out = np.matmul(np.matmul(ry, t.data), rx.T)

    def bw(g):
        return (np.matmul(np.matmul(ry.T, g), rx),)

    return _record((t,), out, bw)


# ---------------------------------------------------------------------------


def numerical_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (modified in place, then restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad
