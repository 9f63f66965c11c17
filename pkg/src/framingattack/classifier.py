"""Victim classifiers: small all-convolutional nets for images and clips.

``CnnClassifier`` follows the scikit-learn estimator protocol (``fit``,
``predict``, ``predict_proba``, ``score``, ``get_params``). The underlying
:class:`ConvNet` is spatial-size agnostic thanks to global average pooling,
which is what lets a framed (larger) input be classified unchanged.
"""

from __future__ import annotations

import logging
import struct
import zlib
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from ._validation import check_batch, check_labels
from .exceptions import DivergenceError, FormatError
from .optim import AdamState, StepDecay, adam_step

logger = logging.getLogger(__name__)

DEFAULT_WIDTHS = (16, 32, 64, 64)
DEFAULT_STRIDES = (1, 2, 1, 2)
# 3-D convs cost ~T times more, so the clip model is narrower and strides early
CLIP_WIDTHS = (8, 16, 32, 32)
CLIP_STRIDES = (2, 1, 2, 1)


def default_architecture(ndim: int) -> tuple[tuple, tuple]:
    return (DEFAULT_WIDTHS, DEFAULT_STRIDES) if ndim == 2 else (CLIP_WIDTHS, CLIP_STRIDES)


class ConvNet:
    """conv3x3-relu blocks, global average pool, linear head.

    ``ndim`` is 2 for N x C x H x W images and 3 for N x C x T x H x W clips.
    3-D blocks never stride along time.
    """

    def __init__(self, in_channels, num_classes, widths=DEFAULT_WIDTHS, strides=DEFAULT_STRIDES, ndim=2, seed=0):
        if ndim not in (2, 3):
            raise ValueError(f"ndim must be 2 or 3, got {ndim}")
        if len(widths) != len(strides) or not widths:
            raise ValueError("widths and strides must be non-empty and of equal length")
        self.in_channels = int(in_channels)
        self.num_classes = int(num_classes)
        self.widths = tuple(int(w) for w in widths)
        self.strides = tuple(int(s) for s in strides)
        self.ndim = ndim
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        c_in = self.in_channels
        for i, c_out in enumerate(self.widths):
            fan_in = c_in * 3**ndim
            bound = 1.0 / np.sqrt(fan_in)
            self.params[f"conv{i}.weight"] = rng.uniform(-bound, bound, (c_out, c_in) + (3,) * ndim).astype(np.float32)
            self.params[f"conv{i}.bias"] = np.zeros(c_out, dtype=np.float32)
            c_in = c_out
        bound = 1.0 / np.sqrt(c_in)
        self.params["fc.weight"] = rng.uniform(-bound, bound, (self.num_classes, c_in)).astype(np.float32)
        self.params["fc.bias"] = np.zeros(self.num_classes, dtype=np.float32)

    @property
    def kind(self) -> str:
        return "image" if self.ndim == 2 else "clip"

    def _stride(self, s):
        return s if self.ndim == 2 else (1, s, s)

    def forward(self, x: T.Tensor, trainable: bool = False, return_features: bool = False):
        """Logits for batch ``x``.

        With ``trainable`` the parameters are wrapped as grad-requiring leaves
        and returned alongside the logits so the caller can read ``.grad``.
        ``return_features`` also returns the last conv block's post-ReLU map.
        """
        if x.ndim != self.ndim + 2:
            raise T.ShapeError(f"{self.kind} model expects a {self.ndim + 2}-d batch, got shape {x.shape}")
        if x.shape[1] != self.in_channels:
            raise T.ShapeError(f"model expects {self.in_channels} input channels, got {x.shape[1]}")
        leaves = {k: T.Tensor(v, requires_grad=trainable) for k, v in self.params.items()}
        conv = T.conv2d if self.ndim == 2 else T.conv3d
        h = x
        for i, s in enumerate(self.strides):
            h = T.relu(conv(h, leaves[f"conv{i}.weight"], leaves[f"conv{i}.bias"], stride=self._stride(s), padding=1))
        features = h
        logits = T.linear(T.global_avg_pool(h), leaves["fc.weight"], leaves["fc.bias"])
        out = (logits,)
        if trainable:
            out += (leaves,)
        if return_features:
            out += (features,)
        return out[0] if len(out) == 1 else out

    def logits(self, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
        rows = []
        with T.no_grad():
            for start in range(0, len(X), batch_size):
                rows.append(self.forward(T.Tensor(X[start : start + batch_size])).data)
        return np.concatenate(rows) if rows else np.zeros((0, self.num_classes), dtype=np.float32)

    def state_equal(self, other: "ConvNet") -> bool:
        return self.params.keys() == other.params.keys() and all(
            np.array_equal(self.params[k], other.params[k]) for k in self.params
        )


class CnnClassifier(ClassifierMixin, BaseEstimator):
    """Convolutional classifier trained with Adam and step learning-rate decay.

    Parameters
    ----------
    widths, strides : tuple of int or None
        Output channels and spatial stride of each conv block. None picks
        the defaults for the input kind seen by ``fit`` (images or clips).
    epochs : int
        Passes over the training data; must be at least 1.
    batch_size : int
    lr : float
        Initial Adam learning rate.
    decay, decay_every : float, int
        Multiply the learning rate by ``decay`` every ``decay_every`` epochs.
    seed : int
        Drives weight init and minibatch order.
    """

    def __init__(
        self,
        widths=None,
        strides=None,
        epochs=15,
        batch_size=64,
        lr=1e-3,
        decay=0.3,
        decay_every=5,
        seed=0,
        verbose=False,
    ):
        self.widths = widths
        self.strides = strides
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.decay = decay
        self.decay_every = decay_every
        self.seed = seed
        self.verbose = verbose

    def fit(self, X, y, num_classes=None, X_val=None, y_val=None):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        X = check_batch(X)
        y = check_labels(y, len(X))
        n_classes = int(num_classes) if num_classes is not None else int(y.max()) + 1
        self.classes_ = np.arange(n_classes)
        widths, strides = default_architecture(X.ndim - 2)
        widths = widths if self.widths is None else self.widths
        strides = strides if self.strides is None else self.strides
        net = ConvNet(X.shape[1], n_classes, widths, strides, ndim=X.ndim - 2, seed=self.seed)
        state = AdamState(lr=self.lr)
        schedule = StepDecay.every(self.lr, self.decay, self.decay_every, self.epochs)
        rng = np.random.default_rng(self.seed + 1)
        self.history_ = []
        for epoch in range(self.epochs):
            state.lr = schedule.lr_at(epoch)
            order = rng.permutation(len(X))
            total, correct = 0.0, 0
            for start in range(0, len(X), self.batch_size):
                idx = order[start : start + self.batch_size]
                logits, leaves = net.forward(T.Tensor(X[idx]), trainable=True)
                loss = T.softmax_cross_entropy(logits, y[idx])
                if not np.isfinite(loss.data):
                    raise DivergenceError(f"loss became non-finite in epoch {epoch}")
                T.backward(loss)
                adam_step(net.params, {k: t.grad for k, t in leaves.items()}, state)
                total += float(loss.data) * len(idx)
                correct += int((logits.data.argmax(axis=1) == y[idx]).sum())
            record = {"epoch": epoch, "lr": state.lr, "loss": total / len(X), "accuracy": correct / len(X)}
            if X_val is not None:
                record["val_accuracy"] = float(np.mean(net.logits(X_val).argmax(axis=1) == y_val))
            self.history_.append(record)
            if self.verbose:
                logger.info("epoch %d %s", epoch, record)
        self.network_ = net
        return self

    @classmethod
    def from_network(cls, net: ConvNet) -> "CnnClassifier":
        clf = cls(widths=net.widths, strides=net.strides)
        clf.network_ = net
        clf.classes_ = np.arange(net.num_classes)
        clf.history_ = []
        return clf

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        return self.network_.logits(check_batch(X))

    def predict_proba(self, X):
        return T.softmax(self.decision_function(X).astype(np.float64))

    def predict(self, X):
        # argmax breaks ties toward the lowest class id
        return self.decision_function(X).argmax(axis=1)


def evaluate_accuracy(model, X, y, preprocess=None, batch_size: int = 256) -> float:
    """Fraction of examples whose argmax prediction equals the label.

    ``preprocess`` maps a batch array to the array the model actually sees
    (e.g. a framing composition).
    """
    net = model.network_ if isinstance(model, CnnClassifier) else model
    y = np.asarray(y)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty split")
    correct = 0
    for start in range(0, len(y), batch_size):
        xb = X[start : start + batch_size]
        if preprocess is not None:
            xb = preprocess(xb)
        correct += int((net.logits(xb, batch_size).argmax(axis=1) == y[start : start + batch_size]).sum())
    return correct / len(y)


# ---------------------------------------------------------------------------
# AFCK checkpoints

CKPT_MAGIC = b"AFCK"
CKPT_VERSION = 1
_CK_HEADER = struct.Struct("<4sHBBHH")
_CK_BLOCK = struct.Struct("<HB")
_CK_TRAILER = struct.Struct("<II")


def save_checkpoint(model, path) -> None:
    net = model.network_ if isinstance(model, CnnClassifier) else model
    payload = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in net.params.values())
    n_values = sum(p.size for p in net.params.values())
    with open(path, "wb") as fh:
        fh.write(_CK_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, net.ndim, len(net.widths), net.in_channels, net.num_classes))
        for w, s in zip(net.widths, net.strides):
            fh.write(_CK_BLOCK.pack(w, s))
        fh.write(_CK_TRAILER.pack(n_values, zlib.crc32(payload)))
        fh.write(payload)


def load_checkpoint(path, kind: str | None = None) -> CnnClassifier:
    """Read an AFCK file. ``kind`` ('image' or 'clip') asserts the model type."""
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise FormatError("not a checkpoint file", path)
    if len(raw) < _CK_HEADER.size:
        raise FormatError("corrupt header", path)
    _, version, ndim, n_blocks, in_ch, n_classes = _CK_HEADER.unpack_from(raw)
    if version != CKPT_VERSION:
        raise FormatError(f"version mismatch: file has {version}, reader supports {CKPT_VERSION}", path)
    if ndim not in (2, 3) or n_blocks == 0:
        raise FormatError("corrupt header", path)
    file_kind = "image" if ndim == 2 else "clip"
    if kind is not None and kind != file_kind:
        raise FormatError(f"kind mismatch: checkpoint holds an {file_kind} model, {kind} model requested", path)
    off = _CK_HEADER.size
    if len(raw) < off + n_blocks * _CK_BLOCK.size + _CK_TRAILER.size:
        raise FormatError("truncated payload", path)
    widths, strides = [], []
    for _ in range(n_blocks):
        w, s = _CK_BLOCK.unpack_from(raw, off)
        widths.append(w)
        strides.append(s)
        off += _CK_BLOCK.size
    n_values, crc = _CK_TRAILER.unpack_from(raw, off)
    off += _CK_TRAILER.size
    payload = raw[off:]
    if len(payload) != 4 * n_values:
        raise FormatError(f"truncated payload: expected {4 * n_values} parameter bytes, found {len(payload)}", path)
    if zlib.crc32(payload) != crc:
        raise FormatError("checksum mismatch in parameter block", path)
    net = ConvNet(in_ch, n_classes, widths, strides, ndim=ndim)
    if sum(p.size for p in net.params.values()) != n_values:
        raise FormatError("corrupt header: parameter count does not match layer spec", path)
    flat = np.frombuffer(payload, dtype="<f4")
    pos = 0
    for k, p in net.params.items():
        net.params[k] = flat[pos : pos + p.size].astype(np.float32).reshape(p.shape)
        pos += p.size
    return CnnClassifier.from_network(net)
