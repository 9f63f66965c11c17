"""Training a universal adversarial framing against a frozen classifier."""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from ._validation import check_batch, check_labels
from .classifier import CnnClassifier, ConvNet
from .composition import Strategy, compose_batch, compose_tensor
from .exceptions import DivergenceError, GeometryError
from .framing import FramingParams, border_pixel_count
from .optim import AdamState, StepDecay, adam_step

logger = logging.getLogger(__name__)


def _network(classifier) -> ConvNet:
    if isinstance(classifier, CnnClassifier):
        check_is_fitted(classifier, "network_")
        return classifier.network_
    if isinstance(classifier, ConvNet):
        return classifier
    raise TypeError(f"expected a fitted CnnClassifier or ConvNet, got {type(classifier).__name__}")


def framing_objective(logits: T.Tensor, y, target=None) -> T.Tensor:
    """Loss minimized by the framing.

    Untargeted: mean log-probability of the true class (the negated
    cross-entropy). Targeted: cross-entropy toward ``target``.
    """
    if target is None:
        return T.scale(T.softmax_cross_entropy(logits, y), -1.0)
    return T.softmax_cross_entropy(logits, np.full(logits.shape[0], target))


class AdversarialFraming(TransformerMixin, BaseEstimator):
    """Universal adversarial framing for a fixed victim classifier.

    ``fit`` optimizes one border shared by every input; ``transform``
    composes inputs with it. The victim's parameters are only read.

    Parameters
    ----------
    classifier : CnnClassifier
        Fitted victim model.
    width : int
        Border width W in pixels.
    target : int or None
        None for an untargeted attack, else the class to push inputs toward.
    strategy : str
        One of vanilla, frame-and-resize, resize-and-frame, occlude.
    epochs : int
        Epoch budget. Training also stops once the epoch-mean loss has
        improved by less than ``tol`` for ``patience`` consecutive epochs.
    lr, lr_decay, lr_milestones :
        Adam learning rate, multiplied by ``lr_decay`` at each milestone
        (given as fractions of the epoch budget).
    channels : int
        3 for colour borders, 1 for a grey border shared by all channels.
    logp_floor : float or None
        Untargeted only. When set, each step ignores inputs whose true-class
        log-probability is already below this value, so inputs that are
        already fooled stop dominating the unbounded objective. None (the
        default) optimizes the plain mean log-probability.
    """

    def __init__(
        self,
        classifier=None,
        width=2,
        target=None,
        strategy="vanilla",
        epochs=10,
        batch_size=64,
        lr=0.1,
        lr_decay=0.1,
        lr_milestones=(0.4, 0.8),
        tol=1e-4,
        patience=2,
        channels=3,
        logp_floor=None,
        seed=0,
        verbose=False,
    ):
        self.classifier = classifier
        self.width = width
        self.target = target
        self.strategy = strategy
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_decay = lr_decay
        self.lr_milestones = lr_milestones
        self.tol = tol
        self.patience = patience
        self.channels = channels
        self.logp_floor = logp_floor
        self.seed = seed
        self.verbose = verbose

    def _mean_loss(self, net, X, y, fp, strategy, theta):
        total = 0.0
        with T.no_grad():
            for start in range(0, len(X), 256):
                xb = X[start : start + 256]
                logits = net.forward(compose_tensor(T.Tensor(xb), fp.border_tensor(T.Tensor(theta)), fp, strategy))
                total += float(framing_objective(logits, y[start : start + 256], self.target).data) * len(xb)
        return total / len(X)

    def _above_floor(self, net, X, y, idx, fp, strategy, theta):
        with T.no_grad():
            border = fp.border_tensor(T.Tensor(theta))
            logits = net.forward(compose_tensor(T.Tensor(X[idx]), border, fp, strategy)).data.astype(np.float64)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z[np.arange(len(idx)), y[idx]] - np.log(np.exp(z).sum(axis=1))
        return idx[logp > self.logp_floor]

    def fit(self, X, y=None):
        net = _network(self.classifier)
        X = check_batch(X)
        strategy = Strategy.parse(self.strategy)
        if self.width < 1:
            raise GeometryError(f"framing width must be >= 1, got {self.width}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if X.ndim != net.ndim + 2 or X.shape[1] != net.in_channels:
            raise GeometryError(f"inputs of shape {X.shape[1:]} do not fit a {net.kind} model")
        if self.target is None:
            if y is None:
                raise ValueError("an untargeted framing needs the true labels y")
            y = check_labels(y, len(X))
        else:
            if not 0 <= int(self.target) < net.num_classes:
                raise ValueError(f"target {self.target} outside [0, {net.num_classes})")
            y = np.zeros(len(X), dtype=np.int64) if y is None else check_labels(y, len(X))

        h, w = X.shape[-2:]
        h_in, w_in = strategy.framing_interior(h, w, self.width)
        rng = np.random.default_rng(self.seed)
        n_values = self.channels * border_pixel_count(self.width, h_in, w_in)
        theta = rng.standard_normal(n_values)
        fp = FramingParams(
            theta, self.width, h_in, w_in,
            target=None if self.target is None else int(self.target),
            provenance="trained", strategy=strategy.value, channels=self.channels,
        )  # fmt: skip

        probe = slice(0, min(len(X), 512))
        self.initial_loss_ = self._mean_loss(net, X[probe], y[probe], fp, strategy, theta)

        schedule = StepDecay(self.lr, self.lr_decay, [round(f * self.epochs) for f in self.lr_milestones])
        state = AdamState(lr=self.lr)
        params = {"theta": theta}
        self.loss_curve_ = []
        stalls = 0
        for epoch in range(self.epochs):
            state.lr = schedule.lr_at(epoch)
            order = rng.permutation(len(X))
            total, seen = 0.0, 0
            for start in range(0, len(X), self.batch_size):
                idx = order[start : start + self.batch_size]
                if self.logp_floor is not None and self.target is None:
                    idx = self._above_floor(net, X, y, idx, fp, strategy, theta)
                    if len(idx) == 0:
                        continue
                theta_t = T.Tensor(theta, requires_grad=True)
                xb = compose_tensor(T.Tensor(X[idx]), fp.border_tensor(theta_t), fp, strategy)
                loss = framing_objective(net.forward(xb), y[idx], self.target)
                if not np.isfinite(loss.data):
                    raise DivergenceError(f"framing loss became non-finite in epoch {epoch}")
                T.backward(loss)
                adam_step(params, {"theta": theta_t.grad}, state)
                total += float(loss.data) * len(idx)
                seen += len(idx)
            # with a floor this is the mean over the inputs that were still optimized
            epoch_loss = total / max(seen, 1)
            if self.verbose:
                logger.info("framing epoch %d lr %.4g loss %.5f", epoch, state.lr, epoch_loss)
            if self.loss_curve_ and self.loss_curve_[-1] - epoch_loss < self.tol:
                stalls += 1
            else:
                stalls = 0
            self.loss_curve_.append(epoch_loss)
            if stalls >= self.patience:
                break
        fp.theta_hat = theta
        self.n_epochs_ = len(self.loss_curve_)
        self.final_loss_ = self._mean_loss(net, X[probe], y[probe], fp, strategy, theta)
        self.framing_ = fp
        return self

    def transform(self, X):
        check_is_fitted(self, "framing_")
        return compose_batch(check_batch(X), self.framing_, self.strategy)


def train_framing(
    X, y, classifier, width, target=None, strategy="vanilla", **options
) -> tuple[FramingParams, list[float]]:
    """Functional wrapper around :class:`AdversarialFraming`; returns the framing and its loss log."""
    est = AdversarialFraming(classifier, width=width, target=target, strategy=strategy, **options).fit(X, y)
    return est.framing_, est.loss_curve_
