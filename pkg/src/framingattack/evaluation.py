"""Attack metrics, Grad-CAM saliency and report/image output."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .classifier import CnnClassifier, evaluate_accuracy
from .composition import bilinear_resize, check_compatible, compose_batch
from .framing import FramingParams

CSV_COLUMNS = ("framing_kind", "W", "strategy", "metric", "value")


def _net(model):
    return model.network_ if isinstance(model, CnnClassifier) else model


def pixel_budget_exact(width: int, h: int, w: int) -> Fraction:
    if width < 1:
        raise ValueError(f"W must be >= 1, got {width}")
    return Fraction(2 * width * (h + w + 2 * width), (h + 2 * width) * (w + 2 * width))


def pixel_budget(width: int, h: int, w: int) -> float:
    """Share of a vanilla-framed image's pixels that belong to the border."""
    return float(pixel_budget_exact(width, h, w))


def eval_untargeted(model, framing: Optional[FramingParams], X, y, strategy="vanilla") -> float:
    """Accuracy on the composed split; ``framing=None`` gives clean accuracy."""
    if framing is None:
        return evaluate_accuracy(model, X, y)
    check_compatible(framing, strategy, *X.shape[-2:])
    return evaluate_accuracy(model, X, y, preprocess=lambda xb: compose_batch(xb, framing, strategy))


def success_rate(model, framing: FramingParams, X, target: int, strategy="vanilla", batch_size=256) -> float:
    """Fraction of the split classified as ``target`` once framed."""
    net = _net(model)
    check_compatible(framing, strategy, *X.shape[-2:])
    hits = 0
    for start in range(0, len(X), batch_size):
        pred = net.logits(compose_batch(X[start : start + batch_size], framing, strategy)).argmax(axis=1)
        hits += int((pred == target).sum())
    return hits / len(X)


def modal_class(model, framing: FramingParams, X, strategy="vanilla", batch_size=256) -> tuple[int, float]:
    """Most frequent prediction on the framed split and the share of inputs sent to it.

    Untargeted framings tend to funnel most inputs into one class; this
    quantifies that tendency. Ties go to the lowest class id.
    """
    net = _net(model)
    check_compatible(framing, strategy, *X.shape[-2:])
    counts = np.zeros(net.num_classes, dtype=np.int64)
    for start in range(0, len(X), batch_size):
        pred = net.logits(compose_batch(X[start : start + batch_size], framing, strategy)).argmax(axis=1)
        counts += np.bincount(pred, minlength=net.num_classes)
    top = int(counts.argmax())
    return top, counts[top] / len(X)


def eval_targeted(model, framings, X, strategy="vanilla") -> tuple[dict, tuple[float, float, float]]:
    """Per-target success rates and their (min, avg, max).

    ``framings`` maps target class -> framing, or is a sequence of targeted
    framings whose ``target`` field names the class.
    """
    if isinstance(framings, dict):
        items = list(framings.items())
    else:
        items = [(fp.target, fp) for fp in framings]
    if not items:
        raise ValueError("need at least one target framing")
    targets = [t for t, _ in items]
    if any(t is None for t in targets):
        raise ValueError("every framing in a targeted evaluation needs a target class")
    if len(set(targets)) != len(targets):
        raise ValueError(f"duplicate targets in {targets}")
    rates = {int(t): success_rate(model, fp, X, int(t), strategy) for t, fp in items}
    vals = list(rates.values())
    return rates, (min(vals), sum(vals) / len(vals), max(vals))


# ---------------------------------------------------------------------------


@dataclass
class SaliencyMap:
    heatmap: np.ndarray
    class_id: int
    layer: str


def grad_cam(model, image: np.ndarray, class_id: Optional[int] = None) -> SaliencyMap:
    """Grad-CAM of one image (3 x h x w) for ``class_id`` (default: predicted class).

    Taps the last conv block's post-ReLU activations. The map is upsampled
    bilinearly to the input size and min-max normalized; a constant map
    becomes all zeros.
    """
    net = _net(model)
    if net.ndim != 2:
        raise ValueError("grad_cam supports image models only")
    image = np.asarray(image)
    x = T.Tensor(image[None].astype(np.float64))
    with T.no_grad():
        logits, feats = net.forward(x, return_features=True)
    if class_id is None:
        class_id = int(logits.data[0].argmax())
    if not 0 <= class_id < net.num_classes:
        raise ValueError(f"class id {class_id} outside [0, {net.num_classes})")
    # replay the head from a grad-requiring copy of the tapped activations
    feats_leaf = T.Tensor(feats.data, requires_grad=True)
    head = T.linear(
        T.global_avg_pool(feats_leaf),
        T.Tensor(net.params["fc.weight"].astype(np.float64)),
        T.Tensor(net.params["fc.bias"].astype(np.float64)),
    )
    selector = np.zeros((1, net.num_classes))
    selector[0, class_id] = 1.0
    T.backward(T.tsum(T.linear(head, T.Tensor(selector), T.Tensor(np.zeros(1)))))
    A = feats.data[0]
    weights = feats_leaf.grad[0].mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, A, axes=1), 0.0)
    cam = bilinear_resize(cam[None], image.shape[-2], image.shape[-1])[0]
    lo, hi = cam.min(), cam.max()
    cam = (cam - lo) / (hi - lo) if hi > lo else np.zeros_like(cam)
    return SaliencyMap(cam, class_id, f"conv{len(net.widths) - 1}")


def border_mask(h: int, w: int, width: int) -> np.ndarray:
    mask = np.ones((h, w), dtype=bool)
    mask[width : h - width, width : w - width] = False
    return mask


# ---------------------------------------------------------------------------


@dataclass
class AttackReport:
    """Rows of (framing_kind, W, strategy, metric, value) plus run metadata."""

    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, framing_kind: str, width, strategy: str, metric: str, value: float) -> None:
        value = float(value)
        if metric != "pixel_budget" and not 0.0 <= value <= 1.0:
            raise ValueError(f"{metric} must be a fraction, got {value}")
        self.rows.append((framing_kind, "" if width is None else int(width), strategy, metric, value))

    def value(self, framing_kind, width, strategy, metric) -> float:
        for row in self.rows:
            if row[:4] == (framing_kind, "" if width is None else int(width), strategy, metric):
                return row[4]
        raise KeyError((framing_kind, width, strategy, metric))


def render_report(report: AttackReport, path) -> tuple[Path, Path]:
    """Write ``path`` as CSV and a sibling ``.txt`` aligned table."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for kind, width, strategy, metric, value in report.rows:
            writer.writerow([kind, width, strategy, metric, f"{value:.6f}"])
    table = [CSV_COLUMNS] + [(k, str(wd), s, m, f"{v:.6f}") for k, wd, s, m, v in report.rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(CSV_COLUMNS))]
    txt = path.with_suffix(".txt")
    with open(txt, "w") as fh:
        for key in sorted(report.metadata):
            fh.write(f"# {key}: {report.metadata[key]}\n")
        for r in table:
            fh.write("  ".join(cell.ljust(wd) for cell, wd in zip(r, widths)).rstrip() + "\n")
    return path, txt


def read_report(path) -> AttackReport:
    report = AttackReport()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        for kind, width, strategy, metric, value in reader:
            report.rows.append((kind, int(width) if width else "", strategy, metric, float(value)))
    return report


def to_bytes(image: np.ndarray) -> np.ndarray:
    """3 x h x w floats -> h x w x 3 uint8, round-half-up and clamped."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = np.broadcast_to(image, (3,) + image.shape)
    scaled = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5)
    return scaled.astype(np.uint8).transpose(1, 2, 0)


def render_image(image: np.ndarray, path) -> Path:
    """Write a 3 x h x w (or h x w grey) image as binary PPM (P6, maxval 255)."""
    pixels = to_bytes(image)
    h, w = pixels.shape[:2]
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (w, h))
            fh.write(np.ascontiguousarray(pixels).tobytes())
    except OSError as exc:
        raise OSError(f"cannot write image to {path}: {exc.strerror}") from exc
    return path


def read_ppm(path) -> np.ndarray:
    """Parse a P6 file written by :func:`render_image`; returns h x w x 3 uint8."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise ValueError(f"{path}: not a binary PPM")
    w, h = (int(v) for v in parts[1].split())
    if int(parts[2]) != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    return np.frombuffer(parts[3], dtype=np.uint8, count=h * w * 3).reshape(h, w, 3)


def heat_colours(cam: np.ndarray) -> np.ndarray:
    """Map a [0, 1] heatmap to a blue-red 3 x h x w image."""
    cam = np.clip(cam, 0.0, 1.0)
    return np.stack([cam, 1.0 - np.abs(2.0 * cam - 1.0), 1.0 - cam])


def overlay(image: np.ndarray, cam: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    return (1.0 - alpha) * image + alpha * heat_colours(cam)
