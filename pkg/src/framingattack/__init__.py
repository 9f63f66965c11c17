"""Universal adversarial framings: learned borders that fool a frozen CNN.

Everything runs on numpy, including a small reverse-mode autodiff engine
used to train both the victim classifiers and the framings.
"""

from .attack import AdversarialFraming, train_framing
from .classifier import CnnClassifier, ConvNet, load_checkpoint, save_checkpoint
from .composition import Strategy, compose
from .data import DatasetSplit, generate_moving_shapes, generate_shapes, load_split, save_split
from .evaluation import (
    AttackReport,
    eval_targeted,
    eval_untargeted,
    grad_cam,
    pixel_budget,
    render_image,
    render_report,
)
from .exceptions import DivergenceError, FormatError, GeometryError
from .framing import FramingParams, apply_framing, baseline_framing, load_framing, materialize, save_framing

__version__ = "0.1.0"

__all__ = [
    "AdversarialFraming",
    "AttackReport",
    "CnnClassifier",
    "ConvNet",
    "DatasetSplit",
    "DivergenceError",
    "FormatError",
    "FramingParams",
    "GeometryError",
    "Strategy",
    "apply_framing",
    "baseline_framing",
    "compose",
    "eval_targeted",
    "eval_untargeted",
    "generate_moving_shapes",
    "generate_shapes",
    "grad_cam",
    "load_checkpoint",
    "load_framing",
    "load_split",
    "materialize",
    "pixel_budget",
    "render_image",
    "render_report",
    "save_checkpoint",
    "save_framing",
    "save_split",
    "train_framing",
]
