"""Command-line entry point.

Every command writes a key-sorted JSON snapshot of its resolved arguments
next to its outputs; ``framingattack replay SNAPSHOT`` re-runs it.
Failures print one line ``error[<kind>]: <message>`` to stderr and exit
with the code listed in ``EXIT_CODES``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .attack import AdversarialFraming
from .classifier import CnnClassifier, load_checkpoint, save_checkpoint
from .composition import Strategy, compose
from .data import generate_moving_shapes, generate_shapes, load_split, save_split
from .evaluation import (
    AttackReport,
    eval_targeted,
    eval_untargeted,
    grad_cam,
    modal_class,
    overlay,
    pixel_budget,
    render_image,
    render_report,
)
from .exceptions import DivergenceError, FormatError, GeometryError
from .framing import FramingParams, baseline_framing, load_framing, save_framing

logger = logging.getLogger("framingattack")

EXIT_CODES = {
    "usage": 2,
    "missing-file": 3,
    "format": 4,
    "geometry": 5,
    "divergence": 6,
    "io": 7,
    "invalid-value": 8,
}


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


# ---------------------------------------------------------------------------
# helpers


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError("missing-file", f"no such file: {p}")
    return p


def _load_data(directory, split="val"):
    return load_split(_existing(Path(directory) / f"{split}.afds"))


def _load_model(path, kind=None):
    return load_checkpoint(_existing(path), kind=kind)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [v for v in text.split(",") if v]


def _objective(text: str):
    if text == "untargeted":
        return None
    if text.startswith("targeted:"):
        try:
            return int(text.split(":", 1)[1])
        except ValueError:
            pass
    raise argparse.ArgumentTypeError(f"objective must be 'untargeted' or 'targeted:<class id>', got {text!r}")


def _baseline(spec: str, width, h_in, w_in) -> FramingParams:
    if spec == "black":
        return baseline_framing("black", width, h_in, w_in)
    if spec.startswith("random"):
        seed = int(spec.split(":", 1)[1]) if ":" in spec else 0
        return baseline_framing("random", width, h_in, w_in, seed=seed)
    raise CliError("invalid-value", f"baseline must be 'black' or 'random:<seed>', got {spec!r}")


def _snapshot_text(args) -> str:
    snap = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    return json.dumps(snap, sort_keys=True, indent=2) + "\n"


def _write_snapshot(args, path: Path) -> None:
    path.write_text(_snapshot_text(args))


def _metadata(args, **extra) -> dict:
    meta = {"command": args.command, "config_sha256": hashlib.sha256(_snapshot_text(args).encode()).hexdigest()}
    if hasattr(args, "seed"):
        meta["seed"] = args.seed
    meta.update(extra)
    return meta


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _framing_options(args) -> dict:
    return dict(
        epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed, channels=args.channels,
        logp_floor=args.logp_floor, verbose=args.verbose,
    )  # fmt: skip


def _train_framing(train, model, width, target, strategy, args) -> AdversarialFraming:
    est = AdversarialFraming(model, width=width, target=target, strategy=strategy, **_framing_options(args))
    return est.fit(train.X, train.y)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "image":
        train, val = generate_shapes(args.seed, args.n_train, args.n_val, args.num_classes, args.height, args.width)
    else:
        train, val = generate_moving_shapes(
            args.seed, args.n_train, args.n_val, args.num_classes, args.frames, args.height, args.width
        )
    save_split(train, out / "train.afds")
    save_split(val, out / "val.afds")
    _write_snapshot(args, out / "config.json")


def cmd_train_classifier(args):
    train = _load_data(args.data, "train")
    val = _load_data(args.data, "val")
    clf = CnnClassifier(
        widths=args.widths and tuple(args.widths), strides=args.strides and tuple(args.strides), epochs=args.epochs, batch_size=args.batch_size,
        lr=args.lr, decay=args.decay, decay_every=args.decay_every, seed=args.seed, verbose=args.verbose,
    )  # fmt: skip
    clf.fit(train.X, train.y, num_classes=train.num_classes, X_val=val.X, y_val=val.y)
    out = Path(args.out)
    save_checkpoint(clf, out)
    _write_rows(
        out.with_suffix(".log.csv"),
        ("epoch", "lr", "loss", "train_accuracy", "val_accuracy"),
        [(r["epoch"], repr(r["lr"]), _fmt(r["loss"]), _fmt(r["accuracy"]), _fmt(r["val_accuracy"])) for r in clf.history_],
    )
    _write_snapshot(args, out.with_suffix(".config.json"))
    logger.info("val accuracy %.4f", clf.history_[-1]["val_accuracy"])


def cmd_train_framing(args):
    train = _load_data(args.data, "train")
    model = _load_model(args.model, kind=train.kind)
    est = _train_framing(train, model, args.width_px, args.objective, args.strategy, args)
    out = Path(args.out)
    save_framing(est.framing_, out)
    _write_rows(out.with_suffix(".log.csv"), ("epoch", "loss"), [(i, _fmt(v)) for i, v in enumerate(est.loss_curve_)])
    _write_snapshot(args, out.with_suffix(".config.json"))


def cmd_eval(args):
    val = _load_data(args.data, "val")
    model = _load_model(args.model, kind=val.kind)
    strategy = Strategy.parse(args.strategy)
    h, w = val.X.shape[-2:]
    report = AttackReport(metadata=_metadata(args))
    report.add("none", None, "", "accuracy", eval_untargeted(model, None, val.X, val.y))
    if args.framing:
        fp = load_framing(_existing(args.framing))
        kind = "AF"
    else:
        if args.width_px is None:
            raise CliError("usage", "--baseline needs --width")
        fp = _baseline(args.baseline, args.width_px, *strategy.framing_interior(h, w, args.width_px))
        kind = "RF" if fp.provenance == "random" else "BF"
    if fp.target is None:
        report.add(kind, fp.width, strategy.value, "accuracy", eval_untargeted(model, fp, val.X, val.y, strategy))
    else:
        _, (lo, avg, hi) = eval_targeted(model, [fp], val.X, strategy)
        report.add(kind, fp.width, strategy.value, f"success_rate_target_{fp.target}", avg)
    report.add(kind, fp.width, strategy.value, "pixel_budget", pixel_budget(fp.width, h, w))
    out = Path(args.out)
    render_report(report, out)
    _write_snapshot(args, out.with_suffix(".config.json"))


def cmd_sweep(args):
    train = _load_data(args.data, "train")
    val = _load_data(args.data, "val")
    model = _load_model(args.model, kind=val.kind)
    out = Path(args.out)
    framing_dir = out.parent / (out.stem + "_framings")
    framing_dir.mkdir(parents=True, exist_ok=True)
    strategies = [Strategy.parse(s) for s in args.strategies]
    h, w = val.X.shape[-2:]
    report = AttackReport(metadata=_metadata(args))
    report.add("none", None, "", "accuracy", eval_untargeted(model, None, val.X, val.y))
    trained: dict = {}

    def trained_framing(width, family_strategy):
        key = (width, family_strategy)
        if key not in trained:
            est = _train_framing(train, model, width, None, family_strategy, args)
            save_framing(est.framing_, framing_dir / f"af_w{width}_{family_strategy.value}.affr")
            trained[key] = est.framing_
        return trained[key]

    for strategy in strategies:
        family = Strategy.RESIZE_AND_FRAME if strategy.shrinks_interior else Strategy.VANILLA
        for width in args.widths:
            interior = strategy.framing_interior(h, w, width)
            for spec in args.baselines:
                fp = _baseline(spec, width, *interior)
                kind = "RF" if fp.provenance == "random" else "BF"
                report.add(kind, width, strategy.value, "accuracy", eval_untargeted(model, fp, val.X, val.y, strategy))
            if not args.no_train:
                fp = trained_framing(width, family)
                report.add("AF", width, strategy.value, "accuracy", eval_untargeted(model, fp, val.X, val.y, strategy))
                top, share = modal_class(model, fp, val.X, strategy)
                report.add("AF", width, strategy.value, f"modal_share_class_{top}", share)
    for width in args.widths:
        report.add("AF", width, "vanilla", "pixel_budget", pixel_budget(width, h, w))
    render_report(report, out)
    _write_snapshot(args, out.with_suffix(".config.json"))


def cmd_targeted_suite(args):
    train = _load_data(args.data, "train")
    val = _load_data(args.data, "val")
    model = _load_model(args.model, kind=val.kind)
    if not 1 <= args.targets <= val.num_classes:
        raise CliError("invalid-value", f"--targets must be in [1, {val.num_classes}], got {args.targets}")
    targets = sorted(np.random.default_rng(args.seed).permutation(val.num_classes)[: args.targets].tolist())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    framings = {}
    for t in targets:
        est = _train_framing(train, model, args.width_px, t, args.strategy, args)
        save_framing(est.framing_, out / f"target_{t}.affr")
        framings[t] = est.framing_
    rates, (lo, avg, hi) = eval_targeted(model, framings, val.X, args.strategy)
    report = AttackReport(metadata=_metadata(args, targets=targets))
    for t in targets:
        report.add("AF", args.width_px, Strategy.parse(args.strategy).value, f"success_rate_target_{t}", rates[t])
    for name, value in (("success_rate_min", lo), ("success_rate_avg", avg), ("success_rate_max", hi)):
        report.add("AF", args.width_px, Strategy.parse(args.strategy).value, name, value)
    render_report(report, out / "summary.csv")
    _write_snapshot(args, out / "config.json")


def _side_by_side(images, gap=2):
    h = max(im.shape[1] for im in images)
    w = sum(im.shape[2] for im in images) + gap * (len(images) - 1)
    canvas = np.ones((3, h, w))
    x = 0
    for im in images:
        top = (h - im.shape[1]) // 2
        canvas[:, top : top + im.shape[1], x : x + im.shape[2]] = im
        x += im.shape[2] + gap
    return canvas


def cmd_gradcam(args):
    val = _load_data(args.data, "val")
    model = _load_model(args.model, kind="image")
    if not 0 <= args.image_index < len(val):
        raise CliError("invalid-value", f"--image-index must be in [0, {len(val)}), got {args.image_index}")
    image = val.X[args.image_index].astype(np.float64)
    clean = grad_cam(model, image)
    panels = [image, overlay(image, clean.heatmap)]
    if args.framing:
        fp = load_framing(_existing(args.framing))
        attacked = compose(image, fp, args.strategy)
        cam = grad_cam(model, attacked)
        panels.append(overlay(attacked, cam.heatmap))
    out = Path(args.out)
    render_image(_side_by_side(panels), out)
    _write_snapshot(args, out.with_suffix(".config.json"))


def cmd_render(args):
    val = _load_data(args.data, "val")
    fp = load_framing(_existing(args.framing))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in args.indices:
        if not 0 <= i < len(val):
            raise CliError("invalid-value", f"index {i} outside [0, {len(val)})")
        x = val.X[i]
        if val.kind == "clip":
            for t in range(x.shape[1]):
                render_image(compose(x, fp, args.strategy)[:, t], out / f"val_{i:05d}_t{t:02d}.ppm")
        else:
            render_image(compose(x, fp, args.strategy), out / f"val_{i:05d}.ppm")
    _write_snapshot(args, out / "config.json")


def cmd_replay(args):
    snap = json.loads(_existing(args.snapshot).read_text())
    replayed = argparse.Namespace(**snap, verbose=args.verbose)
    replayed.func = COMMANDS[snap["command"]]
    replayed.func(replayed)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-classifier": cmd_train_classifier,
    "train-framing": cmd_train_framing,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "targeted-suite": cmd_targeted_suite,
    "gradcam": cmd_gradcam,
    "render": cmd_render,
    "replay": cmd_replay,
}


def _add_framing_training(p):
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, choices=(1, 3), default=3)
    p.add_argument("--logp-floor", type=float, help="untargeted: skip inputs already below this true-class log-prob")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="framingattack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=("image", "clip"), default="image")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)

    p = sub.add_parser("train-classifier", help="train the victim model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--decay", type=float, default=0.3)
    p.add_argument("--decay-every", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--widths", type=_int_list)
    p.add_argument("--strides", type=_int_list)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train-framing", help="train one adversarial framing")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--width", dest="width_px", type=int, required=True)
    p.add_argument("--objective", type=_objective, default=None)
    p.add_argument("--strategy", default="vanilla")
    p.add_argument("--out", required=True)
    _add_framing_training(p)

    p = sub.add_parser("eval", help="evaluate a framing or baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--framing")
    g.add_argument("--baseline")
    p.add_argument("--strategy", default="vanilla")
    p.add_argument("--width", dest="width_px", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="AF/RF/BF accuracy over widths and strategies")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--widths", type=_int_list, default=[1, 2, 3, 4])
    p.add_argument("--baselines", type=_str_list, default=["random:0", "black"])
    p.add_argument("--strategies", type=_str_list, default=["vanilla"])
    p.add_argument("--no-train", action="store_true", help="baselines only")
    p.add_argument("--out", required=True)
    _add_framing_training(p)

    p = sub.add_parser("targeted-suite", help="one targeted framing per class, min/avg/max success")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--targets", type=int, default=8)
    p.add_argument("--width", dest="width_px", type=int, default=4)
    p.add_argument("--strategy", default="vanilla")
    p.add_argument("--out", required=True)
    _add_framing_training(p)

    p = sub.add_parser("gradcam", help="original / clean CAM / attacked CAM triptych")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--image-index", type=int, default=0)
    p.add_argument("--framing")
    p.add_argument("--strategy", default="vanilla")
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", help="write framed validation images as PPM")
    p.add_argument("--data", required=True)
    p.add_argument("--framing", required=True)
    p.add_argument("--indices", type=_int_list, default=[0, 1, 2, 3])
    p.add_argument("--strategy", default="vanilla")
    p.add_argument("--out", required=True)

    p = sub.add_parser("replay", help="re-run a command from its config snapshot")
    p.add_argument("snapshot")
    return parser


_KIND_DEFAULTS = {
    "image": dict(n_train=4096, n_val=1024, num_classes=8),
    "clip": dict(n_train=1536, n_val=384, num_classes=6),
}


def _resolve_defaults(args) -> None:
    if args.command == "gen-data":
        for key, value in _KIND_DEFAULTS[args.kind].items():
            if getattr(args, key) is None:
                setattr(args, key, value)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        _resolve_defaults(args)
        COMMANDS[args.command](args)
    except CliError as exc:
        return _fail(exc.kind, str(exc))
    except FormatError as exc:
        return _fail("format", str(exc))
    except GeometryError as exc:
        return _fail("geometry", str(exc))
    except DivergenceError as exc:
        return _fail("divergence", str(exc))
    except FileNotFoundError as exc:
        return _fail("missing-file", str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
    except ValueError as exc:
        return _fail("invalid-value", str(exc))
    return 0


def _fail(kind: str, message: str) -> int:
    print(f"error[{kind}]: {' '.join(message.split())}", file=sys.stderr)
    return EXIT_CODES[kind]


if __name__ == "__main__":
    sys.exit(main())
