"""Command-line front end: ``gen``, ``train``, ``eval``, ``grade``, ``psnr`` and ``export``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Settings resolve as command-line flag > ``--config`` file (``key = value``
lines) > built-in default. ``EMIGRADE_OUT`` sets the default output directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .metrics import psnr
from .models import MODEL_IDS, build_model
from .nn import TrainConfig
from .plots import plot_confusion, plot_training_curves
from .preprocess import frame_to_tensor
from .synth import (
    LEVELS,
    MANIFEST_NAME,
    SPLITS,
    DatasetManifest,
    FrameFormatError,
    NoiseParams,
    build_dataset,
    export_image,
    read_frame,
)
from .train import NumericError, evaluate, load_split, predict, train

log = logging.getLogger("emigrade")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "model": 4, "epochs": 30, "lr": 1e-3, "l2": 0.0, "batch": 32, "seed": 0,
    "scale": 1.0, "dataset": None, "checkpoint": None, "out": None, "split": "test",
    "width": 1280, "height": 720,
}
TYPES = {"model": int, "epochs": int, "lr": float, "l2": float, "batch": int, "seed": int,
         "scale": float, "dataset": str, "checkpoint": str, "out": str, "split": str,
         "width": int, "height": int}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in TYPES:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        try:
            out[key] = TYPES[key](value)
        except ValueError:
            raise UsageError(f"{path}:{n}: bad value for {key}: {value!r}") from None
    return out


def resolve(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    settings["out"] = os.environ.get("EMIGRADE_OUT", ".")
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    settings.update({k: v for k, v in vars(args).items() if k in TYPES and v is not None})
    if settings["model"] not in MODEL_IDS:
        raise UsageError(f"--model must be one of {MODEL_IDS}")
    if settings["split"] not in SPLITS:
        raise UsageError(f"--split must be one of {SPLITS}")
    return settings


def _manifest_path(dataset) -> Path:
    if dataset is None:
        raise UsageError("--dataset is required")
    p = Path(dataset)
    return p / MANIFEST_NAME if p.is_dir() else p


def _read_manifest(dataset) -> DatasetManifest:
    path = _manifest_path(dataset)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    try:
        return DatasetManifest.read(path)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _load_split(manifest: DatasetManifest, split: str):
    try:
        return load_split(manifest, split)
    except FrameFormatError as exc:
        raise DataError(f"bad frame in {split} split: {exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    except OSError as exc:
        raise DataError(f"cannot read {split} frame: {exc}") from None


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise DataError(f"output directory {out} is not writable")
    return out


def _load_checkpoint(path):
    if path is None:
        raise UsageError("--checkpoint is required")
    try:
        return ckpt.load(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint: {exc}") from None
    except ckpt.CheckpointError as exc:
        raise DataError(str(exc)) from None


# ---------------------------------------------------------------- commands

def cmd_gen(s: dict) -> int:
    out = _out_dir(s["dataset"] or s["out"])
    try:
        manifest = build_dataset(out, NoiseParams(seed=s["seed"]), s["scale"], s["width"], s["height"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    counts = manifest.counts()
    print("level\t" + "\t".join(SPLITS))
    for lv in LEVELS:
        print(f"{lv}\t" + "\t".join(str(counts[lv, sp]) for sp in SPLITS))
    print(f"total\t{len(manifest.entries)}\tmanifest\t{out / MANIFEST_NAME}")
    return EXIT_OK


def cmd_train(s: dict) -> int:
    manifest = _read_manifest(s["dataset"])
    for split in ("train", "val"):
        if not manifest.split(split):
            raise DataError(f"manifest has no {split} split")
    out = _out_dir(s["out"])
    try:
        config = TrainConfig(learning_rate=s["lr"], l2_lambda=s["l2"], epochs=s["epochs"],
                             batch_size=s["batch"], seed=s["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    train_data = _load_split(manifest, "train")
    val_data = _load_split(manifest, "val")
    spec = build_model(s["model"])
    network = spec.network(config.seed)

    def report(rec):
        log.info("epoch %d  train_loss %.4f  val_acc %.4f", rec.epoch, rec.train_loss, rec.val_accuracy)

    result = train(network, train_data, val_data, config, on_epoch=report)
    final_path, best_path = out / "final.emic", out / "best.emic"
    try:
        ckpt.save(final_path, spec.model_id, config.epochs, result.network, config)
        ckpt.save(best_path, spec.model_id, result.best_epoch, result.best_network, config)
        (out / "train_log.tsv").write_text(result.log_text(), encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write checkpoint: {exc}") from None
    plot_training_curves(result.history, out / "training_curve.png", f"Model {spec.model_id}")
    last = result.history[-1]
    print(f"final\t{final_path}\tepoch\t{config.epochs}\tval_accuracy\t{last.val_accuracy:.4f}")
    print(f"best\t{best_path}\tepoch\t{result.best_epoch}\t"
          f"val_accuracy\t{result.history[result.best_epoch].val_accuracy:.4f}")
    return EXIT_OK


def cmd_eval(s: dict) -> int:
    model_id, epoch, network = _load_checkpoint(s["checkpoint"])
    manifest = _read_manifest(s["dataset"])
    split = s["split"]
    x, y = _load_split(manifest, split)
    report = evaluate(network, x, y)
    out = _out_dir(s["out"])
    title = f"Model {model_id} (epoch {epoch}) on {split} split"
    table = report.table(title)
    (out / f"{split}_report.txt").write_text(table, encoding="utf-8")
    (out / f"{split}_report.tsv").write_text(report.delimited(), encoding="utf-8")
    (out / f"{split}_confusion.tsv").write_text(report.confusion_grid(), encoding="utf-8")
    plot_confusion(report, out / f"{split}_confusion.png", title)
    print(table, end="")
    print(report.confusion_grid(), end="")
    return EXIT_OK


def _frame_files(inputs) -> list[Path]:
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files += sorted(p.rglob("*.emif"))
        else:
            files.append(p)
    return files


def cmd_grade(s: dict, inputs) -> int:
    _, _, network = _load_checkpoint(s["checkpoint"])
    status = EXIT_OK
    lines = []
    for path in _frame_files(inputs):
        try:
            tensor = frame_to_tensor(read_frame(path))
        except (OSError, FrameFormatError) as exc:
            log.warning("skipping %s: %s", path, exc)
            status = EXIT_DATA
            continue
        pred, probs = predict(network, tensor[None].astype(network.dtype))
        line = f"{path}\t{int(pred[0]) + 1}\t" + "\t".join(f"{p:.6f}" for p in probs[0])
        lines.append(line)
        print(line)
    if s.get("out_file"):
        Path(s["out_file"]).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return status


def cmd_psnr(a, b, max_value: float) -> int:
    try:
        fa, fb = read_frame(a), read_frame(b)
        result = psnr(fa, fb, max_value)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    print("identical" if result.identical else f"{result.value_db:.4f} dB")
    return EXIT_OK


def cmd_export(frame_path, out_path, plane) -> int:
    try:
        export_image(read_frame(frame_path), out_path, plane)
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value settings file")
    common.add_argument("--seed", type=int, help="run seed (default 0)")
    common.add_argument("--out", metavar="PATH", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="emigrade", description="Grade EMI noise in colour-bar video frames.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--dataset", metavar="PATH", help="dataset directory to create (default --out)")
    p.add_argument("--scale", type=float, help="fraction of the 800/200/100 split sizes")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--dataset", metavar="PATH", help="dataset directory or manifest")
    p.add_argument("--model", type=int, choices=MODEL_IDS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--l2", type=float, help="L2 weight penalty lambda (0 = off)")
    p.add_argument("--batch", type=int)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--dataset", metavar="PATH")
    p.add_argument("--split", choices=SPLITS)

    p = sub.add_parser("grade", parents=[common], help="grade frames with a checkpoint")
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("inputs", nargs="+", metavar="FRAME_OR_DIR")

    p = sub.add_parser("psnr", parents=[common], help="PSNR between two frames")
    p.add_argument("frame_a")
    p.add_argument("frame_b")
    p.add_argument("--max", type=float, default=255.0, dest="max_value")

    p = sub.add_parser("export", parents=[common], help="write a frame as PNG")
    p.add_argument("frame")
    p.add_argument("png")
    p.add_argument("--plane", choices=("y", "cb", "cr"), help="single plane in greyscale")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        s = resolve(args)
        if args.command == "gen":
            return cmd_gen(s)
        if args.command == "train":
            return cmd_train(s)
        if args.command == "eval":
            return cmd_eval(s)
        if args.command == "grade":
            return cmd_grade(s, args.inputs)
        if args.command == "psnr":
            return cmd_psnr(args.frame_a, args.frame_b, args.max_value)
        return cmd_export(args.frame, args.png, args.plane)
    except UsageError as exc:
        print(f"emigrade: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"emigrade: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"emigrade: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
