"""``cct`` command line: train, eval, predict, plot.

Exit codes: 0 success, 1 usage / I/O / config / checkpoint error,
2 numerical abort during training. Flags override config-file values,
which override built-in defaults. Reruns with the same arguments write
byte-identical files; per-epoch wall time goes to stdout unless --timing
asks for it in trainlog.csv.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import logging
import os
import sys
import tempfile

import numpy as np

from . import data as D
from . import metrics as M
from .config import ConfigError, RunConfig, load_run_config, run_config_to_text
from .model import predict_logits
from .plots import roc_svg, training_curves_svg
from .training import CheckpointError, TrainLog, TrainingDivergedError, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
IMAGE_BYTES = 28 * 28 * 3

log = logging.getLogger("cct")


class CliError(Exception):
    pass


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _run_config(args) -> RunConfig:
    rc = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for flag, key in (("seed", "seed"), ("epochs", "epochs"), ("batch_size", "batch_size"),
                      ("lr", "lr"), ("weight_decay", "weight_decay")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "no_augment", False):
        overrides["augment"] = False
    if overrides:
        rc.model = dataclasses.replace(rc.model, **overrides)
        try:
            rc.model.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if getattr(args, "data", None):
        rc.data = args.data
    return rc


def _load_bundle(path: str, rc: RunConfig) -> D.DatasetBundle:
    if not path:
        raise CliError("no dataset given (use --data or data= in the config)")
    if not os.path.isfile(path):
        raise CliError(f"data file not found: {path}")
    return D.load_npz(path, rc.model.input_hw, rc.model.input_channels)


def cmd_train(args) -> int:
    rc = _run_config(args)
    out = args.out or rc.report_dir
    if not out:
        raise CliError("no output directory given (use --out)")
    bundle = _load_bundle(rc.data, rc)
    os.makedirs(out, exist_ok=True)
    ckpt_path = rc.checkpoint_out or os.path.join(out, "checkpoint.cct")
    rc.checkpoint_out = ckpt_path
    rc.report_dir = out
    _atomic_write(os.path.join(out, "config.txt"), run_config_to_text(rc))

    def progress(row):
        print(f"epoch {row.epoch:3d}/{rc.model.epochs}  train_loss {row.train_loss:.4f}  "
              f"train_acc {row.train_acc:.4f}  val_loss {row.val_loss:.4f}  val_acc {row.val_acc:.4f}  "
              f"({row.wall_seconds:.1f}s)", flush=True)

    try:
        ck, trainlog = train(rc.model, bundle, on_epoch=progress)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    save_checkpoint(ck, ckpt_path)
    trainlog.write(os.path.join(out, "trainlog.csv"), timing=args.timing)
    print(f"best val_acc {ck.best_val_accuracy:.4f} at epoch {ck.epoch}; checkpoint {ckpt_path}")
    return EXIT_OK


def _require_checkpoint(args):
    if not args.checkpoint:
        raise CliError("--checkpoint is required")
    if not os.path.isfile(args.checkpoint):
        raise CliError(f"checkpoint not found: {args.checkpoint}")
    return load_checkpoint(args.checkpoint)


def cmd_eval(args) -> int:
    ck = _require_checkpoint(args)
    rc = _run_config(args)
    # an explicit config must describe the checkpoint's architecture
    params = ck.to_model(rc.model if args.config else ck.config)
    rc.model = ck.config
    bundle = _load_bundle(rc.data, rc)
    split = bundle.split(args.split)
    probs = M.softmax_np(predict_logits(split.images, params, ck.config))
    ev = M.evaluate_scores(probs, split.labels, bundle.class_names)
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    M.write_reports(ev, out)
    rc.report_dir = out
    rc.checkpoint_out = args.checkpoint
    _atomic_write(os.path.join(out, "eval_config.txt"), run_config_to_text(rc))
    print(M.format_report(ev.report), end="")
    print(f"split {args.split}: accuracy {ev.top1:.4f}  top-2 accuracy {ev.top2:.4f}  "
          f"micro AUC {ev.roc.micro.auc:.4f}")
    return EXIT_OK


def _read_blob(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) != IMAGE_BYTES:
        raise CliError(f"{path}: expected a raw 28x28x3 uint8 image of {IMAGE_BYTES} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(28, 28, 3)


def cmd_predict(args) -> int:
    ck = _require_checkpoint(args)
    params = ck.to_model(ck.config)
    if args.image:
        image = _read_blob(args.image)
    elif args.npz:
        if args.index is None:
            raise CliError("--npz needs --index")
        if not os.path.isfile(args.npz):
            raise CliError(f"data file not found: {args.npz}")
        arrays = D.read_npz(args.npz, [f"{args.split}_images"])
        images = arrays[f"{args.split}_images"]
        if not 0 <= args.index < len(images):
            raise CliError(f"--index {args.index} out of range for {len(images)} {args.split} images")
        image = images[args.index]
    else:
        raise CliError("give an image file or --npz PATH --index I")
    if image.shape != (ck.config.input_hw, ck.config.input_hw, ck.config.input_channels):
        raise CliError(f"image shape {image.shape} does not match the model input")
    probs = M.softmax_np(predict_logits(D.normalize(image[None]), params, ck.config))[0]
    cls = int(M.argmax_lowest(probs[None])[0])
    names = D.CLASS_NAMES
    print(f"class {cls} ({names[cls] if cls < len(names) else cls})")
    for i, p in enumerate(probs):
        print(f"{i} {names[i] if i < len(names) else i:<22} {p:.6f}")
    return EXIT_OK


def cmd_plot(args) -> int:
    run_dir = args.run_dir or args.out
    if not run_dir or not os.path.isdir(run_dir):
        raise CliError(f"run directory not found: {run_dir}")
    out = args.out or run_dir
    trainlog_path = os.path.join(run_dir, "trainlog.csv")
    class_csvs = sorted(glob.glob(os.path.join(run_dir, "roc_class_*.csv")),
                        key=lambda p: int(p.rsplit("_", 1)[1].split(".")[0]))
    micro_path = os.path.join(run_dir, "roc_micro.csv")
    have_log = os.path.isfile(trainlog_path)
    have_roc = os.path.isfile(micro_path)
    if not have_log and not have_roc:
        raise CliError(f"nothing to plot in {run_dir}: missing trainlog.csv, roc_micro.csv, roc_class_<i>.csv")
    outputs = {}
    if have_log:
        tl = TrainLog.read(trainlog_path)
        if not tl.rows:
            raise CliError(f"{trainlog_path} has no epochs")
        cols = {k: [getattr(r, k) for r in tl.rows] for k in ("epoch", "train_loss", "val_loss", "train_acc", "val_acc")}
        outputs["training_curves.svg"] = training_curves_svg(
            cols["epoch"], cols["train_loss"], cols["val_loss"], cols["train_acc"], cols["val_acc"])
    if have_roc:
        curves = []
        for path in class_csvs + [micro_path]:
            _, fpr, tpr = M.read_roc_csv(path)
            if fpr.size < 2:
                raise CliError(f"{path} has fewer than two ROC points")
            auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2.0)
            label = "micro-average" if path == micro_path else f"class {path.rsplit('_', 1)[1].split('.')[0]}"
            curves.append((label, fpr, tpr, auc))
        outputs["roc.svg"] = roc_svg(curves)
    os.makedirs(out, exist_ok=True)
    for name, text in outputs.items():
        _atomic_write(os.path.join(out, name), text)
        print(os.path.join(out, name))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cct", description="Compact Convolutional Transformer for BloodMNIST")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p):
        p.add_argument("--data", help="MedMNIST-style .npz archive")
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", type=float)
        p.add_argument("--checkpoint")
        p.add_argument("--split", choices=D.SPLITS, default="test")
        p.add_argument("--index", type=int)

    p = sub.add_parser("train", help="train a model and keep the best checkpoint")
    shared(p)
    p.add_argument("--no-augment", action="store_true", help="disable random crop/flip")
    p.add_argument("--timing", action="store_true",
                   help="record measured wall_seconds in trainlog.csv (the file is then no longer reproducible)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split and write reports")
    shared(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one image")
    shared(p)
    p.add_argument("image", nargs="?", help="raw 28x28x3 uint8 file (2352 bytes)")
    p.add_argument("--npz", help="archive to take the image from (with --index, --split)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plot", help="write SVG training curves and ROC plots")
    shared(p)
    p.add_argument("run_dir", nargs="?", help="directory with trainlog.csv and/or roc_*.csv")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, CheckpointError, D.DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
