"""Command-line interface: ``dlsvm <subcommand> [options]``.

Settings may also come from ``--config FILE`` (one ``key = value`` per line,
``#`` starts a comment); command-line flags override file values.
"""
import argparse
import csv
import hashlib
import io
import logging
import os
import sys

import numpy as np

from . import data as dp
from . import gradcheck
from . import models
from .exceptions import ConfigError, DLSVMError, InputError, NumericError
from .metrics import confusion_heatmap_svg, confusion_to_csv
from .serialization import atomic_write

log = logging.getLogger("dlsvm")

EXIT_CODES = """exit codes:
  0  success
  1  unexpected error
  2  command-line usage error
  3  input error (unreadable or unusable data, shape mismatch)
  4  configuration error (bad hyperparameter, class-count mismatch)
  5  file format error (bad magic, version or truncated file)
  6  numeric failure (non-finite loss, gradient check failure)
"""

# built-in defaults; None means "take the model preset"
DEFAULTS = {
    "convert": {"width": "auto"},
    "preprocess": {"seed": 0, "ratio": 0.7, "batch": 256, "fit_on": "train"},
    "train": {"model": "mlp-svm", "epochs": None, "batch": None, "lr": None, "c": None,
              "keep_prob": None, "seed": 0, "reduction": "sum", "pool_stride": None,
              "out": "model.ckpt", "log": None, "timing": False},
    "eval": {"split": "test", "report": None, "confusion": None, "heatmap": None},
    "predict": {"as_": "auto"},
    "gradcheck": {"model": "all", "scale": "mini", "seed": 0},
}

CASTS = {"seed": int, "batch": int, "epochs": int, "ratio": float, "lr": float, "c": float,
         "keep_prob": float, "pool_stride": int,
         "timing": lambda v: str(v).lower() in ("1", "true", "yes", "on")}


def read_config(path):
    """Parse a ``key = value`` file into a dict with normalized keys."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def resolve(args):
    """Merge built-in defaults, config file and explicit flags; echo the result."""
    settings = dict(DEFAULTS.get(args.command, {}))
    if args.config:
        for key, value in read_config(args.config).items():
            if key == "as":
                key = "as_"
            if key not in settings and not hasattr(args, key):
                raise ConfigError(f"unknown setting {key!r} for {args.command}")
            settings[key] = CASTS.get(key, str)(value)
    for key, value in vars(args).items():
        if key in ("command", "config", "func", "verbose"):
            continue
        if value is not None:
            settings[key] = value
        else:
            settings.setdefault(key, None)
    for key in sorted(settings):
        log.info("setting %s = %r", key, settings[key])
    return argparse.Namespace(**settings)


def _write_text(path, text):
    atomic_write(path, text)
    log.info("wrote %s", path)


# -- subcommands -------------------------------------------------------------

def cmd_convert(opt):
    width = opt.width if opt.width == "auto" else int(opt.width)
    if os.path.isdir(opt.input):
        sources = sorted(os.path.join(opt.input, f) for f in os.listdir(opt.input)
                         if os.path.isfile(os.path.join(opt.input, f)))
    else:
        sources = [opt.input]
    os.makedirs(opt.output, exist_ok=True)
    rows = []
    for src in sources:
        try:
            with open(src, "rb") as fh:
                img = dp.binary_to_image(fh.read(), width, source_id=src)
        except (OSError, InputError) as exc:
            log.warning("skipping %s: %s", src, exc)
            continue
        stem = os.path.splitext(os.path.basename(src))[0]
        dest = os.path.join(opt.output, stem + ".png")
        buf = io.BytesIO()
        dp.write_image(img.pixels, buf)
        atomic_write(dest, buf.getvalue())
        h, w = img.pixels.shape
        rows.append((os.path.basename(src), w, h))
    if not rows:
        raise InputError("convert: no input could be converted")
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["source", "width", "height"])
    writer.writerows(rows)
    _write_text(os.path.join(opt.output, "manifest.csv"), out.getvalue())
    print(f"converted {len(rows)} of {len(sources)} files")
    return 0


def _checksum(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def cmd_preprocess(opt):
    images, class_names = dp.load_image_dir(opt.data)
    container = dp.build_container(images, class_names, ratio=opt.ratio, batch=opt.batch,
                                   seed=opt.seed, fit_on=opt.fit_on)
    container.save(opt.out)
    counts = np.bincount(container.labels, minlength=len(class_names))
    print(f"families: {len(class_names)}")
    for name, n in zip(class_names, counts):
        expected = dp.expected_family_count(name)
        note = f" (published: {expected})" if expected is not None else ""
        print(f"  {name}: {n}{note}")
    print(f"samples: {len(images)}")
    sizes = [len(container.split[k]) for k in ("train", "test", "unused")]
    print("split (train/test/unused): {}/{}/{}".format(*sizes))
    print(f"mu/sigma checksum: {_checksum(container.mu, container.sigma)}")
    return 0


def cmd_train(opt):
    container = dp.DatasetContainer.load(opt.dataset)
    spec = models.ModelSpec.preset(
        opt.model, epochs=opt.epochs, batch=opt.batch, lr=opt.lr, C=opt.c,
        keep_prob=opt.keep_prob, seed=opt.seed, reduction=opt.reduction,
        pool_stride=opt.pool_stride, n_classes=container.n_classes,
        input_side=int(round(np.sqrt(container.features.shape[1]))))
    log.info("model spec: %s", spec.to_dict())
    model = models.build(spec)
    sink = models.CsvLogSink(timing=bool(opt.timing))
    try:
        records = models.train_dataset(model, container, sink=sink)
    finally:
        if opt.log:
            _write_text(opt.log, sink.to_csv())
    models.save_checkpoint(model, opt.out)
    log.info("wrote %s", opt.out)
    X, y = container.subset("train")
    final = models.evaluate(model, X, y).accuracy
    print(f"steps: {len(records)}")
    if records:
        print(f"mean batch accuracy (all steps): {np.mean([r['batch_accuracy'] for r in records]):.6f}")
        last = [r["batch_accuracy"] for r in records if r["epoch"] == records[-1]["epoch"]]
        print(f"mean batch accuracy (final epoch): {np.mean(last):.6f}")
    print(f"final training accuracy: {final:.6f}")
    return 0


def cmd_eval(opt):
    model = models.load_checkpoint(opt.checkpoint)
    container = dp.DatasetContainer.load(opt.dataset)
    report = models.evaluate_dataset(model, container, opt.split)
    names = list(container.class_names)
    print(f"accuracy: {report.accuracy:.6f}")
    for label, agg in (("weighted", report.weighted), ("macro", report.macro)):
        print(f"{label} precision: {agg.precision:.4f} recall: {agg.recall:.4f} f1: {agg.f1:.4f}")
    if report.undefined:
        log.warning("zero-denominator metrics set to 0 for classes: %s",
                    ", ".join(names[k] for k in report.undefined))
    if opt.report:
        _write_text(opt.report, report.to_csv(names))
    if opt.confusion:
        _write_text(opt.confusion, confusion_to_csv(report.confusion, names))
    if opt.heatmap:
        title = f"{model.spec.kind.upper()} confusion matrix"
        _write_text(opt.heatmap, confusion_heatmap_svg(report.confusion, names, title))
    return 0


def load_input_features(path, how="auto"):
    """Image file or raw binary -> unstandardized 1024-vector."""
    if how in ("auto", "image"):
        try:
            return dp.image_features(dp.read_image(path))
        except (OSError, ValueError) as exc:
            if how == "image":
                raise InputError(f"cannot decode image {path}: {exc}") from None
    try:
        with open(path, "rb") as fh:
            return dp.image_features(dp.binary_to_image(fh.read(), "auto", source_id=path))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None


def cmd_predict(opt):
    model = models.load_checkpoint(opt.checkpoint)
    x = load_input_features(opt.input, opt.as_)
    if model.mu is not None:
        x = dp.standardize_apply(x, model.mu, model.sigma)
    s = model.decision_function(x[None, :])[0]
    order = sorted(range(len(s)), key=lambda k: (-s[k], k))
    print(model.class_names[order[0]])
    for k in order:
        print(f"{model.class_names[k]}\t{float(s[k]):.6f}")
    return 0


def cmd_gradcheck(opt):
    if opt.scale != "mini":
        raise ConfigError("only --scale mini is supported")
    kinds = models.KINDS if opt.model == "all" else (opt.model,)
    failed = []
    for kind in kinds:
        errors = gradcheck.run_mini(kind, seed=opt.seed)
        for layer, err in errors.items():
            ok = err <= gradcheck.TOLERANCE
            print(f"{kind}\t{layer}\t{err:.3e}\t{'ok' if ok else 'FAIL'}")
            if not ok:
                failed.append(f"{kind}:{layer}")
    if failed:
        raise NumericError("gradient check failed for " + ", ".join(failed))
    print("gradient check passed")
    return 0


# -- parser ------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="dlsvm", description="DL-SVM malware classifiers (CNN/GRU/MLP + L2-SVM).",
        epilog=EXIT_CODES, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, epilog=EXIT_CODES,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", help="key = value settings file")
        p.set_defaults(func=func)
        return p

    p = add("convert", cmd_convert, "render binaries as grayscale PNG images")
    p.add_argument("--input", required=True, help="binary file or directory of binaries")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--width", help="'auto' or a fixed image width in pixels")

    p = add("preprocess", cmd_preprocess, "build a dataset container from an image tree")
    p.add_argument("--data", required=True, help="root with one subdirectory per family")
    p.add_argument("--out", required=True, help="container file to write")
    p.add_argument("--seed", type=int)
    p.add_argument("--ratio", type=float, help="training fraction (default 0.7)")
    p.add_argument("--batch", type=int, help="batch size both splits are rounded to")
    p.add_argument("--fit-on", choices=("train", "all"),
                   help="rows used for standardization statistics")

    p = add("train", cmd_train, "train a model on a dataset container")
    p.add_argument("--model", choices=models.KINDS)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--c", type=float, help="SVM penalty C")
    p.add_argument("--keep-prob", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--reduction", choices=("sum", "mean"), help="batch reduction of hinge terms")
    p.add_argument("--pool-stride", type=int, help="CNN pooling stride (default 2)")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--log", help="per-step CSV log path")
    p.add_argument("--timing", action="store_true", default=None,
                   help="record wall-clock ms in the log (makes logs non-reproducible)")

    p = add("eval", cmd_eval, "evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--report", help="per-class report CSV")
    p.add_argument("--confusion", help="confusion matrix CSV")
    p.add_argument("--heatmap", help="confusion heatmap SVG")

    p = add("predict", cmd_predict, "classify one image or binary")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--as", dest="as_", choices=("auto", "image", "binary"))

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of miniature models")
    p.add_argument("--model", choices=models.KINDS + ("all",))
    p.add_argument("--scale", choices=("mini",))
    p.add_argument("--seed", type=int)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    func = args.func
    try:
        return func(resolve(args))
    except DLSVMError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
