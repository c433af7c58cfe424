"""Command-line entry point: ``jigsawhsi train | evaluate | predict``.

Exit status: 0 ok, 1 usage error, 2 I/O error, 3 validation error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import decompose, graph, hsi_io, metrics, tiler, trainer
from .config import RunConfig, load_config
from .errors import FormatError, JigsawError, ValidationError

log = logging.getLogger("jigsawhsi")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 1, 2, 3

CHECKPOINT = "model.ckpt"
DECOMPOSER = "decomp.bin"
HISTORY = "history.csv"
REPORT = "report.txt"
CONFUSION = "confusion.csv"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _class_names(cfg: RunConfig, num_classes: int):
    if not cfg.class_names:
        return None
    if len(cfg.class_names) != num_classes:
        raise ValidationError(f"{len(cfg.class_names)} class names given for {num_classes} classes", "cli-config")
    return list(cfg.class_names)


def _load_scene(cfg: RunConfig):
    cube = hsi_io.read_cube(cfg.cube_path)
    labels = hsi_io.read_labels(cfg.labels_path)
    if cube.data.shape[:2] != labels.shape:
        raise ValidationError(f"cube is {cube.height}x{cube.width} but labels are {labels.height}x{labels.width}", "hsi-io")
    if labels.num_classes < 2:
        raise ValidationError(f"labels hold {labels.num_classes} classes; training needs at least 2", "hsi-io")
    return cube, labels


def _train_mask(cfg: RunConfig, labels: hsi_io.LabelRaster):
    """Pixel mask of the training split, computed from label positions only."""
    rows, cols = np.nonzero(labels.labels)
    train_idx, _ = tiler.split_indices(labels.labels[rows, cols], cfg.train_frac, cfg.seed,
                                       labels.num_classes, cfg.stratified)
    mask = np.zeros(labels.shape, dtype=bool)
    mask[rows[train_idx], cols[train_idx]] = True
    return mask


def _split(cfg, reduced, labels):
    ts = tiler.build_dataset(reduced, labels, cfg.window_size)
    return tiler.stratified_split(ts, cfg.train_frac, cfg.seed, cfg.stratified)


def run_train(cfg: RunConfig, quiet: bool = False) -> metrics.ConfusionMatrix:
    cube, labels = _load_scene(cfg)
    k = labels.num_classes
    names = _class_names(cfg, k)
    fit_mask = _train_mask(cfg, labels) if cfg.fit_scope == "train" else None
    reduced, decomposer = decompose.reduce_cube(cube, cfg.decomposition, cfg.input_channels, cfg.seed, fit_mask)
    train_set, test_set = _split(cfg, reduced, labels)
    log.info("%d training tiles, %d test tiles, %d classes", len(train_set), len(test_set), k)

    model = graph.build(cfg.network_spec(k), seed=cfg.seed)

    def progress(epoch, hist):
        log.info("epoch %3d  loss %.4f  acc %.2f  val_acc %.2f", epoch, hist.train_loss[-1],
                 hist.train_accuracy[-1], hist.val_accuracy[-1])

    model, history = trainer.train(model, train_set, cfg.train_config(), progress=progress)
    cm, _ = trainer.evaluate(model, test_set, class_names=names)

    out = cfg.output_path
    out.mkdir(parents=True, exist_ok=True)
    graph.save_checkpoint(model, out / CHECKPOINT)
    decompose.save_decomposer(decomposer, out / DECOMPOSER)
    history.write_csv(out / HISTORY)
    metrics.write_report(cm, out / REPORT, out / CONFUSION)
    log.info("best epoch %d, stopped at epoch %d", history.best_epoch, history.stopped_epoch)
    if not quiet:
        print(metrics.summary_line(cm))
    return cm


def run_evaluate(cfg: RunConfig, checkpoint, decomposer_path, report_path=None) -> metrics.ConfusionMatrix:
    cube, labels = _load_scene(cfg)
    k = labels.num_classes
    model = graph.load_checkpoint(checkpoint, expected_spec=cfg.network_spec(k))
    d = decompose.load_decomposer(decomposer_path)
    if d.components != cfg.input_channels:
        raise ValidationError(f"decomposer yields {d.components} channels, config expects {cfg.input_channels}", "cli-config")
    reduced = decompose.apply_decomposer(d, cube)
    _, test_set = _split(cfg, reduced, labels)
    cm, _ = trainer.evaluate(model, test_set, class_names=_class_names(cfg, k))
    if report_path is not None:
        report_path = Path(report_path)
        metrics.write_report(cm, report_path, report_path.with_suffix(".csv"))
    return cm


def run_predict(checkpoint, decomposer_path, cube_path, out_prefix, labels_path=None) -> list[Path]:
    spec = graph.read_checkpoint_spec(checkpoint)
    model = graph.load_checkpoint(checkpoint)
    d = decompose.load_decomposer(decomposer_path)
    if d.components != spec.channels:
        raise ValidationError(f"decomposer yields {d.components} channels, network expects {spec.channels}", "cli-config")
    cube = hsi_io.read_cube(cube_path)
    reduced = decompose.apply_decomposer(d, cube)
    labels = hsi_io.read_labels(labels_path) if labels_path else None

    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    written = []
    full = metrics.classify_scene(model, reduced, labels, spec.window, mask_background=False)
    path = out_prefix.with_name(out_prefix.name + "_full.hdr")
    hsi_io.write_class_map(full, path)
    written.append(path)
    if labels is not None:
        masked = metrics.classify_scene(model, reduced, labels, spec.window, mask_background=True)
        path = out_prefix.with_name(out_prefix.name + "_masked.hdr")
        hsi_io.write_class_map(masked, path)
        written.append(path)
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jigsawhsi", description="Hyperspectral pixel classification with a Jigsaw network.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="reduce, tile, train, evaluate and save artifacts")
    p.add_argument("-c", "--config", required=True)

    p = sub.add_parser("evaluate", help="recompute test metrics from a saved model")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("-d", "--decomposer", required=True)
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--report", help="write the report here (default: <output_dir>/eval_report.txt)")

    p = sub.add_parser("predict", help="classify every pixel of a cube")
    p.add_argument("-m", "--model", required=True)
    p.add_argument("-d", "--decomposer", required=True)
    p.add_argument("-i", "--input", required=True, help="cube header")
    p.add_argument("-o", "--output", required=True, help="output prefix for the class maps")
    p.add_argument("-l", "--labels", help="label raster; adds a background-masked map")
    return parser


def _thread_limit():
    raw = os.environ.get("JIGSAWHSI_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"JIGSAWHSI_THREADS must be an integer, got {raw!r}", "cli-config") from None
    if n < 1:
        raise ValidationError("JIGSAWHSI_THREADS must be >= 1", "cli-config")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            if args.command == "train":
                run_train(load_config(args.config))
            elif args.command == "evaluate":
                cfg = load_config(args.config)
                report = args.report or cfg.output_path / "eval_report.txt"
                Path(report).parent.mkdir(parents=True, exist_ok=True)
                cm = run_evaluate(cfg, args.model, args.decomposer, report)
                print(metrics.summary_line(cm))
            else:
                for path in run_predict(args.model, args.decomposer, args.input, args.output, args.labels):
                    print(path)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except JigsawError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
