"""Command line front end.

Exit codes: 0 on success, 1 on input or validation errors (with a
line-numbered diagnostic on stderr where one applies), 2 on usage errors.
Output files are written atomically: a temp file in the target directory
is renamed over the destination, so failures leave no partial outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace
from typing import Callable, Sequence

from . import __version__
from .dataset_io import (
    ClassSet,
    LoadError,
    load_annotations,
    load_detections,
    round9,
    write_detections,
    write_annotations,
    write_report,
)
from .harness import (
    GENERATOR_NAME,
    SweepGrid,
    SynthConfig,
    confusion_report,
    default_confidence_grid,
    default_nms_grid,
    evaluate,
    merge_detections,
    sweep,
    synth_scene,
    write_provenance,
)
from .merging import MergeConfig
from .postprocess import PostprocessConfig
from .tiling import ImageDims, enumerate_tiles, schemes_from_offsets

SCHEMA_VERSION = 1

DEFAULT_OFFSETS = "0x0,0x250,250x0,250x250"


def _parse_pair(text: str, what: str) -> tuple[float, float]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"expected {what} as WIDTHxHEIGHT, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise ValueError(f"malformed {what}: {text!r}") from None


def _parse_offsets(text: str) -> list[tuple[float, float]]:
    return [_parse_pair(part, "offset") for part in text.split(",") if part]


def _parse_grid(text: str) -> tuple[float, ...]:
    """Grid syntax: 'start:stop:step' (inclusive) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"expected START:STOP:STEP, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError(f"grid step must be positive: {text!r}")
        values = []
        k = 0
        while True:
            value = round(start + k * step, 9)
            if value > stop + 1e-12:
                break
            values.append(value)
            k += 1
        return tuple(values)
    return tuple(float(p) for p in text.split(",") if p)


def _atomic_write(path: str, write_fn: Callable) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=os.path.basename(path) + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as stream:
            write_fn(stream)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _emit(path: str | None, write_fn: Callable) -> None:
    if path is None:
        write_fn(sys.stdout)
    else:
        _atomic_write(path, write_fn)


def _load(loader: Callable, path: str, classes: ClassSet):
    try:
        return loader(path, classes)
    except LoadError as exc:
        raise LoadError(f"{path}: {exc}") from None


def _g9(value: float) -> str:
    return f"{float(value):.9g}"


def _cmd_evaluate(args: argparse.Namespace) -> int:
    classes = ClassSet.from_string(args.classes)
    annotations = _load(load_annotations, args.annotations, classes)
    detections = _load(load_detections, args.detections, classes)
    report = evaluate(
        annotations,
        detections,
        PostprocessConfig(args.confidence, args.nms, args.per_class_nms),
        match_threshold=args.match_threshold,
        alpha=args.alpha,
        classes=classes,
        threads=args.threads,
    )
    _emit(args.output, lambda stream: write_report(report, stream, format=args.format))
    return 0


def _cmd_merge(args: argparse.Namespace) -> int:
    classes = ClassSet.from_string(args.classes)
    schemes = schemes_from_offsets(_parse_offsets(args.offsets), args.tiles)
    if len(args.detections) != len(schemes):
        raise ValueError(
            f"got {len(args.detections)} detection files for {len(schemes)} schemes"
        )
    per_scheme = [_load(load_detections, path, classes) for path in args.detections]
    dims = ImageDims(*_parse_pair(args.image_size, "image size"))
    merged_by_image = merge_detections(
        per_scheme,
        dims,
        PostprocessConfig(args.confidence, args.nms, args.per_class_nms),
        MergeConfig(args.match_threshold, schemes),
    )
    merged = [
        replace(d, tiling_id=None, tile_index=None)
        for image in sorted(merged_by_image)
        for d in merged_by_image[image]
    ]
    _emit(args.output, lambda stream: write_detections(merged, stream))
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    classes = ClassSet.from_string(args.classes)
    annotations = _load(load_annotations, args.annotations, classes)
    detections = _load(load_detections, args.detections, classes)
    grid = SweepGrid(
        _parse_grid(args.conf_list) if args.conf_list else default_confidence_grid(),
        _parse_grid(args.nms_list) if args.nms_list else default_nms_grid(),
    )
    result = sweep(
        annotations,
        detections,
        grid,
        match_threshold=args.match_threshold,
        classes=classes,
        per_class_nms=args.per_class_nms,
        threads=args.threads,
    )

    def _write(stream) -> None:
        stream.write("confidence,nms,tp,fp,fn,precision,recall,f1,j0\n")
        for conf_value, nms_value, report in result.cells:
            stream.write(
                ",".join(
                    (
                        _g9(conf_value),
                        _g9(nms_value),
                        str(report.tp),
                        str(report.fp),
                        str(report.fn),
                        _g9(round9(report.precision)),
                        _g9(round9(report.recall)),
                        _g9(round9(report.f1)),
                        _g9(round9(report.j_alpha[1])),
                    )
                )
                + "\n"
            )

    _emit(args.output, _write)
    best_conf, best_nms = result.best
    best_report = next(
        report
        for conf_value, nms_value, report in result.cells
        if (conf_value, nms_value) == result.best
    )
    print(
        f"best f1={_g9(round9(best_report.f1))} "
        f"confidence={_g9(best_conf)} nms={_g9(best_nms)}"
    )
    return 0


def _cmd_confusion(args: argparse.Namespace) -> int:
    classes = ClassSet.from_string(args.classes)
    annotations = _load(load_annotations, args.annotations, classes)
    detections = _load(load_detections, args.detections, classes)
    matrix, recall = confusion_report(
        annotations,
        detections,
        PostprocessConfig(args.confidence, args.nms, args.per_class_nms),
        match_threshold=args.match_threshold,
        classes=classes,
        threads=args.threads,
    )

    def _write_json(stream) -> None:
        doc = {
            "classes": list(classes.names),
            "counts": [list(col) for col in matrix.counts],
            "percent": [[round(p, 1) for p in col] for col in matrix.percent],
            "empty_columns": list(matrix.empty_columns),
            "per_class_recall": {name: round9(recall[name]) for name in classes.names},
        }
        json.dump(doc, stream, indent=2)
        stream.write("\n")

    def _write_csv(stream) -> None:
        stream.write("label," + ",".join(classes.names) + "\n")
        for n, name in enumerate(classes.names):
            row = [name] + [f"{round(matrix.percent[e][n], 1)}" for e in range(len(classes))]
            stream.write(",".join(row) + "\n")

    _emit(args.output, _write_json if args.format == "json" else _write_csv)
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    classes = ClassSet.from_string(args.classes)
    label_confusion = None
    if args.label_confusion is not None:
        with open(args.label_confusion, "r", encoding="utf-8") as stream:
            label_confusion = tuple(tuple(float(v) for v in row) for row in json.load(stream))
    config = SynthConfig(
        dims=ImageDims(*_parse_pair(args.image_size, "image size")),
        n_objects=args.n,
        side_range=_parse_pair(args.sides, "side range"),
        miss_rate=args.miss,
        spurious_rate=args.spurious,
        jitter_frac=args.jitter,
        label_confusion=label_confusion,
        confidence_range=_parse_pair(args.confidence_range, "confidence range"),
        classes=classes,
        seed=args.seed,
        image_id=args.image_id,
    )
    scene = synth_scene(config)
    comments = (f"generator={GENERATOR_NAME}", f"seed={config.seed}")
    _atomic_write(
        f"{args.out_prefix}.annotations.csv",
        lambda stream: write_annotations(scene.annotations, stream, comments),
    )
    _atomic_write(
        f"{args.out_prefix}.detections.csv",
        lambda stream: write_detections(scene.detections, stream, comments),
    )
    _atomic_write(
        f"{args.out_prefix}.provenance.csv",
        lambda stream: write_provenance(scene.provenance, stream, comments),
    )
    print(
        f"wrote {len(scene.annotations)} annotations, {len(scene.detections)} detections "
        f"({len(scene.provenance.spurious)} spurious, {len(scene.provenance.missed)} missed) "
        f"to {args.out_prefix}.*.csv"
    )
    return 0


def _cmd_tile_info(args: argparse.Namespace) -> int:
    dims = ImageDims(*_parse_pair(args.image_size, "image size"))
    schemes = schemes_from_offsets(_parse_offsets(args.offsets), args.tiles)

    def _write(stream) -> None:
        stream.write("scheme_id,row,col,x_min,y_min,x_max,y_max\n")
        for scheme in schemes:
            for tile in enumerate_tiles(dims, scheme):
                rect = tile.rect
                stream.write(
                    f"{tile.scheme_id},{tile.row},{tile.col},"
                    f"{_g9(rect.x_min)},{_g9(rect.y_min)},{_g9(rect.x_max)},{_g9(rect.y_max)}\n"
                )

    _emit(args.output, _write)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tileval",
        description="Tiled object-detection post-processing and evaluation.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"tileval {__version__} (report-schema {SCHEMA_VERSION})",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    common.add_argument("--classes", default="mango", help="comma-separated label set")

    match_parent = argparse.ArgumentParser(add_help=False)
    match_parent.add_argument(
        "--match-threshold",
        type=float,
        default=0.25,
        help="minimum Jaccard for a detection to match a box (default 0.25)",
    )

    post_parent = argparse.ArgumentParser(add_help=False)
    post_parent.add_argument(
        "--confidence", type=float, default=0.7, help="confidence cutoff (default 0.7)"
    )
    post_parent.add_argument(
        "--nms", type=float, default=0.25, help="NMS suppression threshold (default 0.25)"
    )
    post_parent.add_argument(
        "--per-class-nms",
        action="store_true",
        help="suppress only same-label overlaps during NMS",
    )

    tiling_parent = argparse.ArgumentParser(add_help=False)
    tiling_parent.add_argument(
        "--image-size", default="6000x4000", help="image extent as WIDTHxHEIGHT"
    )
    tiling_parent.add_argument(
        "--tiles", type=float, default=500.0, help="tile size in pixels (default 500)"
    )
    tiling_parent.add_argument(
        "--offsets",
        default=DEFAULT_OFFSETS,
        help="comma-separated tiling offsets as OXxOY (default the four half-tile shifts)",
    )

    p = subparsers.add_parser(
        "evaluate",
        parents=[common, match_parent, post_parent],
        help="score detections against annotations",
    )
    p.add_argument("--annotations", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--alpha", type=float, default=0.0, help="unmatched-area penalty (default 0)")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("-o", "--output", default=None, help="report path (default stdout)")
    p.set_defaults(handler=_cmd_evaluate)

    p = subparsers.add_parser(
        "merge",
        parents=[common, match_parent, post_parent, tiling_parent],
        help="consolidate per-scheme tile detections into one list",
    )
    p.add_argument(
        "--detections",
        required=True,
        nargs="+",
        help="one tile-frame detection CSV per tiling scheme, in --offsets order",
    )
    p.add_argument("-o", "--output", default=None, help="merged CSV path (default stdout)")
    p.set_defaults(handler=_cmd_merge)

    p = subparsers.add_parser(
        "sweep",
        parents=[common, match_parent],
        help="score a grid of confidence and NMS thresholds",
    )
    p.add_argument("--annotations", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--conf-list", default=None, help="grid as START:STOP:STEP or comma list")
    p.add_argument("--nms-list", default=None, help="grid as START:STOP:STEP or comma list")
    p.add_argument(
        "--per-class-nms",
        action="store_true",
        help="suppress only same-label overlaps during NMS",
    )
    p.add_argument("-o", "--output", default=None, help="grid CSV path (default stdout)")
    p.set_defaults(handler=_cmd_sweep)

    p = subparsers.add_parser(
        "confusion",
        parents=[common, match_parent, post_parent],
        help="label agreement over matched pairs, plus per-class recall",
    )
    p.add_argument("--annotations", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("-o", "--output", default=None, help="output path (default stdout)")
    p.set_defaults(handler=_cmd_confusion)

    p = subparsers.add_parser(
        "synth",
        parents=[common],
        help="generate a synthetic scene with known correspondence",
    )
    p.add_argument("--n", type=int, default=1000, help="ground-truth box count")
    p.add_argument("--miss", type=float, default=0.1, help="missed fraction (default 0.1)")
    p.add_argument(
        "--spurious", type=float, default=0.05, help="spurious fraction (default 0.05)"
    )
    p.add_argument(
        "--jitter", type=float, default=0.2, help="max offset as a fraction of box side"
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", default="6000x4000", help="image extent as WIDTHxHEIGHT")
    p.add_argument("--sides", default="10x80", help="box side range as LOxHI (default 10x80)")
    p.add_argument(
        "--confidence-range", default="0.7x1.0", help="detection confidence range as LOxHI"
    )
    p.add_argument(
        "--label-confusion",
        default=None,
        help="JSON file with a row-stochastic label flip matrix",
    )
    p.add_argument("--image-id", default="synthetic")
    p.add_argument(
        "-o-prefix",
        "--out-prefix",
        dest="out_prefix",
        required=True,
        help="output prefix; writes PREFIX.{annotations,detections,provenance}.csv",
    )
    p.set_defaults(handler=_cmd_synth)

    p = subparsers.add_parser(
        "tile-info",
        parents=[tiling_parent],
        help="list the tiles of each scheme as CSV",
    )
    p.add_argument("-o", "--output", default=None, help="output path (default stdout)")
    p.set_defaults(handler=_cmd_tile_info)

    return parser


def run(argv: Sequence[str] | None = None) -> int:
    """CLI entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.handler(args)
    except LoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
