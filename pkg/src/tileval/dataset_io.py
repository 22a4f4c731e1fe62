"""File formats: annotation/detection CSV, report JSON/CSV, and their types.

All text IO is UTF-8 with comma separators and '.' decimal marks. Column
headers are mandatory; lines starting with '#' are treated as comments so
generated files can carry provenance headers (generator name, seed).
"""

from __future__ import annotations

import csv
import io
import json
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .geometry import BBox

__all__ = [
    "LoadError",
    "ClassSet",
    "Annotation",
    "Detection",
    "ANNOTATION_HEADER",
    "DETECTION_HEADER",
    "DETECTION_HEADER_TILED",
    "load_annotations",
    "load_detections",
    "write_annotations",
    "write_detections",
    "write_report",
    "read_report",
    "round9",
]

ANNOTATION_HEADER = ("image_id", "x_min", "y_min", "x_max", "y_max", "label")
DETECTION_HEADER = ANNOTATION_HEADER + ("confidence",)
DETECTION_HEADER_TILED = DETECTION_HEADER + ("tiling_id", "tile_row", "tile_col")


class LoadError(ValueError):
    """Input file rejected; the message names the offending line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ClassSet:
    """Ordered label vocabulary; order drives confusion-matrix layout."""

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        names = tuple(str(n) for n in self.names)
        if not names:
            raise ValueError("class set must not be empty")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate class names: {names}")
        if any(not n for n in names):
            raise ValueError("class names must be non-empty")
        object.__setattr__(self, "names", names)

    @classmethod
    def from_string(cls, spec: str) -> "ClassSet":
        """Build from a comma-separated list such as 'Kent,Keitt,Bdh'."""
        return cls(tuple(part.strip() for part in spec.split(",")))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(f"unknown label {name!r}") from None

    def __contains__(self, name: object) -> bool:
        return name in self.names

    def __iter__(self):
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class Annotation:
    """Expert-marked ground-truth box. ids are per-image load ordinals."""

    image_id: str
    box: BBox
    label: str
    id: int


@dataclass(frozen=True)
class Detection:
    """Network-predicted box with confidence.

    tiling_id and tile_index identify the source tile for detections that
    were produced tile by tile; both are None once that provenance is gone.
    """

    image_id: str
    box: BBox
    label: str
    confidence: float
    tiling_id: int | None = None
    tile_index: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        conf = float(self.confidence)
        if not 0.0 <= conf <= 1.0:
            raise ValueError(f"confidence out of range: {conf}")
        object.__setattr__(self, "confidence", conf)
        if (self.tiling_id is None) != (self.tile_index is None):
            raise ValueError("tiling_id and tile_index must be set together")


@contextmanager
def _text_reader(source) -> Iterator:
    """Yield a text stream for a path or file-like source without closing
    streams owned by the caller."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as stream:
            yield stream
    elif isinstance(source, io.TextIOBase):
        yield source
    elif hasattr(source, "read"):
        wrapper = io.TextIOWrapper(source, encoding="utf-8", newline="")
        try:
            yield wrapper
        finally:
            wrapper.detach()
    else:
        raise TypeError(f"unsupported source: {type(source).__name__}")


@contextmanager
def _text_writer(sink) -> Iterator:
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8", newline="") as stream:
            yield stream
    elif isinstance(sink, io.TextIOBase):
        yield sink
    elif hasattr(sink, "write"):
        wrapper = io.TextIOWrapper(sink, encoding="utf-8", newline="")
        try:
            yield wrapper
            wrapper.flush()
        finally:
            wrapper.detach()
    else:
        raise TypeError(f"unsupported sink: {type(sink).__name__}")


def _data_rows(stream) -> Iterator[tuple[int, list[str]]]:
    """Yield (physical line number, cells), skipping blanks and '#' comments."""
    reader = csv.reader(stream)
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if row[0].lstrip().startswith("#"):
            continue
        yield line, [cell.strip() for cell in row]


def _check_header(row: list[str], line: int, allowed: Sequence[tuple[str, ...]]) -> tuple[str, ...]:
    for candidate in allowed:
        if row == list(candidate):
            return candidate
    raise LoadError(f"missing or invalid header: {','.join(row)!r}", line)


def _parse_coord(cell: str, name: str, line: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise LoadError(f"malformed {name}: {cell!r}", line) from None
    return value


def _parse_box(cells: Sequence[str], line: int) -> BBox:
    x_min = _parse_coord(cells[0], "x_min", line)
    y_min = _parse_coord(cells[1], "y_min", line)
    x_max = _parse_coord(cells[2], "x_max", line)
    y_max = _parse_coord(cells[3], "y_max", line)
    if x_min >= x_max or y_min >= y_max:
        raise LoadError(f"empty box: ({x_min}, {y_min}, {x_max}, {y_max})", line)
    try:
        return BBox(x_min, y_min, x_max, y_max)
    except ValueError as exc:
        raise LoadError(str(exc), line) from None


def _check_label(label: str, classes: ClassSet, line: int) -> str:
    if label not in classes:
        raise LoadError(f"unknown label {label!r}", line)
    return label


def load_annotations(source, classes: ClassSet) -> list[Annotation]:
    """Read ground-truth boxes from CSV; ids count up from 0 per image.

    Row order is preserved. An empty or header-only file yields an empty
    list. Any malformed row raises LoadError naming the line.
    """
    annotations: list[Annotation] = []
    next_id: dict[str, int] = {}
    with _text_reader(source) as stream:
        rows = _data_rows(stream)
        first = next(rows, None)
        if first is None:
            return annotations
        _check_header(first[1], first[0], (ANNOTATION_HEADER,))
        for line, cells in rows:
            if len(cells) != len(ANNOTATION_HEADER):
                raise LoadError(f"expected {len(ANNOTATION_HEADER)} columns, got {len(cells)}", line)
            image_id = cells[0]
            if not image_id:
                raise LoadError("empty image_id", line)
            box = _parse_box(cells[1:5], line)
            label = _check_label(cells[5], classes, line)
            ordinal = next_id.get(image_id, 0)
            next_id[image_id] = ordinal + 1
            annotations.append(Annotation(image_id, box, label, ordinal))
    return annotations


def _parse_tile_ref(cells: Sequence[str], line: int) -> tuple[int | None, tuple[int, int] | None]:
    filled = [c for c in cells if c != ""]
    if not filled:
        return None, None
    if len(filled) != 3:
        raise LoadError("tiling_id, tile_row and tile_col must be set together", line)
    try:
        tiling_id, row, col = (int(c) for c in cells)
    except ValueError:
        raise LoadError(f"malformed tile reference: {','.join(cells)!r}", line) from None
    return tiling_id, (row, col)


def load_detections(source, classes: ClassSet) -> list[Detection]:
    """Read predicted boxes from CSV, preserving row order.

    Accepts the plain 7-column layout or the 10-column layout with tile
    provenance; in the latter, the three tile cells may be left empty.
    """
    detections: list[Detection] = []
    with _text_reader(source) as stream:
        rows = _data_rows(stream)
        first = next(rows, None)
        if first is None:
            return detections
        header = _check_header(first[1], first[0], (DETECTION_HEADER, DETECTION_HEADER_TILED))
        for line, cells in rows:
            if len(cells) != len(header):
                raise LoadError(f"expected {len(header)} columns, got {len(cells)}", line)
            image_id = cells[0]
            if not image_id:
                raise LoadError("empty image_id", line)
            box = _parse_box(cells[1:5], line)
            label = _check_label(cells[5], classes, line)
            confidence = _parse_coord(cells[6], "confidence", line)
            if not 0.0 <= confidence <= 1.0:
                raise LoadError(f"confidence out of range: {confidence}", line)
            tiling_id, tile_index = (None, None)
            if header is DETECTION_HEADER_TILED:
                tiling_id, tile_index = _parse_tile_ref(cells[7:10], line)
            detections.append(
                Detection(image_id, box, label, confidence, tiling_id, tile_index)
            )
    return detections


def _format_float(value: float) -> str:
    # repr round-trips float64 exactly, keeping load(write(x)) == x.
    return repr(float(value))


def write_annotations(annotations: Iterable[Annotation], sink, comments: Sequence[str] = ()) -> None:
    """Write annotations as CSV; `comments` become leading '#' lines."""
    with _text_writer(sink) as stream:
        for comment in comments:
            stream.write(f"# {comment}\n")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(ANNOTATION_HEADER)
        for a in annotations:
            writer.writerow(
                (
                    a.image_id,
                    _format_float(a.box.x_min),
                    _format_float(a.box.y_min),
                    _format_float(a.box.x_max),
                    _format_float(a.box.y_max),
                    a.label,
                )
            )


def write_detections(detections: Sequence[Detection], sink, comments: Sequence[str] = ()) -> None:
    """Write detections as CSV, adding tile columns when any row has them."""
    tiled = any(d.tiling_id is not None for d in detections)
    with _text_writer(sink) as stream:
        for comment in comments:
            stream.write(f"# {comment}\n")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(DETECTION_HEADER_TILED if tiled else DETECTION_HEADER)
        for d in detections:
            row = [
                d.image_id,
                _format_float(d.box.x_min),
                _format_float(d.box.y_min),
                _format_float(d.box.x_max),
                _format_float(d.box.y_max),
                d.label,
                _format_float(d.confidence),
            ]
            if tiled:
                if d.tiling_id is None:
                    row += ["", "", ""]
                else:
                    row += [str(d.tiling_id), str(d.tile_index[0]), str(d.tile_index[1])]
            writer.writerow(row)


def round9(value: float) -> float:
    """Round to 9 significant digits, the precision used in serialized reports."""
    return float(f"{float(value):.9g}")


def _report_doc(report) -> dict:
    confusion = None
    if report.confusion is not None:
        c = report.confusion
        confusion = {
            "classes": list(c.classes.names),
            # column-major: one inner list per expert class, rows in class order
            "counts": [list(col) for col in c.counts],
            "percent": [[round(p, 1) for p in col] for col in c.percent],
            "empty_columns": list(c.empty_columns),
        }
    alpha, value = report.j_alpha if report.j_alpha is not None else (0.0, 0.0)
    return {
        "counts": {"tp": report.tp, "fp": report.fp, "fn": report.fn},
        "precision": round9(report.precision),
        "recall": round9(report.recall),
        "f1": round9(report.f1),
        "j_alpha": {"alpha": round9(alpha), "value": round9(value)},
        "confusion": confusion,
        "config": {k: round9(v) for k, v in (report.config or {}).items()},
    }


def write_report(report, sink, format: str = "json") -> None:
    """Serialize a ScoreReport; floats carry 9 significant digits.

    JSON reports round-trip through read_report bit-exactly. The CSV form is
    a flat key,value table for spreadsheet use.
    """
    doc = _report_doc(report)
    with _text_writer(sink) as stream:
        if format == "json":
            json.dump(doc, stream, indent=2)
            stream.write("\n")
        elif format == "csv":
            writer = csv.writer(stream, lineterminator="\n")
            writer.writerow(("key", "value"))
            for name in ("tp", "fp", "fn"):
                writer.writerow((f"counts.{name}", doc["counts"][name]))
            for name in ("precision", "recall", "f1"):
                writer.writerow((name, _format_float(doc[name])))
            writer.writerow(("j_alpha.alpha", _format_float(doc["j_alpha"]["alpha"])))
            writer.writerow(("j_alpha.value", _format_float(doc["j_alpha"]["value"])))
            if doc["confusion"] is not None:
                classes = doc["confusion"]["classes"]
                for ci, expert in enumerate(classes):
                    for ri, network in enumerate(classes):
                        writer.writerow(
                            (f"confusion.counts.{expert}.{network}", doc["confusion"]["counts"][ci][ri])
                        )
                for ci, expert in enumerate(classes):
                    for ri, network in enumerate(classes):
                        writer.writerow(
                            (f"confusion.percent.{expert}.{network}", doc["confusion"]["percent"][ci][ri])
                        )
                for name in doc["confusion"]["empty_columns"]:
                    writer.writerow(("confusion.empty_column", name))
            for key, value in doc["config"].items():
                writer.writerow((f"config.{key}", _format_float(value)))
        else:
            raise ValueError(f"unknown report format: {format!r}")


def read_report(source):
    """Read a JSON report written by write_report back into a ScoreReport."""
    # imported here to keep dataset_io importable from metrics
    from .metrics import ConfusionMatrix, ScoreReport

    with _text_reader(source) as stream:
        doc = json.load(stream)
    confusion = None
    if doc.get("confusion") is not None:
        c = doc["confusion"]
        confusion = ConfusionMatrix(
            classes=ClassSet(tuple(c["classes"])),
            counts=tuple(tuple(int(v) for v in col) for col in c["counts"]),
            percent=tuple(tuple(float(v) for v in col) for col in c["percent"]),
            empty_columns=tuple(c["empty_columns"]),
        )
    return ScoreReport(
        tp=int(doc["counts"]["tp"]),
        fp=int(doc["counts"]["fp"]),
        fn=int(doc["counts"]["fn"]),
        precision=float(doc["precision"]),
        recall=float(doc["recall"]),
        f1=float(doc["f1"]),
        j_alpha=(float(doc["j_alpha"]["alpha"]), float(doc["j_alpha"]["value"])),
        confusion=confusion,
        config={k: float(v) for k, v in doc["config"].items()},
    )
