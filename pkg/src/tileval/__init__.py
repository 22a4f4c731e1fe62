"""Post-processing and evaluation for tiled object detection.

The package takes raw detector output over overlapping image tilings and
turns it into per-image detections and scores: edge filtering, cross-tiling
merging, confidence and overlap suppression, greedy box matching, and the
derived precision / recall / Jaccard / confusion metrics. A seeded synthetic
scene generator provides datasets whose correct answers are known exactly.
"""

__version__ = "0.1.0"

from .dataset_io import (
    Annotation,
    ClassSet,
    Detection,
    LoadError,
    load_annotations,
    load_detections,
    read_report,
    round9,
    write_annotations,
    write_detections,
    write_report,
)
from .geometry import BBox, area, intersection_area, jaccard, union_area
from .harness import (
    GENERATOR_NAME,
    Provenance,
    SweepGrid,
    SweepResult,
    SynthConfig,
    SynthScene,
    confusion_report,
    end_to_end,
    evaluate,
    load_provenance,
    merge_detections,
    sweep,
    synth_scene,
    write_provenance,
)
from .matching import JaccardMatrix, MatchResult, greedy_match, jaccard_matrix
from .merging import MergeConfig, filter_integral, merge_tilings
from .metrics import (
    ConfusionMatrix,
    ScoreReport,
    confusion,
    global_jaccard,
    per_class_recall,
    score,
    score_from_counts,
)
from .postprocess import PostprocessConfig, apply_postprocess, filter_confidence, nms
from .tiling import (
    ImageDims,
    Tile,
    TilingScheme,
    assign_to_tiles,
    default_schemes,
    enumerate_tiles,
    is_edge_incident,
    schemes_from_offsets,
    to_image_frame,
    to_tile_frame,
)

__all__ = [
    "__version__",
    "Annotation",
    "BBox",
    "ClassSet",
    "ConfusionMatrix",
    "Detection",
    "GENERATOR_NAME",
    "ImageDims",
    "JaccardMatrix",
    "LoadError",
    "MatchResult",
    "MergeConfig",
    "PostprocessConfig",
    "Provenance",
    "ScoreReport",
    "SweepGrid",
    "SweepResult",
    "SynthConfig",
    "SynthScene",
    "Tile",
    "TilingScheme",
    "apply_postprocess",
    "area",
    "assign_to_tiles",
    "confusion",
    "confusion_report",
    "default_schemes",
    "end_to_end",
    "enumerate_tiles",
    "evaluate",
    "filter_confidence",
    "filter_integral",
    "global_jaccard",
    "greedy_match",
    "intersection_area",
    "is_edge_incident",
    "jaccard",
    "jaccard_matrix",
    "load_annotations",
    "load_detections",
    "load_provenance",
    "merge_detections",
    "merge_tilings",
    "nms",
    "per_class_recall",
    "read_report",
    "round9",
    "schemes_from_offsets",
    "score",
    "score_from_counts",
    "sweep",
    "synth_scene",
    "to_image_frame",
    "to_tile_frame",
    "union_area",
    "write_annotations",
    "write_detections",
    "write_provenance",
    "write_report",
]
