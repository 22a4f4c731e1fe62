"""Dataset-level pipelines and the deterministic synthetic scene generator."""

import io
import random

import pytest

from tileval.dataset_io import Annotation, ClassSet, Detection, LoadError
from tileval.geometry import BBox, jaccard
from tileval.harness import (
    Provenance,
    SweepGrid,
    SynthConfig,
    confusion_report,
    default_confidence_grid,
    default_nms_grid,
    end_to_end,
    evaluate,
    load_provenance,
    merge_detections,
    sweep,
    synth_scene,
    write_provenance,
)
from tileval.merging import MergeConfig
from tileval.postprocess import PostprocessConfig
from tileval.tiling import ImageDims, TilingScheme

PASSTHROUGH = PostprocessConfig(confidence_threshold=0.5, nms_threshold=1.0)

SMALL = SynthConfig(
    dims=ImageDims(2000, 1500),
    n_objects=200,
    miss_rate=0.1,
    spurious_rate=0.05,
    jitter_frac=0.2,
    seed=7,
)


def ann(box, label="mango", image="img", id=0):
    return Annotation(image, box, label, id)


def det(box, label="mango", confidence=0.9, image="img"):
    return Detection(image, box, label, confidence)


def grid_scene(count, confidence=0.8, image="img"):
    """Matching annotation/detection pairs on a spaced grid."""
    annotations = []
    detections = []
    for k in range(count):
        box = BBox(120.0 * k, 0.0, 120.0 * k + 50.0, 50.0)
        annotations.append(ann(box, id=k, image=image))
        detections.append(det(box, confidence=confidence, image=image))
    return annotations, detections


# ---------------------------------------------------------------- synth


def test_synth_is_deterministic():
    a = synth_scene(SMALL)
    b = synth_scene(SMALL)
    assert a.annotations == b.annotations
    assert a.detections == b.detections
    assert a.provenance == b.provenance


def test_synth_counts():
    scene = synth_scene(SMALL)
    assert len(scene.annotations) == 200
    assert len(scene.provenance.missed) == 20
    assert len(scene.provenance.matched) == 180
    assert len(scene.provenance.spurious) == 10
    assert len(scene.detections) == 190


def test_synth_provenance_indexing():
    scene = synth_scene(SMALL)
    matched_ann = [i for i, _ in scene.provenance.matched]
    matched_det = [j for _, j in scene.provenance.matched]
    assert sorted(matched_ann + list(scene.provenance.missed)) == list(range(200))
    assert matched_det == list(range(180))
    assert scene.provenance.spurious == tuple(range(180, 190))
    for k, annotation in enumerate(scene.annotations):
        assert annotation.id == k


def test_synth_ground_truth_stays_separated():
    scene = synth_scene(SMALL)
    boxes = [a.box for a in scene.annotations]
    rng = random.Random(11)
    for _ in range(500):
        i, j = rng.sample(range(len(boxes)), 2)
        assert jaccard(boxes[i], boxes[j]) <= 0.1 + 1e-12
    spurious = [scene.detections[j].box for j in scene.provenance.spurious]
    for sp in spurious:
        for box in boxes:
            assert jaccard(sp, box) <= 0.1 + 1e-12


def test_synth_detections_overlap_their_source():
    scene = synth_scene(SMALL)
    floor = 0.64 / 1.36  # pure translation by at most 0.2 of each side
    for i, j in scene.provenance.matched:
        value = jaccard(scene.annotations[i].box, scene.detections[j].box)
        assert value >= floor - 1e-9


def test_synth_boxes_stay_inside_the_image():
    scene = synth_scene(SMALL)
    w, h = SMALL.dims.width, SMALL.dims.height
    for box in [a.box for a in scene.annotations] + [d.box for d in scene.detections]:
        assert box.x_min >= -1e-9 and box.y_min >= -1e-9
        assert box.x_max <= w + 1e-9 and box.y_max <= h + 1e-9


def test_synth_confidence_range_respected():
    scene = synth_scene(SMALL)
    assert all(0.7 <= d.confidence <= 1.0 for d in scene.detections)
    shifted = synth_scene(
        SynthConfig(dims=ImageDims(2000, 1500), n_objects=50, confidence_range=(0.2, 0.4), seed=3)
    )
    assert all(0.2 <= d.confidence <= 0.4 for d in shifted.detections)


def test_synth_warns_on_large_jitter():
    config = SynthConfig(dims=ImageDims(2000, 1500), n_objects=5, jitter_frac=0.3, seed=1)
    with pytest.warns(UserWarning, match="jitter_frac"):
        synth_scene(config)


def test_synth_label_flip_matrix():
    classes = ClassSet(("a", "b"))
    flip = SynthConfig(
        dims=ImageDims(2000, 1500),
        n_objects=60,
        miss_rate=0.0,
        spurious_rate=0.0,
        classes=classes,
        label_confusion=((0.0, 1.0), (1.0, 0.0)),
        seed=5,
    )
    scene = synth_scene(flip)
    for i, j in scene.provenance.matched:
        assert scene.detections[j].label != scene.annotations[i].label
    identity = synth_scene(
        SynthConfig(
            dims=ImageDims(2000, 1500),
            n_objects=60,
            miss_rate=0.0,
            spurious_rate=0.0,
            classes=classes,
            label_confusion=((1.0, 0.0), (0.0, 1.0)),
            seed=5,
        )
    )
    for i, j in identity.provenance.matched:
        assert identity.detections[j].label == identity.annotations[i].label


def test_synth_rejects_bad_config():
    with pytest.raises(ValueError):
        SynthConfig(n_objects=-1)
    with pytest.raises(ValueError):
        SynthConfig(miss_rate=1.5)
    with pytest.raises(ValueError):
        SynthConfig(side_range=(0.0, 10.0))
    with pytest.raises(ValueError):
        SynthConfig(label_confusion=((0.5, 0.5),), classes=ClassSet(("a", "b")))
    with pytest.raises(ValueError):
        SynthConfig(label_confusion=((0.7, 0.2), (0.5, 0.5)), classes=ClassSet(("a", "b")))


def test_synth_overcrowded_scene_raises():
    config = SynthConfig(dims=ImageDims(100, 100), n_objects=500, side_range=(40.0, 60.0), seed=0)
    with pytest.raises(ValueError, match="attempts"):
        synth_scene(config)


# ---------------------------------------------------------------- evaluate


def test_evaluate_recovers_planted_counts():
    scene = synth_scene(SMALL)
    report = evaluate(scene.annotations, scene.detections, PASSTHROUGH)
    assert (report.tp, report.fp, report.fn) == (180, 10, 20)
    assert report.recall == 0.9
    assert report.precision == 180 / 190


def test_evaluate_config_echo_and_jaccard_key():
    annotations, detections = grid_scene(4)
    report = evaluate(
        annotations, detections, PostprocessConfig(0.6, 0.4), match_threshold=0.3, alpha=0.5
    )
    assert report.config == {
        "confidence_threshold": 0.6,
        "nms_threshold": 0.4,
        "match_threshold": 0.3,
    }
    assert report.j_alpha[0] == 0.5
    assert report.j_alpha[1] == 1.0


def test_evaluate_with_classes_builds_confusion():
    classes = ClassSet(("a", "b"))
    annotations = [ann(BBox(0, 0, 10, 10), "a"), ann(BBox(50, 0, 60, 10), "b", id=1)]
    detections = [det(BBox(0, 0, 10, 10), "b"), det(BBox(50, 0, 60, 10), "b")]
    report = evaluate(annotations, detections, PASSTHROUGH, classes=classes)
    assert report.confusion is not None
    assert report.confusion.counts == ((0, 1), (0, 1))
    assert sum(sum(col) for col in report.confusion.counts) == report.tp


def test_evaluate_multi_image_isolation():
    """Boxes never match across images even when coordinates coincide."""
    annotations = [ann(BBox(0, 0, 10, 10), image="left")]
    detections = [det(BBox(0, 0, 10, 10), image="right")]
    report = evaluate(annotations, detections, PASSTHROUGH)
    assert (report.tp, report.fp, report.fn) == (0, 1, 1)


def test_evaluate_threads_do_not_change_results():
    pieces = []
    for image in ("a", "b", "c", "d"):
        anns, dets = grid_scene(6, image=image)
        pieces.append((anns, dets))
    annotations = [a for anns, _ in pieces for a in anns]
    detections = [d for _, dets in pieces for d in dets]
    classes = ClassSet(("mango",))
    serial = evaluate(annotations, detections, PASSTHROUGH, classes=classes, alpha=1.0)
    threaded = evaluate(annotations, detections, PASSTHROUGH, classes=classes, alpha=1.0, threads=2)
    assert serial == threaded
    with pytest.raises(ValueError):
        evaluate(annotations, detections, PASSTHROUGH, threads=0)


# ---------------------------------------------------------------- sweep


def test_default_grids():
    conf = default_confidence_grid()
    nms_values = default_nms_grid()
    assert len(conf) == 12
    assert conf[0] == 0.35 and conf[-1] == 0.9
    assert len(nms_values) == 11
    assert nms_values[0] == 0.005 and nms_values[1] == 0.05 and nms_values[-1] == 0.5


def test_sweep_grid_validation():
    with pytest.raises(ValueError):
        SweepGrid(confidence_values=())
    with pytest.raises(ValueError):
        SweepGrid(nms_values=(0.5, 0.25))
    with pytest.raises(ValueError):
        SweepGrid(confidence_values=(0.5, 1.5))


def test_sweep_step_function_and_tie_break():
    annotations, detections = grid_scene(5, confidence=0.8)
    grid = SweepGrid(confidence_values=(0.7, 0.8, 0.9), nms_values=(0.25, 0.5))
    result = sweep(annotations, detections, grid)
    assert [(c, n) for c, n, _ in result.cells] == [
        (0.7, 0.25),
        (0.7, 0.5),
        (0.8, 0.25),
        (0.8, 0.5),
        (0.9, 0.25),
        (0.9, 0.5),
    ]
    for conf_value, _, report in result.cells:
        assert report.f1 == (1.0 if conf_value <= 0.8 else 0.0)
        assert report.j_alpha[0] == 0.0
    # four cells tie at f1 = 1.0; lowest confidence then lowest nms wins
    assert result.best == (0.7, 0.25)


def test_sweep_cell_matches_standalone_evaluate():
    scene = synth_scene(SynthConfig(dims=ImageDims(2000, 1500), n_objects=80, seed=21))
    grid = SweepGrid(confidence_values=(0.75, 0.85), nms_values=(0.25,))
    result = sweep(scene.annotations, scene.detections, grid)
    standalone = evaluate(
        scene.annotations, scene.detections, PostprocessConfig(0.85, 0.25), alpha=0.0
    )
    assert result.cells[1][2] == standalone


# ---------------------------------------------------------------- tiled runs

DIMS = ImageDims(1000, 1000)
SCHEME_A = TilingScheme(1, 0, 0, 500)
SCHEME_B = TilingScheme(2, 250, 250, 500)


def tiled(box, scheme, tile, confidence=0.9, image="img"):
    return Detection(image, box, "mango", confidence, scheme, tile)


def fragment_scenario():
    """One object at (480, 480)..(530, 530), astride scheme A's interior
    corner at (500, 500) but interior to scheme B's center tile. Boxes are
    in tile-frame coordinates."""
    scheme_a = [
        tiled(BBox(480, 480, 500, 500), 1, (0, 0)),
        tiled(BBox(0, 480, 30, 500), 1, (0, 1)),
        tiled(BBox(480, 0, 500, 30), 1, (1, 0)),
        tiled(BBox(0, 0, 30, 30), 1, (1, 1)),
    ]
    scheme_b = [tiled(BBox(230, 230, 280, 280), 2, (1, 1))]
    return scheme_a, scheme_b


def test_merge_detections_votes_out_fragments():
    scheme_a, scheme_b = fragment_scenario()
    merge = MergeConfig(schemes=(SCHEME_A, SCHEME_B))
    merged = merge_detections([scheme_a, scheme_b], DIMS, PASSTHROUGH, merge)
    assert list(merged) == ["img"]
    assert len(merged["img"]) == 1
    assert merged["img"][0].box == BBox(480, 480, 530, 530)


def test_end_to_end_scores_the_merged_output():
    scheme_a, scheme_b = fragment_scenario()
    annotations = [ann(BBox(480, 480, 530, 530))]
    report = end_to_end(
        annotations,
        [scheme_a, scheme_b],
        DIMS,
        post=PASSTHROUGH,
        merge=MergeConfig(schemes=(SCHEME_A, SCHEME_B)),
    )
    assert (report.tp, report.fp, report.fn) == (1, 0, 0)
    assert report.f1 == 1.0


def test_merge_detections_rejects_malformed_input():
    scheme_a, scheme_b = fragment_scenario()
    merge = MergeConfig(schemes=(SCHEME_A, SCHEME_B))
    with pytest.raises(ValueError, match="detection lists"):
        merge_detections([scheme_a], DIMS, PASSTHROUGH, merge)
    bare = [det(BBox(0, 0, 10, 10))]
    with pytest.raises(ValueError, match="provenance"):
        merge_detections([bare, scheme_b], DIMS, PASSTHROUGH, merge)
    mislabeled = [tiled(BBox(0, 0, 10, 10), 2, (0, 0))]
    with pytest.raises(ValueError, match="tiling_id"):
        merge_detections([mislabeled, scheme_b], DIMS, PASSTHROUGH, merge)
    lost = [tiled(BBox(0, 0, 10, 10), 1, (9, 9))]
    with pytest.raises(ValueError, match="unknown tile"):
        merge_detections([lost, scheme_b], DIMS, PASSTHROUGH, merge)


def test_tile_frame_confidence_filter_applies():
    scheme_a, scheme_b = fragment_scenario()
    low = [Detection("img", BBox(100, 100, 140, 140), "mango", 0.4, 2, (1, 1))]
    merged = merge_detections(
        [scheme_a, scheme_b + low],
        DIMS,
        PostprocessConfig(0.5, 1.0),
        MergeConfig(schemes=(SCHEME_A, SCHEME_B)),
    )
    assert len(merged["img"]) == 1


# ---------------------------------------------------------------- confusion


def test_confusion_report_flow():
    classes = ClassSet(("a", "b"))
    annotations = [
        ann(BBox(0, 0, 10, 10), "a"),
        ann(BBox(50, 0, 60, 10), "a", id=1),
        ann(BBox(100, 0, 110, 10), "b", id=2),
        ann(BBox(150, 0, 160, 10), "b", id=3),
    ]
    detections = [
        det(BBox(0, 0, 10, 10), "a"),
        det(BBox(50, 0, 60, 10), "b"),
        det(BBox(100, 0, 110, 10), "b"),
    ]
    table, recall = confusion_report(annotations, detections, PASSTHROUGH, classes=classes)
    assert table.counts == ((1, 1), (0, 1))
    assert recall == {"a": 1.0, "b": 0.5}


# ---------------------------------------------------------------- provenance io


def test_provenance_round_trip():
    scene = synth_scene(SMALL)
    sink = io.StringIO()
    write_provenance(scene.provenance, sink, comments=("seed=7",))
    text = sink.getvalue()
    assert text.startswith("# seed=7\nkind,annotation_id,detection_id\n")
    assert load_provenance(io.StringIO(text)) == scene.provenance


def test_provenance_rejects_bad_rows():
    with pytest.raises(LoadError, match="header"):
        load_provenance(io.StringIO("a,b,c\nmatch,0,0\n"))
    header = "kind,annotation_id,detection_id\n"
    with pytest.raises(LoadError, match="unknown provenance kind"):
        load_provenance(io.StringIO(header + "typo,0,0\n"))
    with pytest.raises(LoadError, match="malformed"):
        load_provenance(io.StringIO(header + "match,zero,0\n"))
    assert load_provenance(io.StringIO(header)) == Provenance((), (), ())
