"""Command line behavior, exercised in process through run()."""

import json

import pytest

from tileval.cli import run

ANNOTATIONS = """image_id,x_min,y_min,x_max,y_max,label
img,0,0,10,10,mango
img,50,0,60,10,mango
img,100,0,110,10,mango
"""

DETECTIONS = """image_id,x_min,y_min,x_max,y_max,label,confidence
img,1,0,11,10,mango,0.9
img,50,0,60,10,mango,0.8
img,300,0,310,10,mango,0.95
"""


@pytest.fixture
def dataset(tmp_path):
    ann_path = tmp_path / "annotations.csv"
    det_path = tmp_path / "detections.csv"
    ann_path.write_text(ANNOTATIONS)
    det_path.write_text(DETECTIONS)
    return str(ann_path), str(det_path)


def test_version_exits_zero(capsys):
    assert run(["--version"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("tileval ")
    assert "report-schema 1" in out


def test_missing_required_argument_is_usage_error(capsys):
    assert run(["evaluate", "--annotations", "x.csv"]) == 2
    assert "--detections" in capsys.readouterr().err


def test_unknown_command_is_usage_error():
    assert run(["frobnicate"]) == 2


def test_malformed_csv_names_file_and_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("image_id,x_min,y_min,x_max,y_max,label\nimg,0,0,oops,10,mango\n")
    det = tmp_path / "det.csv"
    det.write_text(DETECTIONS)
    code = run(["evaluate", "--annotations", str(bad), "--detections", str(det)])
    err = capsys.readouterr().err
    assert code == 1
    assert err.startswith("error: ")
    assert "bad.csv" in err and "line 2" in err


def test_missing_file_is_reported(tmp_path, capsys):
    det = tmp_path / "det.csv"
    det.write_text(DETECTIONS)
    code = run(["evaluate", "--annotations", str(tmp_path / "nope.csv"), "--detections", str(det)])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_evaluate_json_report(dataset, tmp_path, capsys):
    ann_path, det_path = dataset
    out = tmp_path / "report.json"
    code = run(
        [
            "evaluate",
            "--annotations",
            ann_path,
            "--detections",
            det_path,
            "--confidence",
            "0.5",
            "--nms",
            "0.25",
            "--alpha",
            "1.0",
            "-o",
            str(out),
        ]
    )
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["counts"] == {"tp": 2, "fp": 1, "fn": 1}
    assert doc["precision"] == pytest.approx(2 / 3, abs=1e-9)
    assert doc["config"]["confidence_threshold"] == 0.5
    assert doc["config"]["nms_threshold"] == 0.25
    assert doc["config"]["match_threshold"] == 0.25
    assert doc["j_alpha"]["alpha"] == 1.0


def test_evaluate_stdout_and_csv_format(dataset, capsys):
    ann_path, det_path = dataset
    code = run(
        [
            "evaluate",
            "--annotations",
            ann_path,
            "--detections",
            det_path,
            "--confidence",
            "0.5",
            "--format",
            "csv",
        ]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("key,value\n")
    assert "\ncounts.tp,2\n" in out


def test_evaluate_confidence_cutoff_applies(dataset, tmp_path):
    """Raising the cutoff to 0.85 drops the 0.8 detection."""
    ann_path, det_path = dataset
    out = tmp_path / "r.json"
    assert run(
        [
            "evaluate",
            "--annotations",
            ann_path,
            "--detections",
            det_path,
            "--confidence",
            "0.85",
            "-o",
            str(out),
        ]
    ) == 0
    doc = json.loads(out.read_text())
    assert doc["counts"] == {"tp": 1, "fp": 1, "fn": 2}


def test_reports_are_byte_deterministic(dataset, tmp_path):
    ann_path, det_path = dataset
    first = tmp_path / "a.json"
    second = tmp_path / "b.json"
    for path in (first, second):
        assert run(
            ["evaluate", "--annotations", ann_path, "--detections", det_path, "-o", str(path)]
        ) == 0
    assert first.read_bytes() == second.read_bytes()


def test_sweep_writes_grid_and_best_line(dataset, tmp_path, capsys):
    ann_path, det_path = dataset
    out = tmp_path / "grid.csv"
    code = run(
        [
            "sweep",
            "--annotations",
            ann_path,
            "--detections",
            det_path,
            "--conf-list",
            "0.5:0.9:0.2",
            "--nms-list",
            "0.25,0.5",
            "-o",
            str(out),
        ]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "confidence,nms,tp,fp,fn,precision,recall,f1,j0"
    assert len(lines) == 1 + 3 * 2
    assert lines[1].startswith("0.5,0.25,2,1,1,")
    best = capsys.readouterr().out
    assert best.startswith("best f1=")
    assert "confidence=0.5" in best and "nms=0.25" in best


def test_sweep_rejects_malformed_grid(dataset, capsys):
    ann_path, det_path = dataset
    code = run(
        [
            "sweep",
            "--annotations",
            ann_path,
            "--detections",
            det_path,
            "--conf-list",
            "0.9:0.5:0.1",
        ]
    )
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_confusion_json_and_csv(tmp_path, capsys):
    ann_path = tmp_path / "a.csv"
    det_path = tmp_path / "d.csv"
    ann_path.write_text(
        "image_id,x_min,y_min,x_max,y_max,label\n"
        "img,0,0,10,10,ripe\n"
        "img,50,0,60,10,green\n"
    )
    det_path.write_text(
        "image_id,x_min,y_min,x_max,y_max,label,confidence\n"
        "img,0,0,10,10,ripe,0.9\n"
        "img,50,0,60,10,ripe,0.9\n"
    )
    out = tmp_path / "confusion.json"
    code = run(
        [
            "confusion",
            "--annotations",
            str(ann_path),
            "--detections",
            str(det_path),
            "--classes",
            "ripe,green",
            "-o",
            str(out),
        ]
    )
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["classes"] == ["ripe", "green"]
    assert doc["counts"] == [[1, 0], [1, 0]]
    assert doc["percent"] == [[100.0, 0.0], [100.0, 0.0]]
    assert doc["empty_columns"] == []
    assert doc["per_class_recall"] == {"ripe": 1.0, "green": 1.0}

    code = run(
        [
            "confusion",
            "--annotations",
            str(ann_path),
            "--detections",
            str(det_path),
            "--classes",
            "ripe,green",
            "--format",
            "csv",
        ]
    )
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "label,ripe,green"
    assert lines[1] == "ripe,100.0,100.0"
    assert lines[2] == "green,0.0,0.0"


def test_synth_writes_three_deterministic_files(tmp_path, capsys):
    args = [
        "synth",
        "--n",
        "40",
        "--seed",
        "9",
        "--image-size",
        "2000x1500",
        "--out-prefix",
        str(tmp_path / "scene"),
    ]
    assert run(args) == 0
    summary = capsys.readouterr().out
    assert summary.startswith("wrote 40 annotations, 38 detections (2 spurious, 4 missed)")
    names = ["scene.annotations.csv", "scene.detections.csv", "scene.provenance.csv"]
    first = {}
    for name in names:
        text = (tmp_path / name).read_text()
        assert text.startswith("# generator=numpy-pcg64\n# seed=9\n")
        first[name] = text
    assert run(args) == 0
    for name in names:
        assert (tmp_path / name).read_text() == first[name]


def test_synth_out_prefix_alias(tmp_path):
    assert run(
        [
            "synth",
            "--n",
            "5",
            "--image-size",
            "2000x1500",
            "-o-prefix",
            str(tmp_path / "alias"),
        ]
    ) == 0
    assert (tmp_path / "alias.annotations.csv").exists()


def test_synth_label_confusion_file(tmp_path):
    matrix = tmp_path / "flip.json"
    matrix.write_text("[[0.0, 1.0], [1.0, 0.0]]")
    assert run(
        [
            "synth",
            "--n",
            "30",
            "--miss",
            "0",
            "--spurious",
            "0",
            "--classes",
            "a,b",
            "--label-confusion",
            str(matrix),
            "--image-size",
            "2000x1500",
            "--out-prefix",
            str(tmp_path / "flipped"),
        ]
    ) == 0
    ann_rows = (tmp_path / "flipped.annotations.csv").read_text().splitlines()
    det_rows = (tmp_path / "flipped.detections.csv").read_text().splitlines()
    ann_labels = [row.split(",")[5] for row in ann_rows if row and not row.startswith(("#", "image_id"))]
    det_labels = [row.split(",")[5] for row in det_rows if row and not row.startswith(("#", "image_id"))]
    assert all(a != d for a, d in zip(ann_labels, det_labels))


def test_tile_info_lists_tiles(capsys):
    code = run(["tile-info", "--image-size", "1000x1000", "--tiles", "500", "--offsets", "0x0,250x250"])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "scheme_id,row,col,x_min,y_min,x_max,y_max"
    assert lines[1] == "1,0,0,0,0,500,500"
    # scheme 1: 2x2 grid, scheme 2: 3x3 grid
    assert len(lines) == 1 + 4 + 9
    assert "2,1,1,250,250,750,750" in lines


def test_merge_command_consolidates_schemes(tmp_path):
    scheme_a = tmp_path / "scheme_a.csv"
    scheme_b = tmp_path / "scheme_b.csv"
    header = "image_id,x_min,y_min,x_max,y_max,label,confidence,tiling_id,tile_row,tile_col\n"
    scheme_a.write_text(
        header
        + "img,480,480,500,500,mango,0.9,1,0,0\n"
        + "img,0,480,30,500,mango,0.9,1,0,1\n"
        + "img,480,0,500,30,mango,0.9,1,1,0\n"
        + "img,0,0,30,30,mango,0.9,1,1,1\n"
    )
    scheme_b.write_text(header + "img,230,230,280,280,mango,0.9,2,1,1\n")
    out = tmp_path / "merged.csv"
    code = run(
        [
            "merge",
            "--detections",
            str(scheme_a),
            str(scheme_b),
            "--image-size",
            "1000x1000",
            "--tiles",
            "500",
            "--offsets",
            "0x0,250x250",
            "--confidence",
            "0.5",
            "--nms",
            "1.0",
            "-o",
            str(out),
        ]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "image_id,x_min,y_min,x_max,y_max,label,confidence"
    assert len(lines) == 2
    assert lines[1] == "img,480.0,480.0,530.0,530.0,mango,0.9"


def test_merge_scheme_count_mismatch(tmp_path, capsys):
    one = tmp_path / "one.csv"
    one.write_text("image_id,x_min,y_min,x_max,y_max,label,confidence\n")
    code = run(
        ["merge", "--detections", str(one), "--offsets", "0x0,250x250", "--tiles", "500"]
    )
    assert code == 1
    assert "1 detection files for 2 schemes" in capsys.readouterr().err


def test_failed_run_leaves_no_output_file(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("image_id,x_min,y_min,x_max,y_max,label\nimg,0,0,0,0,mango\n")
    det = tmp_path / "det.csv"
    det.write_text(DETECTIONS)
    out = tmp_path / "report.json"
    code = run(
        ["evaluate", "--annotations", str(bad), "--detections", str(det), "-o", str(out)]
    )
    assert code == 1
    assert not out.exists()
    capsys.readouterr()


def test_blocked_output_cleans_up_its_temp_file(dataset, tmp_path, capsys):
    ann_path, det_path = dataset
    blocked = tmp_path / "occupied"
    blocked.mkdir()
    (blocked / "existing").write_text("sentinel")
    code = run(
        ["evaluate", "--annotations", ann_path, "--detections", det_path, "-o", str(blocked)]
    )
    assert code == 1
    assert (blocked / "existing").read_text() == "sentinel"
    assert [p.name for p in tmp_path.glob("*.tmp")] == []
    capsys.readouterr()
