import json
import shutil

import pytest

from annorefine.cli import main

INPUT_FILES = (
    "config.json",
    "annotations.json",
    "traces.ndjson",
    "detections.ndjson",
    "verdicts.ndjson",
    "cams.ndjson",
    "oracle.ndjson",
    "predictions.ndjson",
    "scores.ndjson",
)
OUTPUT_FILES = (
    "features.ndjson",
    "normstats.json",
    "model.json",
    "scores.ndjson",
    "eval_report.json",
    "refined_annotations.json",
    "pipeline_report.json",
    "diff_report.json",
    "ap_report.json",
)
FLOW = (
    "traces-normalize",
    "anomaly-train",
    "anomaly-score",
    "anomaly-eval",
    "pseudo-run",
    "dataset-diff",
    "dataset-ap",
)
SUBCOMMANDS = FLOW + (
    "pseudo-stage1",
    "pseudo-stage2",
    "pseudo-stage3",
    "pseudo-stage4",
    "validate",
)


def stage_workspace(data_dir, tmp_path, name="ws"):
    ws = tmp_path / name
    ws.mkdir()
    for filename in INPUT_FILES:
        shutil.copy(data_dir / "golden_pipeline" / filename, ws / filename)
    return ws


def run_flow(ws):
    for command in FLOW:
        rc = main([command, "--config", str(ws / "config.json")])
        assert rc == 0, command
    return ws


def test_full_flow_reproduces_committed_goldens(data_dir, tmp_path, capsys):
    ws = run_flow(stage_workspace(data_dir, tmp_path))
    golden = data_dir / "golden_pipeline"
    assert (ws / "refined_annotations.json").read_bytes() == (
        golden / "refined_annotations.json"
    ).read_bytes()
    assert (ws / "pipeline_report.json").read_bytes() == (
        golden / "pipeline_report.json"
    ).read_bytes()
    for filename in OUTPUT_FILES:
        assert (ws / filename).is_file(), filename


def test_full_flow_byte_deterministic(data_dir, tmp_path, capsys):
    first = run_flow(stage_workspace(data_dir, tmp_path, "first"))
    second = run_flow(stage_workspace(data_dir, tmp_path, "second"))
    for filename in OUTPUT_FILES:
        assert (first / filename).read_bytes() == (second / filename).read_bytes(), filename


def test_eval_report_contents(data_dir, tmp_path, capsys):
    ws = run_flow(stage_workspace(data_dir, tmp_path))
    report = json.loads((ws / "eval_report.json").read_text())
    # the sole flagged image is the sole erroneous one
    assert report["counts"] == {"tp": 1, "fp": 0, "fn": 0, "tn": 2}
    assert report["accuracy"] == 1.0 and report["f1"] == 1.0
    assert report["auroc"] == 1.0
    assert report["roc_points"][0] == [0.0, 0.0] and report["roc_points"][-1] == [1.0, 1.0]


def test_stage_commands_chain_matches_pseudo_run(data_dir, tmp_path, capsys):
    ws = stage_workspace(data_dir, tmp_path)
    config = ["--config", str(ws / "config.json")]
    for command in ("pseudo-stage1", "pseudo-stage2", "pseudo-stage3", "pseudo-stage4"):
        assert main([command] + config) == 0
    stage4 = [
        json.loads(line) for line in (ws / "candidates_stage4.ndjson").read_text().splitlines()
    ]
    assert [(c["box_ref"], c["stage"]) for c in stage4] == [
        ("1#0", "cam_kept"),
        ("1#1", "cam_adjusted"),
    ]
    assert stage4[1]["box"] == [50.0, 50.0, 53.75, 90.0]


def test_help_exits_zero_for_every_subcommand(capsys):
    for command in SUBCOMMANDS:
        with pytest.raises(SystemExit) as exc:
            main([command, "--help"])
        assert exc.value.code == 0
        assert "usage" in capsys.readouterr().out.lower()
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "annorefine" in out and "config-schema" in out


def test_missing_detections_file_exits_2(data_dir, tmp_path, capsys):
    ws = tmp_path / "ws"
    ws.mkdir()
    for filename in ("config.json", "annotations.json", "scores.ndjson"):
        shutil.copy(data_dir / "golden_pipeline" / filename, ws / filename)
    rc = main(["pseudo-run", "--config", str(ws / "config.json")])
    assert rc == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "InputError"
    assert str(ws / "detections.ndjson") in err["message"]
    assert err["path"] == str(ws / "detections.ndjson")


def test_missing_config_file_exits_2(capsys):
    rc = main(["traces-normalize", "--config", "/nonexistent/config.json"])
    assert rc == 2
    err = json.loads(capsys.readouterr().err)
    assert "config" in err["message"]


def test_invalid_config_value_exits_1(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text('{"flag_fraction": 1.5}')
    rc = main(["traces-normalize", "--config", str(config)])
    assert rc == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ValidationError"


def test_validate_accepts_canonical_fixtures(canonical, capsys):
    kinds = {
        "annotations": "annotations.json",
        "traces": "traces.ndjson",
        "detections": "detections.ndjson",
        "verdicts": "verdicts.ndjson",
        "cams": "cams.ndjson",
        "oracle": "oracle.ndjson",
        "features": "features.ndjson",
        "scores": "scores.ndjson",
        "candidates": "candidates.ndjson",
    }
    for kind, filename in kinds.items():
        rc = main(["validate", kind, str(canonical / filename)])
        out = json.loads(capsys.readouterr().out)
        assert rc == 0 and out["valid"] is True, kind


def test_validate_reports_all_errors(tmp_path, capsys):
    bad = tmp_path / "detections.ndjson"
    bad.write_text(
        '{"image_id": 1, "view": "identity", "box": [0, 0, 5, 5], "category_id": 2, "score": 2.0}\n'
        "garbage\n"
    )
    rc = main(["validate", "detections", str(bad)])
    assert rc == 1
    out = json.loads(capsys.readouterr().out)
    assert out["valid"] is False and len(out["errors"]) == 2


def test_dataset_diff_prints_table(data_dir, tmp_path, capsys):
    ws = run_flow(stage_workspace(data_dir, tmp_path))
    capsys.readouterr()
    assert main(["dataset-diff", "--config", str(ws / "config.json")]) == 0
    out = capsys.readouterr().out
    assert "Category" in out and "Difference" in out


def test_seed_override_changes_model(data_dir, tmp_path, capsys):
    ws = stage_workspace(data_dir, tmp_path)
    config = ["--config", str(ws / "config.json")]
    assert main(["traces-normalize"] + config) == 0
    assert main(["anomaly-train"] + config) == 0
    baseline = (ws / "model.json").read_bytes()
    assert main(["anomaly-train", "--seed", "99"] + config) == 0
    assert (ws / "model.json").read_bytes() != baseline
    assert main(["anomaly-train", "--seed", "11"] + config) == 0
    assert (ws / "model.json").read_bytes() == baseline  # config seed was 11
