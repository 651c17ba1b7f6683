import json

import pytest

from cli import EXIT_DOMAIN, EXIT_OK, EXIT_USAGE, main
from logic.array_geometry import build_circle
from logic.reporting import DESIGN_HEADER

TINY_RUN = {
    "layout": {"kind": "circle", "size": 4.0, "spacing": 3.0},
    "dataset": {"n_samples": 30, "filter_ceiling": 1.01, "test_fraction": 0.2, "verify_fraction": 1.0},
    "training": {
        "epochs": 5, "cv_epochs": 2, "cv_folds": 2, "batch_size": 8,
        "hidden_layer_grid": [1], "width_grid": [4, 8],
        "rbf_centers": 4, "rbf_width_factors": [0.5, 1.0],
    },
    "design": {"n_starts": 3, "max_iters": 20, "top_k_profiles": 2},
    "master_seed": 17,
}


@pytest.fixture
def run_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(TINY_RUN))
    return path


def run_stage(stage, run_file, out, *extra):
    return main([stage, "--config", str(run_file), "--output-dir", str(out), "--threads", "1", *extra])


def run_all(run_file, out):
    return [run_stage(stage, run_file, out) for stage in ("simulate", "dataset", "train", "design", "report")]


def test_full_run(tmp_path, run_file):
    out = tmp_path / "out"
    assert run_all(run_file, out) == [EXIT_OK] * 5

    for stage in ("simulate", "dataset", "train", "design", "report"):
        manifest = json.loads((out / stage / "manifest.json").read_text())
        assert manifest["stage"] == stage
        assert manifest["master_seed"] == 17
        for name in manifest["files"]:
            assert (out / stage / name).exists()

    assert json.loads((out / "simulate" / "summary.json").read_text())["strength"] > 0
    assert (out / "train" / "model_comparison.csv").exists()
    results = json.loads((out / "design" / "results.json").read_text())
    assert [r["rank"] for r in results] == [1, 2, 3]
    report = json.loads((out / "report" / "report.json").read_text())
    assert report["test_samples"] == 6
    assert (out / "report" / "profiles" / "profile_rank_002.csv").exists()


def test_reruns_are_byte_identical(tmp_path, run_file):
    for name in ("a", "b"):
        assert run_all(run_file, tmp_path / name) == [EXIT_OK] * 5
    for relative in ("dataset/samples.csv", "train/predictor.json", "design/results.json",
                     "report/ranked_strength.csv", "simulate/trace.csv"):
        assert (tmp_path / "a" / relative).read_bytes() == (tmp_path / "b" / relative).read_bytes()


def test_simulate_reads_a_compliance_file(tmp_path, run_file):
    layout = build_circle(4.0, 3.0)
    design = tmp_path / "design.csv"
    rows = [",".join(DESIGN_HEADER)] + [f"{i},{5.0 + i}" for i in range(layout.n_fibrils)]
    design.write_text("\n".join(rows) + "\n")
    payload = dict(TINY_RUN, simulate={"compliance_csv": "design.csv", "delta_D": 0.01})
    run_file.write_text(json.dumps(payload))
    assert run_stage("simulate", run_file, tmp_path / "out") == EXIT_OK
    summary = json.loads((tmp_path / "out" / "simulate" / "summary.json").read_text())
    assert summary["n_fibrils"] == layout.n_fibrils


def test_feedback_rounds_keep_the_best_round(tmp_path, run_file):
    payload = dict(TINY_RUN, design=dict(TINY_RUN["design"], feedback_k=2, feedback_rounds=2))
    run_file.write_text(json.dumps(payload))
    out = tmp_path / "out"
    assert run_all(run_file, out) == [EXIT_OK] * 5
    summary = json.loads((out / "design" / "summary.json").read_text())
    rounds = summary["feedback_rounds"]
    assert [r["round"] for r in rounds] == [1, 2]
    assert rounds[-1]["feedback_samples"] >= rounds[0]["feedback_samples"] > 0
    assert summary["best_verified"] >= max(r["best_verified"] for r in rounds)
    assert (out / "design" / "predictor_feedback.json").exists()
    assert (out / "design" / "dataset_feedback" / "samples.csv").exists()


def test_trace_columns_follow_the_event_record(tmp_path, run_file):
    assert run_stage("simulate", run_file, tmp_path / "out") == EXIT_OK
    lines = (tmp_path / "out" / "simulate" / "trace.csv").read_text().splitlines()
    assert lines[0] == "event_index,D_event,force_before,detached_id,force_after,cascade"
    first = lines[1].split(",")
    assert first[0] == "0"
    assert int(first[3]) in range(build_circle(4.0, 3.0).n_fibrils)
    assert float(first[2]) >= float(first[4])


def test_missing_config_is_a_usage_error(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "absent.json")]) == EXIT_USAGE
    assert "ConfigError" in capsys.readouterr().err


def test_unknown_key_is_a_usage_error(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"layout": {"kind": "circle", "colour": "red"}}))
    assert main(["simulate", "--config", str(path), "--output-dir", str(tmp_path)]) == EXIT_USAGE


def test_design_before_train_names_the_missing_stage(tmp_path, run_file, capsys):
    out = tmp_path / "out"
    assert run_stage("dataset", run_file, out) == EXIT_OK
    assert run_stage("design", run_file, out) == EXIT_DOMAIN
    err = capsys.readouterr().err
    assert "MissingArtifactError" in err and "'train'" in err


def test_seed_flag_overrides_the_document(tmp_path, run_file):
    assert run_stage("dataset", run_file, tmp_path / "a", "--seed", "99") == EXIT_OK
    manifest = json.loads((tmp_path / "a" / "dataset" / "manifest.json").read_text())
    assert manifest["master_seed"] == 99
