import json

import pytest
import yaml

from braingraphs.cli import main
from braingraphs.dataio import write_bold_csv
from braingraphs.signal import BoldMatrix


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = {
        "n_subjects": 20, "n": 8, "t": 100, "seed": 1,
        "classes": [[{"source": 0, "target": 1, "lag": 2}], [{"source": 0, "target": 1, "lag": 0}]],
    }
    (root / "synth.yaml").write_text(yaml.safe_dump(spec))
    assert main(["synth", "--spec", str(root / "synth.yaml"), "--out", str(root / "ds")]) == 0
    return root


def test_synth_writes_dataset(workspace):
    info = json.loads((workspace / "ds" / "dataset.json").read_text())
    assert info["subject_count"] == 20


def test_ingest(tmp_path, rng):
    src = tmp_path / "csv"
    src.mkdir()
    for k in range(3):
        write_bold_csv(src / f"s{k}.csv", BoldMatrix(rng.normal(size=(30, 4))))
    (tmp_path / "labels.csv").write_text("subject_id,label\ns0,0\ns1,1\ns2,0\n")
    rc = main(["ingest", str(src), "--out", str(tmp_path / "ds"), "--labels-file", str(tmp_path / "labels.csv")])
    assert rc == 0
    info = json.loads((tmp_path / "ds" / "dataset.json").read_text())
    assert [s["label"] for s in info["subjects"]] == [0, 1, 0]


def test_ingest_bad_csv_exit_code(tmp_path):
    src = tmp_path / "csv"
    src.mkdir()
    (src / "s.csv").write_text("1,2\n3,oops\n4,5\n")
    assert main(["ingest", str(src), "--out", str(tmp_path / "ds")]) == 1


def test_missing_dataset_is_io_error(tmp_path):
    assert main(["build", "--preset", "baseline", "--in", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 3


def test_build_sweep_eval_report(workspace, tmp_path):
    ds = str(workspace / "ds")
    assert main(["build", "--preset", "lag1", "--in", ds, "--out", str(tmp_path / "lag1"), "--format", "binary"]) == 0
    assert (tmp_path / "lag1" / "graphs" / "sub-0000.bgpk").exists()

    grid = tmp_path / "grid.yaml"
    grid.write_text(yaml.safe_dump({"presets": ["baseline", "lag1", "unified"], "workers": 1}))
    assert main(["sweep", "--grid", str(grid), "--in", ds, "--out", str(tmp_path / "sw")]) == 0
    assert main(["sweep", "--grid", str(grid), "--in", ds, "--out", str(tmp_path / "sw"), "--resume"]) == 0

    first = json.loads((tmp_path / "sw" / "sweep.json").read_text())["configs"][0]["dir"]
    assert main(["unify", "--in", str(tmp_path / "sw" / first), "--out", str(tmp_path / "unify.json")]) == 0
    unify = json.loads((tmp_path / "unify.json").read_text())
    assert len(unify["subjects"]) == 20

    out = tmp_path / "eval.json"
    rc = main(["eval", "--dataset-dir", f"synthetic={tmp_path / 'sw'}", "--splits", "2", "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert report["surrogate_evaluation"] is True
    assert report["configs"] == ["baseline", "lag1", "unified"]

    assert main(["report", "--eval", str(out), "--out", str(tmp_path / "rep")]) == 0
    for name in ("ranking.tsv", "outperformance.tsv", "ranking.png", "outperformance.png"):
        assert (tmp_path / "rep" / name).stat().st_size > 0


def test_eval_unknown_config_is_validation_error(workspace, tmp_path):
    ds = str(workspace / "ds")
    assert main(["build", "--preset", "baseline", "--in", ds, "--out", str(tmp_path / "b")]) == 0
    rc = main(["eval", "--dataset-dir", str(tmp_path / "b"), "--configs", "nope", "--out", str(tmp_path / "e.json")])
    assert rc == 1


def test_partial_failure_exit_code(tmp_path, rng):
    src = tmp_path / "csv"
    src.mkdir()
    for k in range(4):
        values = rng.normal(size=(30, 4))
        if k == 0:
            values[:, 1] = 2.0
        write_bold_csv(src / f"s{k}.csv", BoldMatrix(values))
    assert main(["ingest", str(src), "--out", str(tmp_path / "ds")]) == 0
    args = ["build", "--preset", "baseline", "--in", str(tmp_path / "ds"), "--out", str(tmp_path / "o")]
    assert main(args + ["--failure-threshold", "0.1"]) == 2
    assert main(args + ["--failure-threshold", "0.5"]) == 0


def test_unified_on_task_rejected(tmp_path, rng):
    src = tmp_path / "csv"
    src.mkdir()
    for k in range(3):
        write_bold_csv(src / f"s{k}.csv", BoldMatrix(rng.normal(size=(30, 6))))
    assert main(["ingest", str(src), "--out", str(tmp_path / "ds"), "--paradigm", "task"]) == 0
    rc = main(["build", "--preset", "unified", "--in", str(tmp_path / "ds"), "--out", str(tmp_path / "o")])
    assert rc == 1


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("retention: [unclosed\n")
    assert main(["build", "--config", str(cfg), "--in", str(tmp_path), "--out", str(tmp_path / "o")]) == 1
