import json

import numpy as np

from conftest import SCENARIO_DIR
from main import main


def write_demo(path, samples):
    t = np.linspace(0.0, 1.0, samples)
    y = 10 * t ** 3 - 15 * t ** 4 + 6 * t ** 5
    np.savetxt(path, np.column_stack((t, y, 0.5 * y)), delimiter=",", header="t,y1,y2", comments="")
    return str(path)


def test_validate_bundled():
    assert main(["validate", str(SCENARIO_DIR / "close_demo_goal.yaml")]) == 0


def test_validate_reports_schema_errors(write_scenario):
    path = write_scenario({"schema_version": 2, "name": "x", "demo": {"generator": "min_jerk"}})
    assert main(["validate", str(SCENARIO_DIR / "close_demo_goal.yaml"), str(path)]) == 2


def test_train_writes_model(tmp_path, capsys):
    demo = write_demo(tmp_path / "demo.csv", 200)
    out = tmp_path / "model.json"
    assert main(["train", demo, "-K", "10", "--model", str(out)]) == 0
    document = json.loads(out.read_text())
    assert document["format"] == "dmpp-model"
    assert len(document["weights"]) == 10
    assert "training residual" in capsys.readouterr().out


def test_train_default_model_path(tmp_path):
    demo = write_demo(tmp_path / "reach.csv", 200)
    assert main(["--out-dir", str(tmp_path / "out"), "train", demo, "-K", "10"]) == 0
    assert (tmp_path / "out" / "reach_model.json").exists()


def test_train_with_too_few_samples(tmp_path):
    demo = write_demo(tmp_path / "short.csv", 6)
    assert main(["train", demo, "-K", "10"]) == 1


def test_train_missing_file(tmp_path):
    assert main(["train", str(tmp_path / "missing.csv")]) == 2


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "out"
    code = main(["--out-dir", str(out), "run", str(SCENARIO_DIR / "goal_equals_start.yaml"), "--dt", "0.005"])
    assert code == 0
    assert (out / "goal_equals_start_dmpp_forward_trajectory.csv").exists()
    metrics = json.loads((out / "goal_equals_start_dmpp_forward_metrics.json").read_text())
    assert metrics["generalization"] == "dmpp"


def test_compare_defaults_to_classical(tmp_path):
    out = tmp_path / "out"
    assert main(["--out-dir", str(out), "compare", str(SCENARIO_DIR / "mirrored_goal.yaml"), "--dt", "0.005"]) == 0
    assert (out / "mirrored_goal_classical_forward_metrics.json").exists()


def test_run_exit_codes(tmp_path):
    out = str(tmp_path / "out")
    assert main(["--out-dir", out, "run", str(SCENARIO_DIR / "singular_demo_displacement.yaml")]) == 1
    assert main(["--out-dir", out, "run", str(tmp_path / "missing.yaml")]) == 2


def test_bench_without_steps(tmp_path, capsys):
    assert main(["--out-dir", str(tmp_path), "bench", "--steps", "0"]) == 0
    assert json.loads((tmp_path / "bench.json").read_text())["rows"] == []


def test_bench_rejects_bad_dofs():
    assert main(["bench", "-n", "0"]) == 2
