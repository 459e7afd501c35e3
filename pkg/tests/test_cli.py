import json
from pathlib import Path

import numpy as np
import pytest

from scoopgp import cli
from scoopgp.checkpoint import load_checkpoint, save_checkpoint
from scoopgp.data import load_task_dataset
from scoopgp.decision import EpisodeTrace


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Tiny end-to-end run shared by the module's tests."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    assert cli.main(
        ["gen-data", "--seed", "3", "--out", str(data), "--n-train", "4",
         "--n-test", "2", "--samples", "30"]
    ) == 0
    ckpt = root / "kcmd.json"
    assert cli.main(
        ["train", "--method", "kcmd-ot", "--data", str(data), "--out", str(ckpt),
         "--seed", "1", "--k-folds", "2", "--max-epochs-mean", "25",
         "--max-epochs-meta", "15"]
    ) == 0
    traces = root / "traces.jsonl"
    assert cli.main(
        ["eval-deploy", "--model", str(ckpt), "--data", str(data), "--out",
         str(traces), "--mode", "replay", "--max-attempts", "30", "--reps", "2"]
    ) == 0
    mae = root / "mae.json"
    assert cli.main(
        ["eval-kshot", "--model", str(ckpt), "--data", str(data), "--out",
         str(mae), "--shots", "0,3", "--seed", "0"]
    ) == 0
    report = root / "report"
    assert cli.main(
        ["report", "--traces", str(traces), "--mae", str(mae), "--out", str(report)]
    ) == 0
    return {"data": data, "ckpt": ckpt, "traces": traces, "mae": mae, "report": report}


def test_gen_data_artifacts(pipeline):
    data = pipeline["data"]
    files = sorted(p.name for p in (data / "tasks").glob("*.json"))
    assert files == [
        "test-00.json", "test-01.json",
        "train-00.json", "train-01.json", "train-02.json", "train-03.json",
    ]
    suite = json.loads((data / "suite.json").read_text())
    assert suite["seed"] == 3 and len(suite["tasks"]) == 6
    ds = load_task_dataset(data / "tasks" / "test-00.json")
    assert len(ds) == 30 and ds.ground_truth is None
    oracle = load_task_dataset(data / "tasks" / "test-00.json", view="oracle")
    assert oracle.ground_truth and "material_table" in oracle.ground_truth


def test_checkpoint_roundtrip_bit_exact(pipeline, tmp_path):
    model, meta = load_checkpoint(pipeline["ckpt"])
    assert meta["method"] == "kcmd-ot" and meta["seed"] == 1
    copy = tmp_path / "copy.json"
    save_checkpoint(model, copy, method=meta["method"], seed=meta["seed"],
                    manifest_digest=meta["manifest_digest"])
    assert copy.read_bytes() == Path(pipeline["ckpt"]).read_bytes()


def test_trace_bookkeeping(pipeline):
    traces = [
        EpisodeTrace.from_dict(json.loads(line))
        for line in pipeline["traces"].read_text().splitlines()
    ]
    assert len(traces) == 2 * 2  # tasks x reps
    for tr in traces:
        assert tr.meta["method"] == "kcmd-ot"
        assert tr.meta["mode"] == "replay"
        indices = [s.index for s in tr.steps]
        assert len(set(indices)) == len(indices)


def test_report_matches_independent_recomputation(pipeline):
    summary = json.loads((pipeline["report"] / "summary.json").read_text())
    traces = [json.loads(line) for line in pipeline["traces"].read_text().splitlines()]
    counted = [
        t["attempts"] if t["success"] else t["max_attempts"] for t in traces
    ]
    agg = summary["deploy"]["kcmd-ot"]
    assert agg["mean_attempts"] == pytest.approx(np.mean(counted))
    assert agg["max_attempts"] == max(counted)
    assert agg["n_trials"] == len(counted)
    assert (pipeline["report"] / "attempts.svg").exists()
    assert (pipeline["report"] / "plotdata" / "mae.json").exists()
    assert "kcmd-ot" in summary["kshot_mae"]


def test_eval_commands_use_learner_view(pipeline, tmp_path, monkeypatch):
    views = []
    orig = cli.load_task_dataset

    def spy(path, view="learner"):
        views.append(view)
        return orig(path, view=view)

    monkeypatch.setattr(cli, "load_task_dataset", spy)
    out = tmp_path / "t.jsonl"
    assert cli.main(
        ["eval-deploy", "--model", str(pipeline["ckpt"]), "--data",
         str(pipeline["data"]), "--out", str(out), "--mode", "replay",
         "--max-attempts", "5", "--reps", "1"]
    ) == 0
    assert cli.main(
        ["eval-kshot", "--model", str(pipeline["ckpt"]), "--data",
         str(pipeline["data"]), "--out", str(tmp_path / "m.json"), "--shots", "0"]
    ) == 0
    assert views and all(v == "learner" for v in views)


def test_validation_errors_exit_1(pipeline, tmp_path, capsys):
    bad = [
        ["train", "--method", "sl", "--data", str(tmp_path / "nope"), "--out", "x.json"],
        ["eval-deploy", "--model", str(pipeline["ckpt"]), "--data", str(pipeline["data"]),
         "--out", "t.jsonl", "--mode", "flight"],
        ["eval-deploy", "--model", str(pipeline["ckpt"]), "--data", str(pipeline["data"]),
         "--out", "t.jsonl", "--max-attempts", "0"],
        ["eval-kshot", "--model", str(pipeline["ckpt"]), "--data", str(pipeline["data"]),
         "--out", "m.json", "--shots", "0,99"],
        ["eval-kshot", "--model", str(pipeline["ckpt"]), "--data", str(pipeline["data"]),
         "--out", "m.json", "--shots", "a,b"],
        ["report", "--out", str(tmp_path / "r")],
        ["gen-data", "--out", str(tmp_path / "d"), "--samples", "3"],
    ]
    for argv in bad:
        assert cli.main(argv) == 1, argv
        assert "error" in capsys.readouterr().err


def test_version_mismatched_checkpoint_rejected(pipeline, tmp_path):
    payload = json.loads(Path(pipeline["ckpt"]).read_text())
    payload["schema_version"] = 42
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(payload))
    rc = cli.main(
        ["eval-kshot", "--model", str(bad), "--data", str(pipeline["data"]),
         "--out", str(tmp_path / "m.json"), "--shots", "0"]
    )
    assert rc == 1


def test_artifact_root_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("SCOOPGP_ARTIFACTS", str(tmp_path))
    assert cli.main(
        ["gen-data", "--seed", "0", "--out", "envdata", "--n-train", "2",
         "--n-test", "1", "--samples", "6"]
    ) == 0
    assert (tmp_path / "envdata" / "suite.json").exists()


def test_aggregate_metrics_unit_cases():
    def trace(method, seed, task, attempts, success, cap=20):
        steps = [
            {"index": i, "action": {"x": 0.2, "y": 0.2, "yaw": 0, "depth": 0.05,
                                    "stiffness": 0}, "reward": 1.0, "score": 0.0}
            for i in range(attempts)
        ]
        if success:
            steps[-1]["reward"] = 99.0
        return EpisodeTrace.from_dict({
            "task_id": task, "policy": "greedy", "threshold": 50.0,
            "max_attempts": cap, "success": success, "attempts": attempts,
            "fault": None, "meta": {"method": method, "model_seed": seed, "rep": 0},
            "steps": steps,
        })

    single = cli.aggregate_metrics([trace("sl", 0, "t", 3, True)], [])
    assert single["deploy"]["sl"]["mean_attempts"] == 3.0
    assert single["deploy"]["sl"]["max_attempts"] == 3

    failed = cli.aggregate_metrics([trace("sl", 0, "t", 20, False)], [])
    assert failed["deploy"]["sl"]["max_attempts"] == 20
    assert failed["deploy"]["sl"]["n_failures"] == 1

    traces = [
        trace("kcmd-ot", seed, f"task-{t}", 2 + seed, True)
        for seed in range(3)
        for t in range(4)
    ]
    multi = cli.aggregate_metrics(traces, [])
    assert len(multi["rows"]) == 12
    assert multi["deploy"]["kcmd-ot"]["per_seed_mean"] == {
        "0": 2.0, "1": 3.0, "2": 4.0,
    }

    with pytest.raises(cli.ConfigError):
        bad = trace("sl", 0, "t", 2, True)
        bad.meta = {}
        cli.aggregate_metrics([bad], [])
