import json

import numpy as np
import pytest

from intervene import cli
from intervene.dataset_io import Dataset, save_dataset
from intervene.errors import NumericalError


@pytest.fixture
def workspace(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(40, 3))
    y = 0.3 * X[:, 0] + 0.7 * X[:, 1] + 0.1 * rng.standard_normal(40)
    save_dataset(Dataset(X, y, ("a", "b", "c"), "y"), tmp_path / "d.csv")
    (tmp_path / "run.cfg").write_text("# quick settings\nrestarts = 1\nfix_restarts: 1\nfit_restarts = 1\n")
    return tmp_path


def run(ws, *argv):
    return cli.main([*argv, "--out", str(ws / "out"), "--config", str(ws / "run.cfg")])


def out(ws, name):
    return json.loads((ws / "out" / name).read_text())


def fitted(ws):
    assert run(ws, "fit", "--data", str(ws / "d.csv"), "--outcome", "y") == 0
    return str(ws / "out" / "model.json")


def test_fit_and_downstream_commands(workspace, capsys):
    ws = workspace
    model = fitted(ws)
    obj = out(ws, "model.json")
    assert obj["columns"] == ["a", "b", "c"] and obj["outcome"] == "y"
    assert run(ws, "personalize", "--model", model, "--row-index", "3", "--k", "1") == 0
    p = out(ws, "personalized.json")
    assert len(p["transformation"]["shift"]) == 3
    assert sum(v != 0 for v in p["transformation"]["shift"]) <= 1
    assert run(ws, "shift", "--model", model, "--k", "2", "--immutable", "c") == 0
    s = out(ws, "shift.json")
    assert s["shift"][2] == 0.0 and len(s["support"]) <= 2
    assert all(abs(v) <= 1.0 + 1e-12 for v in s["shift"])
    assert run(ws, "covfix", "--model", model, "--k", "1") == 0
    assert len(out(ws, "covfix.json")["fix_set"]) <= 1
    (ws / "cands.json").write_text(json.dumps([
        {"kind": "shift", "shift": {"b": 0.5}},
        {"kind": "shift", "shift": [0.0, 0.0, 0.0], "label": "nothing"},
        {"kind": "covariate_fixing", "values": {"a": 0.9}}]))
    assert run(ws, "rank", "--model", model, "--candidates", str(ws / "cands.json")) == 0
    ranking = out(ws, "ranking.json")["ranking"]
    scores = [r["score"] for r in ranking]
    assert scores == sorted(scores, reverse=True)
    nothing = [r for r in ranking if r["candidate"].get("label") == "nothing"][0]
    assert nothing["score"] == 0.0 and not nothing["recommended"]
    capsys.readouterr()


def test_global_flags_before_subcommand(workspace):
    model = fitted(workspace)
    argv = ["--alpha", "0.2", "--out", str(workspace / "o2"), "--config", str(workspace / "run.cfg"),
            "personalize", "--model", model, "--row", "0,0,0"]
    assert cli.main(argv) == 0
    assert json.loads((workspace / "o2" / "personalized.json").read_text())["alpha"] == 0.2


def test_validation_exit_codes(workspace, capsys):
    ws = workspace
    assert cli.main([]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert run(ws, "fit", "--data", str(ws / "missing.csv"), "--outcome", "y") == 1
    assert run(ws, "fit", "--data", str(ws / "d.csv"), "--outcome", "zz") == 1
    model = fitted(ws)
    assert run(ws, "personalize", "--model", model, "--row", "1,2", "--alpha", "0.9") == 1
    assert run(ws, "personalize", "--model", model, "--row", "1,2") == 1
    assert run(ws, "shift", "--model", model, "--immutable", "nope") == 1
    assert run(ws, "rank", "--model", model, "--candidates", str(ws / "run.cfg")) == 1
    assert cli.main(["fit", "--data", str(ws / "d.csv"), "--outcome", "y",
                     "--config", str(ws / "absent.cfg")]) == 1
    err = capsys.readouterr().err
    assert "error:" in err


def test_numerical_failure_exit_code(workspace, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise NumericalError("Cholesky factorization failed after jitter escalation")

    monkeypatch.setattr(cli.gp, "fit", boom)
    assert run(workspace, "fit", "--data", str(workspace / "d.csv"), "--outcome", "y") == 2
    assert "numerical failure" in capsys.readouterr().err


def test_simulate_and_sem_study(workspace, capsys):
    ws = workspace
    (ws / "sim.cfg").write_text("relationship = product\nintervention = personalized\n"
                                "d = 2\nn_grid = [20]\nfit_restarts = 1\n")
    assert run(ws, "simulate", str(ws / "sim.cfg"), "--trials", "1", "--alpha", "0.5") == 0
    summary = json.loads((ws / "out" / "simulation_summary.json").read_text())
    assert summary["config"]["alphas"] == [0.5]
    (ws / "sem.json").write_text(json.dumps({"d": 3, "density": 0.5, "seed": 1}))
    assert run(ws, "sem-study", str(ws / "sem.json"), "--n", "30", "--trials", "1") == 0
    assert (ws / "out" / "sem_study.csv").is_file()
    assert run(ws, "simulate", "--preset", "bogus") == 1
    capsys.readouterr()


def test_read_config_forms(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text('{"restarts": 2}')
    assert cli.read_config(p) == {"restarts": 2}
    p.write_text("schedule = [4, 2, 1]\nname: trial run  # comment\n")
    assert cli.read_config(p) == {"schedule": [4, 2, 1], "name": "trial run"}
    p.write_text("just words\n")
    with pytest.raises(cli.ValidationError):
        cli.read_config(p)
