import json

import pytest

from koopstab import cli

TINY = json.dumps({"train": {"epochs": 20, "lift_dim": 2, "hidden": [6], "lr": 0.01}})


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "cfg.json").write_text(TINY)
    return tmp_path


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_gen_data_is_deterministic(workdir):
    for name in ("a", "b"):
        assert run("gen-data", "--kind", "contracting2d", "--seed", 3, "--T", 20, "--out", workdir / name) == 0
    for f in (workdir / "a").glob("traj_*.csv"):
        assert f.read_bytes() == (workdir / "b" / f.name).read_bytes()
    man = json.loads((workdir / "a" / "run-manifest.json").read_text())
    assert man["command"] == "gen-data" and len(man["config_hash"]) == 64
    assert man["versions"]["kernels"] in ("compiled", "python")


@pytest.mark.parametrize("kind", ["lifted-lti", "graph-laplacian", "stabilizable-lti"])
def test_gen_data_kinds(workdir, kind):
    assert run("gen-data", "--kind", kind, "--T", 8, "--n-traj", 2, "--out", workdir / kind) == 0


def test_sysid_pipeline(workdir, capsys):
    d, m = workdir / "d", workdir / "m"
    assert run("gen-data", "--kind", "contracting2d", "--T", 30, "--n-traj", 3, "--out", d) == 0
    assert run("train-sysid", "--config", workdir / "cfg.json", "--data", d, "--out", m) == 0
    for f in ("model.json", "report.json", "certificate.json", "run-manifest.json"):
        assert (m / f).exists()
    assert json.loads((m / "certificate.json").read_text())["passed"]
    assert run("eval", "--model", m / "model.json", "--data", d, "--out", workdir / "e") == 0
    assert (workdir / "e" / "nse.csv").read_text().startswith("fold,nse\n0,")
    assert run("verify", "--model", m / "model.json", "--data", d, "--points", 20, "--T", 20,
               "--out", workdir / "v") == 0
    rep = json.loads((workdir / "v" / "verification.json").read_text())
    assert rep["error_bound"]["bound_holds"] and rep["true_contraction"]["passed"]
    assert run("simulate", "--model", m / "model.json", "--ic", "0.8,0.6", "--T", 25, "--perturb", 0.1,
               "--count", 3, "--out", workdir / "s") == 0
    svg = (workdir / "s" / "rollouts.svg").read_text()
    assert svg.count("<polyline") == 3
    assert len(list((workdir / "s").glob("rollout_*.csv"))) == 3


def test_resume_continues_from_checkpoint(workdir):
    d, m = workdir / "d", workdir / "m"
    run("gen-data", "--kind", "lifted-lti", "--T", 10, "--n-traj", 2, "--out", d)
    assert run("train-sysid", "--config", workdir / "cfg.json", "--data", d, "--out", m,
               "--checkpoint-every", 10, "--set", "epochs=10") == 0
    assert (m / "checkpoint.json").exists()
    assert run("train-sysid", "--config", workdir / "cfg.json", "--data", d, "--out", m, "--resume") == 0
    assert len(json.loads((m / "report.json").read_text())["losses"]) == 20


def test_imitation_pipeline(workdir):
    d, m = workdir / "g", workdir / "im"
    run("gen-data", "--kind", "graph-laplacian", "--n", 2, "--T", 10, "--n-traj", 3, "--out", d)
    assert run("train-imitation", "--config", workdir / "cfg.json", "--data", d, "--out", m) == 0
    assert run("verify", "--model", m / "model.json", "--data", d, "--points", 5, "--out", workdir / "v") == 0
    rep = json.loads((workdir / "v" / "verification.json").read_text())["closed_loop"]
    assert rep["passed"] and "plant_rho" in rep
    assert run("simulate", "--model", m / "model.json", "--ic", "0.5,-0.5", "--T", 10, "--perturb", 0.5,
               "--count", 2, "--mode", "plant", "--data", d, "--out", workdir / "s") == 0
    assert run("eval", "--model", m / "model.json", "--data", d, "--out", workdir / "e") == 0


def test_loocv_and_bench(workdir):
    d = workdir / "d"
    run("gen-data", "--kind", "lifted-lti", "--T", 8, "--n-traj", 3, "--out", d)
    assert run("loocv", "--config", workdir / "cfg.json", "--data", d, "--set", "train.epochs=3",
               "--workers", 1, "--out", workdir / "lo") == 0
    assert len((workdir / "lo" / "loocv.csv").read_text().splitlines()) == 4
    assert run("bench", "--dims", "2,3", "--trials", 1, "--iters", 3, "--out", workdir / "b") == 0
    assert "per_iter_slope" in json.loads((workdir / "b" / "summary.json").read_text())


def test_exit_codes(workdir, capsys):
    assert run("train-sysid", "--data", workdir / "missing", "--out", workdir / "x") == cli.EXIT_DATA
    d = workdir / "d"
    run("gen-data", "--kind", "lifted-lti", "--T", 8, "--n-traj", 2, "--out", d)
    assert run("train-sysid", "--data", d, "--out", workdir / "x", "--set", "bogus=1") == cli.EXIT_USAGE
    (workdir / "bad.json").write_text(json.dumps({"train": {}, "extra": {}}))
    assert run("train-sysid", "--data", d, "--out", workdir / "x", "--config", workdir / "bad.json") == cli.EXIT_USAGE
    (workdir / "m.json").write_text("{}")
    assert run("eval", "--model", workdir / "m.json", "--data", d, "--out", workdir / "x") == cli.EXIT_DATA
    with pytest.raises(SystemExit) as err:
        run("frobnicate")
    assert err.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        run("simulate", "--model", "m", "--ic", "1", "--mode", "sideways", "--out", workdir / "x")
    assert err.value.code == cli.EXIT_USAGE


def test_simulate_rejects_bad_ic(workdir):
    d, m = workdir / "d", workdir / "m"
    run("gen-data", "--kind", "lifted-lti", "--T", 8, "--n-traj", 2, "--out", d)
    run("train-sysid", "--config", workdir / "cfg.json", "--data", d, "--out", m, "--set", "epochs=1")
    assert run("simulate", "--model", m / "model.json", "--ic", "1,2,3", "--out", workdir / "s") == cli.EXIT_USAGE
    assert run("simulate", "--model", m / "model.json", "--ic", "a,b", "--out", workdir / "s") == cli.EXIT_USAGE
    assert run("simulate", "--model", m / "model.json", "--ic", "1,2", "--mode", "plant",
               "--out", workdir / "s") == cli.EXIT_USAGE


def test_schema(capsys):
    assert run("schema") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["unknown_keys"] == "rejected" and "lr" in out["sections"]["train"]
