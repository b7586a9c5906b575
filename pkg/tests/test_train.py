import json

import numpy as np
import pytest

from koopstab import data, koopman, losses, train

SMALL = dict(lift_dim=2, hidden=(6,), epochs=30, lr=1e-2, check_every=5)


@pytest.fixture(scope="module")
def lti():
    ds, _ = data.gen_lifted_lti(seed=0, n=2, k=1, T=12, n_traj=3)
    return ds


@pytest.fixture(scope="module")
def laplacian():
    ds, plant = data.gen_graph_laplacian(seed=0, n=2, T=15, n_traj=4)
    return ds, plant


def test_config_round_trip_and_validation():
    c = train.TrainConfig(hidden=[3, 4], lr=0.1)
    assert train.TrainConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c
    with pytest.raises(ValueError):
        train.TrainConfig.from_dict({"lr": 0.1, "learning_rate": 0.1})
    for bad in ({"lr": 0.0}, {"epochs": -1}, {"lr_schedule": "step"}, {"alpha": 0.0}):
        with pytest.raises(ValueError):
            train.TrainConfig(**bad)


def test_zero_epochs_returns_init(lti):
    model, report = train.fit_sysid(lti, train.TrainConfig(**dict(SMALL, epochs=0)))
    ref = train.init_stable_model(2, train.TrainConfig(**dict(SMALL, epochs=0)))
    assert report.epochs == 0
    for k in ref.params:
        assert np.array_equal(model.params[k], ref.params[k])
    assert report.final_certificate["passed"]
    assert set(report.components) == {"j_se", "j_re", "objective"}


def test_training_reduces_loss_and_stays_stable(lti):
    model, report = train.fit_sysid(lti, train.TrainConfig(**dict(SMALL, epochs=200)))
    assert report.losses[-1] < 0.5 * report.losses[0]
    assert all(c["rho"] < 1 for c in report.certificates)
    assert len(report.certificates) == report.epochs // 5
    assert model.scaling is not None and model.scaling.mode == "maxabs"


def test_seeded_runs_are_identical(lti):
    cfg = train.TrainConfig(**SMALL)
    _, a = train.fit_sysid(lti, cfg)
    _, b = train.fit_sysid(lti, cfg)
    assert a.losses == b.losses


def test_checkpoint_resume_matches_straight_run(lti, tmp_path):
    ck = tmp_path / "ck.json"
    straight, rs = train.fit_sysid(lti, train.TrainConfig(**dict(SMALL, epochs=20)))
    train.fit_sysid(lti, train.TrainConfig(**dict(SMALL, epochs=10, checkpoint_every=10)), checkpoint=ck)
    assert ck.exists()
    resumed, rr = train.fit_sysid(lti, train.TrainConfig(**dict(SMALL, epochs=20)), checkpoint=ck, resume=True)
    assert rr.losses == rs.losses
    for k in straight.params:
        assert np.array_equal(straight.params[k], resumed.params[k])


def test_plateau_stop_and_target(lti):
    _, r = train.fit_sysid(lti, train.TrainConfig(**dict(SMALL, epochs=500, patience=5, lr_patience=1000,
                                                          plateau_tol=0.5)))
    assert r.stopped == "plateau" and r.epochs < 500
    _, r = train.fit_sysid(lti, train.TrainConfig(**dict(SMALL, epochs=500, target_loss=1e9)))
    assert r.stopped == "target" and r.epochs == 1


def test_lr_cut_on_plateau(lti):
    _, r = train.fit_sysid(lti, train.TrainConfig(**dict(SMALL, epochs=40, lr_patience=3, plateau_tol=0.9,
                                                          patience=0, lr_factor=0.5)))
    assert min(r.lrs) < r.lrs[0]


def test_cosine_schedule(lti):
    _, r = train.fit_sysid(lti, train.TrainConfig(**dict(SMALL, epochs=20, lr_schedule="cosine")))
    assert r.lrs[0] == pytest.approx(1e-2) and r.lrs[-1] < r.lrs[0]


def test_nonfinite_steps_abort(lti):
    model = train.init_stable_model(2, train.TrainConfig(**SMALL))
    p = dict(model.params)
    p["enc.W0"] = np.full_like(p["enc.W0"], np.nan)
    bad = model.with_params(p)
    batches = losses.make_batches(lti)
    with pytest.raises(train.TrainingError):
        train.optimize(bad, batches, train.TrainConfig(**SMALL))


def test_imitation_fit(laplacian):
    ds, plant = laplacian
    model, report = train.fit_imitation(ds, train.TrainConfig(**dict(SMALL, epochs=100, scaling="none")))
    assert isinstance(model, koopman.StabilizableKoopmanModel)
    assert report.losses[-1] < report.losses[0]
    assert report.final_certificate["passed"]
    assert {"j_se_prime", "j_sl", "j_re_prime"} <= set(report.components)
    with pytest.raises(data.DataError):
        train.fit_imitation(data.gen_lifted_lti(seed=0, T=5)[0])


def test_fit_bc(laplacian):
    ds, plant = laplacian
    pol = train.fit_bc(ds, epochs=600)
    x = ds.trajectories[0].states[0]
    assert pol(x).shape == (2,)
    assert pol(np.ones((2, 3))).shape == (2, 3)
    assert pol.final_loss < 0.05 * np.mean([np.sum(tr.inputs ** 2) / tr.T for tr in ds.trajectories])


def test_loocv_small(lti):
    res = train.loocv(lti, train.TrainConfig(**dict(SMALL, epochs=5)), workers=1)
    assert len(res.test_nse) == 3 and np.isfinite(res.median)
    q1, q3 = res.quartiles
    assert q1 <= res.median <= q3
    with pytest.raises(ValueError):
        train.loocv(lti.subset([0]))


def test_loocv_pool_matches_serial(lti, tmp_path):
    cfg = train.TrainConfig(**dict(SMALL, epochs=5))
    a = train.loocv(lti, cfg, workers=1)
    b = train.loocv(lti, cfg, workers=2)
    assert a.test_nse == b.test_nse
    a.to_csv(tmp_path / "nse.csv")
    assert (tmp_path / "nse.csv").read_text().splitlines()[0] == "fold,nse"


def test_bench_small(tmp_path):
    rows, summary = train.bench_scaling(dims=(2, 4), trials=1, max_iters=5)
    assert len(rows) == 2 and "per_iter_slope" in summary
    train.bench_csv(rows, tmp_path / "b.csv")
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 3
    assert train.loglog_slope([1, 2, 4], [3, 12, 48]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        train.bench_scaling(dims=(4, 2))
