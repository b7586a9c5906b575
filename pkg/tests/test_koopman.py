import json

import numpy as np
import pytest

from koopstab import koopman as kp
from koopstab import linalg
from koopstab.data import Scaling


def stable_model(seed=0, **kw):
    kw.setdefault("lift_dim", 3)
    kw.setdefault("hidden", (8,))
    return kp.StableKoopmanModel.init(2, np.random.default_rng(seed), **kw)


def stab_model(seed=0, **kw):
    kw.setdefault("lift_dim", 3)
    kw.setdefault("hidden", (8,))
    return kp.StabilizableKoopmanModel.init(2, 1, np.random.default_rng(seed), **kw)


def test_stable_model_basics():
    m = stable_model()
    assert m.N == 5 and m.n == 2
    assert linalg.spectral_radius(m.A) < 1
    assert m.certificate().passed
    assert m.n_params() == sum(v.size for v in m.params.values())
    assert m.one_step([0.1, 0.2]).shape == (2,)


def test_missing_or_misshapen_params():
    m = stable_model()
    p = dict(m.params)
    del p["R"]
    with pytest.raises(ValueError):
        m.with_params(p)
    p = dict(m.params, L=np.zeros((3, 3)))
    with pytest.raises(ValueError):
        m.with_params(p)


def test_autonomous_rollout_decays_in_lifted_norm():
    m = stable_model(1)
    r = kp.rollout_autonomous(m, [1.0, -1.0], 400)
    assert r.z.shape == (400, 5) and r.x.shape == (400, 2)
    assert np.linalg.norm(r.z[-1]) < 1e-3 * np.linalg.norm(r.z[0])
    assert np.array_equal(r.z[0, :2], [1.0, -1.0])


def test_simulate_uses_scaling():
    sc = Scaling(np.array([1.0, 1.0]), np.array([2.0, 2.0]), "minmax")
    m = stable_model(scaling=sc)
    x = m.simulate([1.5, 1.5], 3)
    raw = sc.invert(kp.rollout_autonomous(m, sc.apply(np.array([1.5, 1.5])), 3).x)
    assert np.allclose(x, raw)


def test_stabilizable_closed_loop_identity():
    m = stab_model()
    r = m.realization
    K = m.gain("recovered")
    assert np.abs(r.A + r.B @ K - r.A_cl).max() < 1e-9
    assert m.certificate().passed
    assert m.certificate("remark").spectral_radius == pytest.approx(
        linalg.spectral_radius(r.A + r.B @ r.K_P))
    with pytest.raises(ValueError):
        m.gain("bogus")


def test_closed_loop_modes():
    m = stab_model(2)
    lifted = kp.rollout_closedloop(m, [0.3, -0.2], 200)
    assert np.linalg.norm(lifted.z[-1]) < 1e-3 * np.linalg.norm(lifted.z[0])
    assert lifted.u.shape == (199, 1)
    st = kp.rollout_closedloop(m, [0.3, -0.2], 20, mode="state")
    assert st.x.shape == (20, 2) and not st.diverged
    calls = []

    def plant(x, u):
        calls.append(u)
        return 0.5 * x
    pl = kp.rollout_closedloop(m, [0.3, -0.2], 10, mode="plant", plant=plant)
    assert len(calls) == 9 and np.allclose(pl.x[-1], 0.5 ** 9 * np.array([0.3, -0.2]))
    with pytest.raises(ValueError):
        kp.rollout_closedloop(m, [0.0, 0.0], 5, mode="plant")


def test_plant_divergence_guard():
    m = stab_model()
    r = kp.rollout_closedloop(m, [1.0, 1.0], 100, mode="plant", plant=lambda x, u: 10 * x)
    assert r.diverged and r.T < 100


def test_openloop_input_spaces_agree_for_identity_prefeedback():
    m = stab_model()
    v = np.linspace(-1, 1, 9).reshape(-1, 1)
    a = kp.rollout_openloop(m, [0.1, 0.1], v, "v")
    b = kp.rollout_openloop(m, [0.1, 0.1], v, "u")
    assert np.allclose(a.z, b.z) and a.T == 10
    with pytest.raises(ValueError):
        kp.rollout_openloop(m, [0.1, 0.1], np.ones((3, 2)))


def test_policy_matches_lifted_input():
    m = stab_model(prefeedback="coupling")
    x = np.array([0.2, -0.4])
    v = m.gain() @ m.encode(x.reshape(-1, 1))
    assert np.allclose(m.policy(x), m.input_map(x.reshape(-1, 1), v).ravel())


@pytest.mark.parametrize("factory", [stable_model, stab_model])
def test_save_load_round_trip(tmp_path, factory):
    m = factory(3)
    path = kp.save_model(m, tmp_path / "m.json")
    back = kp.load_model(path)
    assert type(back) is type(m)
    for k in m.params:
        assert np.array_equal(back.params[k], m.params[k])
    assert np.array_equal(back.A, m.A)


def test_load_from_run_directory(tmp_path):
    m = stable_model()
    kp.save_model(m, tmp_path / "model.json")
    assert np.array_equal(kp.load_model(tmp_path).A, m.A)


def test_load_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(kp.ModelFormatError):
        kp.load_model(bad)
    d = kp.model_to_dict(stable_model())
    d["version"] = 99
    bad.write_text(json.dumps(d))
    with pytest.raises(kp.ModelFormatError):
        kp.load_model(bad)


def test_rollout_csv(tmp_path):
    m = stab_model()
    r = kp.rollout_closedloop(m, [0.1, 0.2], 4)
    path = r.to_csv(tmp_path / "r.csv", dt=0.5)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,x2,z_norm,v1,u1"
    assert len(lines) == 5 and lines[-1].endswith("nan,nan")
