import numpy as np
import pytest

from koopstab import autodiff as ad
from koopstab import koopman as kp
from koopstab import losses


def small_stable(seed=0):
    # n=2, N=4
    return kp.StableKoopmanModel.init(2, np.random.default_rng(seed), lift_dim=2, hidden=(5,),
                                      activation="tanh")


def small_stab(seed=0, prefeedback="identity", lift_dim=2):
    return kp.StabilizableKoopmanModel.init(2, 1, np.random.default_rng(seed), lift_dim=lift_dim,
                                            hidden=(5,), activation="tanh",
                                            prefeedback=prefeedback, pf_hidden=(4,))


def test_column_layout_round_trip():
    X = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4)
    C = losses.to_columns(X)
    assert C.shape == (4, 6)
    assert np.array_equal(C[:, 1 * 2 + 1], X[1, 1])
    assert np.array_equal(losses.from_columns(C, 2), X)


def test_j_se_matches_loop():
    m = small_stable()
    X = np.random.default_rng(1).standard_normal((3, 6, 2))
    b = losses.Batch(X)
    want = 0.0
    for j in range(3):
        z = m.encode(X[j, 0][:, None])
        for t in range(6):
            want += np.sum((m.encode(X[j, t][:, None]) - z) ** 2) / 6
            z = m.A @ z
    assert losses.j_se(m, b)[0, 0] == pytest.approx(want, rel=1e-12)
    assert losses.j_se(m, b, fused=False)[0, 0] == pytest.approx(want, rel=1e-12)


def test_j_se_zero_on_model_data():
    m = kp.StableKoopmanModel.init(2, np.random.default_rng(0), lift_dim=0, hidden=(3,))
    X = kp.rollout_autonomous(m, [1.0, -0.5], 8).z[None]
    assert losses.j_se(m, losses.Batch(X))[0, 0] < 1e-28
    assert losses.j_se(m, losses.Batch(X[:, :1]))[0, 0] == 0.0


def test_j_re_zero_for_slice_decoder():
    m = small_stable()
    p = dict(m.params)
    last = m.encdec.decoder.n_layers - 1
    p[f"dec.W{last}"] = np.zeros_like(p[f"dec.W{last}"])
    p[f"dec.b{last}"] = np.zeros_like(p[f"dec.b{last}"])
    X = np.random.default_rng(2).standard_normal((2, 4, 2))
    assert losses.j_re(m.with_params(p), losses.Batch(X))[0, 0] == 0.0


def test_alpha_scales_reconstruction_linearly():
    m = small_stable()
    b = [losses.Batch(np.random.default_rng(3).standard_normal((2, 5, 2)))]
    _, parts = losses.sysid_objective(m, b, alpha=1.0, parts=True)
    v1 = losses.sysid_objective(m, b, alpha=1.0)[0, 0]
    v2 = losses.sysid_objective(m, b, alpha=2.0)[0, 0]
    assert v2 - v1 == pytest.approx(parts["j_re"], rel=1e-10)
    assert v1 == pytest.approx(parts["j_se"] + parts["j_re"], rel=1e-12)


def test_j_sl_zero_on_expert_from_model():
    m = small_stab(lift_dim=0)
    r = m.realization
    x = np.array([[0.7], [-0.3]])
    xs, us = [], []
    for _ in range(6):
        xs.append(x.ravel())
        us.append((r.K_P @ x).ravel())
        x = r.A_cl @ x
    b = losses.Batch(np.array(xs)[None], np.array(us)[None])
    assert losses.j_sl(m, b)[0, 0] < 1e-28
    assert losses.j_se_prime(m, b)[0, 0] >= 0


def test_j_se_prime_is_one_step_residual():
    m = small_stab()
    rng = np.random.default_rng(4)
    X, U = rng.standard_normal((1, 5, 2)), rng.standard_normal((1, 5, 1))
    r = m.realization
    want = sum(np.sum((m.encode(X[0, t + 1][:, None]) - r.A @ m.encode(X[0, t][:, None])
                       - r.B @ U[0, t][:, None]) ** 2) for t in range(4))
    b = losses.Batch(X, U)
    assert losses.j_se_prime(m, b)[0, 0] == pytest.approx(want, rel=1e-9)
    assert losses.j_se_prime(m, b, normalize=True)[0, 0] == pytest.approx(want / 5, rel=1e-9)


def test_nse_examples():
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    assert losses.nse(x, x) == 0.0
    assert losses.nse(x, np.zeros_like(x)) == 1.0
    assert losses.nse(x, 2 * x) == 1.0
    with pytest.raises(ZeroDivisionError):
        losses.nse(np.zeros((2, 2)), x)
    with pytest.raises(ValueError):
        losses.nse(x, x[:1])


@pytest.mark.parametrize("fused", [True, False])
def test_sysid_gradient_fd(fd_check, fused):
    m = small_stable(5)
    b = [losses.Batch(0.5 * np.random.default_rng(6).standard_normal((2, 5, 2)))]
    err = fd_check(lambda t, q: losses.sysid_objective(m, b, q, alpha=3.0, fused=fused), m.params)
    assert err < 1e-5


@pytest.mark.parametrize("prefeedback,gain", [("identity", "remark"), ("coupling", "remark"),
                                              ("coupling", "recovered")])
def test_imitation_gradient_fd(fd_check, prefeedback, gain):
    m = small_stab(7, prefeedback)
    rng = np.random.default_rng(8)
    # perturb the zero-initialized coupling output layers so their gradients are exercised
    p = {k: v + (0.3 * rng.standard_normal(v.shape) if k.startswith("pf_") else 0.0)
         for k, v in m.params.items()}
    b = [losses.Batch(0.5 * rng.standard_normal((2, 5, 2)), rng.standard_normal((2, 5, 1)))]
    err = fd_check(lambda t, q: losses.imitation_objective(m, b, q, c1=2.0, c2=1.0, c3=0.5,
                                                           alpha=3.0, gain=gain), p)
    assert err < 1e-5
