import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from koopstab import autodiff as ad
from koopstab import nn


def test_mlp_shapes_and_count():
    net = nn.Mlp("f", (3, 5, 2))
    p = net.init(np.random.default_rng(0))
    assert sorted(p) == sorted(net.names())
    assert sum(v.size for v in p.values()) == net.n_params() == 3 * 5 + 5 + 5 * 2 + 2
    assert net.apply(p, np.ones((3, 7))).shape == (2, 7)


def test_mlp_rejects_bad_config():
    with pytest.raises(ValueError):
        nn.Mlp("f", (3,))
    with pytest.raises(ValueError):
        nn.Mlp("f", (3, 2), activation="sigmoid")


@pytest.mark.parametrize("act", ["relu", "tanh", "linear"])
def test_mlp_jacobian_matches_fd(act):
    net = nn.Mlp("f", (3, 8, 8, 2), act)
    p = net.init(np.random.default_rng(1))
    x = np.array([0.3, -0.7, 1.1])
    J = net.jacobian(p, x)
    h = 1e-6
    fd = np.column_stack([(net.apply(p, (x + h * e)[:, None]) - net.apply(p, (x - h * e)[:, None])).ravel() / (2 * h)
                          for e in np.eye(3)])
    assert np.allclose(J, fd, atol=1e-6)


def test_encoder_keeps_state_on_top():
    ed = nn.EncoderDecoder(2, lift_out=4, hidden=(6,))
    p = ed.init(np.random.default_rng(0))
    X = np.random.default_rng(1).standard_normal((2, 5))
    Z = ed.encode(p, X)
    assert Z.shape == (6, 5) and np.array_equal(Z[:2], X)
    assert ed.decode(p, Z).shape == (2, 5)
    J = ed.encoder_jacobian(p, X[:, 0])
    assert np.allclose(J, ed.encoder_jacobian(p, X[:, 0], mode="fd"), atol=1e-6)
    assert np.array_equal(J[:2], np.eye(2))


def test_encoder_without_lift():
    ed = nn.EncoderDecoder(3, lift_out=0, hidden=(4,))
    p = ed.init(np.random.default_rng(0))
    X = np.ones((3, 2))
    assert ed.encode(p, X) is X
    assert ed.N == 3


def test_encoder_rejects_wrong_rows():
    ed = nn.EncoderDecoder(2, lift_out=2, hidden=(3,))
    p = ed.init(np.random.default_rng(0))
    with pytest.raises(ValueError):
        ed.encode(p, np.ones((3, 1)))
    with pytest.raises(ValueError):
        ed.decode(p, np.ones((2, 1)))


def test_fresh_coupling_is_identity():
    pf = nn.Prefeedback("coupling", 3, 2)
    p = pf.init(np.random.default_rng(0))
    X, V = np.ones((3, 4)), np.arange(8.0).reshape(2, 4)
    assert np.array_equal(pf.forward(p, X, V), V)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 4))
def test_coupling_round_trip(seed, m, n):
    rng = np.random.default_rng(seed)
    pf = nn.Prefeedback("coupling", n, m, hidden=(5,))
    p = pf.init(rng)
    # move the zero-initialized output layers so the map is non-trivial
    p = {k: v + 0.5 * rng.standard_normal(v.shape) for k, v in p.items()}
    X, V = rng.standard_normal((n, 6)), rng.standard_normal((m, 6))
    U = pf.forward(p, X, V)
    assert np.max(np.abs(pf.inverse(p, X, U) - V)) < 1e-12 * max(1.0, np.abs(V).max())
    assert np.max(np.abs(pf.forward(p, X, pf.inverse(p, X, U)) - U)) < 1e-12 * max(1.0, np.abs(U).max())


def test_coupling_gradient(fd_check):
    rng = np.random.default_rng(2)
    pf = nn.Prefeedback("coupling", 2, 1, hidden=(4,))
    p = {k: v + 0.3 * rng.standard_normal(v.shape) for k, v in pf.init(rng).items()}
    X, V = rng.standard_normal((2, 5)), rng.standard_normal((1, 5))
    assert fd_check(lambda t, q: ad.sumsq(pf.forward(q, X, V)), p) < 1e-6


def test_identity_prefeedback():
    pf = nn.Prefeedback("identity", 2, 1)
    assert pf.names() == [] and pf.init(None) == {}
    with pytest.raises(ValueError):
        nn.Prefeedback("affine", 2, 1)
