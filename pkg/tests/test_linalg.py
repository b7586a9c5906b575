import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from koopstab import linalg


def rand_stable(rng, n, rho=0.9):
    a = rng.standard_normal((n, n))
    return a * (rho / max(np.abs(np.linalg.eigvals(a)).max(), 1e-12))


def test_matmul_examples():
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(linalg.matmul(np.eye(2), x), x)
    assert np.array_equal(linalg.matmul([[1, 2], [3, 4]], [[1], [1]]), [[3], [7]])
    assert np.array_equal(linalg.matmul(np.zeros((2, 2)), x), np.zeros((2, 3)))
    with pytest.raises(linalg.DimensionError):
        linalg.matmul(np.eye(2), np.eye(3))


def test_invert_examples():
    assert np.allclose(linalg.invert(np.eye(3)), np.eye(3))
    assert np.allclose(linalg.invert(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))
    with pytest.raises(linalg.SingularMatrixError):
        linalg.invert([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(linalg.SingularMatrixError):
        linalg.invert([[1.0, 0.0], [0.0, 1e-15]])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(0, 10_000))
def test_invert_residual(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) + n * np.eye(n)
    inv = linalg.invert(a)
    assert np.linalg.norm(a @ inv - np.eye(n)) / np.sqrt(n) < 1e-10


def test_cholesky_examples():
    assert np.allclose(linalg.cholesky(np.eye(3)), np.eye(3))
    assert np.allclose(linalg.cholesky([[4.0, 2.0], [2.0, 5.0]]), [[2.0, 0.0], [1.0, 2.0]])
    with pytest.raises(linalg.NotPositiveDefiniteError):
        linalg.cholesky([[1.0, 2.0], [2.0, 1.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 25), st.integers(0, 10_000))
def test_cholesky_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, n))
    a = g @ g.T + 0.1 * np.eye(n)
    c = linalg.cholesky(a)
    assert np.allclose(c, np.tril(c))
    assert np.linalg.norm(c @ c.T - a) <= 1e-10 * np.linalg.norm(a)


def test_pd_test():
    assert linalg.is_positive_definite(np.eye(2))
    assert not linalg.is_positive_definite([[1.0, 2.0], [2.0, 1.0]])
    assert not linalg.is_positive_definite(np.diag([1.0, 1e-14]), tol=1e-12)


def test_spectral_radius_examples():
    assert linalg.spectral_radius(np.diag([0.3, -0.9])) == pytest.approx(0.9, abs=1e-12)
    assert linalg.spectral_radius([[0.0, 0.5], [-0.5, 0.0]]) == pytest.approx(0.5, abs=1e-12)
    assert linalg.spectral_radius(np.zeros((3, 3))) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(0, 10_000))
def test_spectral_radius_matches_lapack_and_norm_bound(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    rho = linalg.spectral_radius(a)
    ref = np.abs(np.linalg.eigvals(a)).max()
    assert abs(rho - ref) <= 1e-8 * max(1.0, ref)
    assert rho <= linalg.norm2(a) * (1 + 1e-12)


def test_spectral_radius_rejects_nonfinite():
    with pytest.raises(linalg.LinAlgError):
        linalg.spectral_radius([[np.nan, 0.0], [0.0, 1.0]])


def test_lyapunov_examples():
    assert np.allclose(linalg.solve_discrete_lyapunov(np.zeros((2, 2)), np.eye(2)), np.eye(2))
    p = linalg.solve_discrete_lyapunov([[0.5]], [[1.0]])
    assert p[0, 0] == pytest.approx(4.0 / 3.0, rel=1e-14)
    with pytest.raises(ValueError):
        linalg.solve_discrete_lyapunov([[1.0]], [[1.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(0, 10_000), st.floats(0.0, 0.995))
def test_lyapunov_residual_symmetry_pd(n, seed, rho):
    rng = np.random.default_rng(seed)
    a = rand_stable(rng, n, rho)
    g = rng.standard_normal((n, n))
    q = g @ g.T + np.eye(n)
    p = linalg.solve_discrete_lyapunov(a, q)
    assert np.abs(p - p.T).max() <= 1e-12 * max(1.0, np.abs(p).max())
    assert np.linalg.norm(p - a.T @ p @ a - q) < 1e-9 * max(1.0, np.linalg.norm(p))
    linalg.cholesky(p)


def test_left_annihilator_examples():
    perp = linalg.left_annihilator([[1.0], [0.0]])
    assert np.allclose(np.abs(perp), [[0.0, 1.0]])
    assert linalg.left_annihilator(np.eye(3)).shape == (0, 3)
    with pytest.raises(linalg.RankDeficientError):
        linalg.left_annihilator([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 15), st.integers(0, 10_000))
def test_left_annihilator_property(m, extra, seed):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((m + extra, m))
    perp = linalg.left_annihilator(b)
    assert perp.shape == (extra, m + extra)
    assert np.linalg.norm(perp @ b) < 1e-10
    assert np.allclose(perp @ perp.T, np.eye(extra), atol=1e-10)


def test_smallest_singular_value():
    assert linalg.smallest_singular_value(np.eye(3)) == pytest.approx(1.0)
    assert linalg.smallest_singular_value([[1.0, 0.0], [0.0, 0.0]]) == 0.0
    q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 6)))
    assert abs(linalg.smallest_singular_value(q) - 1.0) < 1e-10
