import subprocess
import sys

import numpy as np
import pytest

from koopstab import _fallback, kernels


BACKENDS = list(kernels.backends().items())


@pytest.mark.parametrize("name,mod", BACKENDS)
def test_eigvals_agree_with_lapack(name, mod):
    rng = np.random.default_rng(3)
    for n in (1, 2, 3, 7, 25, 60):
        a = rng.standard_normal((n, n))
        wr, wi = mod.eigvals(a)
        got = np.sort_complex(wr + 1j * wi)
        ref = np.sort_complex(np.linalg.eigvals(a))
        assert np.max(np.abs(np.abs(got) - np.abs(ref))) < 1e-9 * max(1.0, np.abs(ref).max())


@pytest.mark.parametrize("name,mod", BACKENDS)
def test_eigvals_special_matrices(name, mod):
    wr, wi = mod.eigvals(np.zeros((4, 4)))
    assert np.all(wr == 0) and np.all(wi == 0)
    wr, wi = mod.eigvals(np.array([[0.0, 0.5], [-0.5, 0.0]]))
    assert np.allclose(np.sort(wi), [-0.5, 0.5]) and np.allclose(wr, 0)
    # defective and badly scaled
    wr, wi = mod.eigvals(np.array([[1.0, 1e8], [0.0, 1.0]]))
    assert np.allclose(wr, 1.0)


@pytest.mark.parametrize("name,mod", BACKENDS)
def test_rollout_kernels_match_unrolled(name, mod):
    rng = np.random.default_rng(1)
    N, k, T = 5, 3, 7
    A = 0.5 * rng.standard_normal((N, N))
    Z0 = rng.standard_normal((N, k))
    Z = mod.rollout_forward(A, Z0, T)
    ref = [Z0]
    for _ in range(T - 1):
        ref.append(A @ ref[-1])
    assert np.allclose(Z, np.hstack(ref), atol=1e-13)
    G = rng.standard_normal(Z.shape)
    dA, dZ0 = mod.rollout_backward(A, Z, G, T)
    # adjoint check against a directional derivative
    dirA = rng.standard_normal(A.shape)
    h = 1e-6
    fp = np.sum(G * mod.rollout_forward(A + h * dirA, Z0, T))
    fm = np.sum(G * mod.rollout_forward(A - h * dirA, Z0, T))
    assert abs((fp - fm) / (2 * h) - np.sum(dA * dirA)) < 1e-6 * max(1.0, abs(np.sum(dA * dirA)))
    dirZ = rng.standard_normal(Z0.shape)
    assert abs(np.sum(G * mod.rollout_forward(A, dirZ, T)) - np.sum(dZ0 * dirZ)) < 1e-9


def test_backends_agree():
    if len(BACKENDS) < 2:
        pytest.skip("compiled extension not built")
    rng = np.random.default_rng(5)
    a = rng.standard_normal((30, 30))
    b = kernels.backends()
    c, p = b["compiled"], b["python"]
    assert np.allclose(np.sort(np.abs(c.eigvals(a)[0] + 1j * c.eigvals(a)[1])),
                       np.sort(np.abs(p.eigvals(a)[0] + 1j * p.eigvals(a)[1])), atol=1e-10)


def test_pure_python_switch():
    code = "import koopstab.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"KOOPSTAB_PURE_PYTHON": "1", "PATH": ""}, check=True)
    assert out.stdout.strip() == "python"


def test_convergence_error_is_catchable():
    assert issubclass(_fallback.ConvergenceError, ArithmeticError)
    assert _fallback.ConvergenceError in kernels.ConvergenceError


def test_dispatch_matches_both_sides_of_threshold():
    rng = np.random.default_rng(2)
    for N in (kernels.ROLLOUT_COMPILED_MAX, kernels.ROLLOUT_COMPILED_MAX + 1):
        A, Z0 = 0.2 * rng.standard_normal((N, N)), rng.standard_normal((N, 2))
        Z = kernels.rollout_forward(A, Z0, 4)
        assert np.allclose(Z, _fallback.rollout_forward(A, Z0, 4), atol=1e-12)
        G = rng.standard_normal(Z.shape)
        for got, ref in zip(kernels.rollout_backward(A, Z, G, 4), _fallback.rollout_backward(A, Z, G, 4)):
            assert np.allclose(got, ref, atol=1e-12)
