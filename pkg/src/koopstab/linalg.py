"""Dense real linear algebra used throughout the package.

Matrices are plain ``float64`` numpy arrays. Factorizations come from numpy's
LAPACK bindings; eigenvalues come from the Hessenberg/QR kernel in
:mod:`koopstab.kernels` so that every spectral-radius certificate goes through
one code path.
"""
import numpy as np

from . import kernels

PIVOT_TOL = 1e-12
COND_CAP = 1e14


class LinAlgError(ArithmeticError):
    """Base class for numerical failures in this module."""


class DimensionError(LinAlgError, ValueError):
    pass


class SingularMatrixError(LinAlgError):
    pass


class NotPositiveDefiniteError(LinAlgError):
    pass


class ConvergenceError(LinAlgError):
    pass


class RankDeficientError(LinAlgError):
    pass


def as_matrix(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def _square(a, what):
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{what} needs a square matrix, got {a.shape}")
    return a


def symmetrize(a):
    return 0.5 * (a + a.T)


def matmul(a, b):
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def invert(a, cond_cap=COND_CAP):
    """Inverse by Gauss-Jordan elimination with partial pivoting.

    Raises :class:`SingularMatrixError` when a pivot falls below
    ``PIVOT_TOL`` times the norm of its (original) row, or when the 1-norm
    condition estimate exceeds ``cond_cap``.
    """
    a = _square(a, "invert")
    n = a.shape[0]
    if n == 0:
        return a.copy()
    row_norms = np.abs(a).max(axis=1)
    if np.any(row_norms == 0.0):
        raise SingularMatrixError("matrix has a zero row")
    aug = np.hstack([a, np.eye(n)])
    scale = row_norms.copy()
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col]) / scale[col:]))
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
            scale[[col, piv]] = scale[[piv, col]]
        pivot = aug[col, col]
        if abs(pivot) < PIVOT_TOL * scale[col]:
            raise SingularMatrixError(f"pivot {pivot:.3e} below tolerance at column {col}")
        aug[col] /= pivot
        factors = aug[:, col].copy()
        factors[col] = 0.0
        aug -= np.outer(factors, aug[col])
    inv = aug[:, n:]
    cond = np.abs(a).sum(axis=0).max() * np.abs(inv).sum(axis=0).max()
    if not np.isfinite(cond) or cond > cond_cap:
        raise SingularMatrixError(f"condition number {cond:.3e} exceeds cap {cond_cap:.1e}")
    return inv


def cholesky(a):
    """Lower-triangular ``C`` with ``C @ C.T == a`` for symmetric PD ``a``."""
    a = symmetrize(_square(a, "cholesky"))
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from None


def is_positive_definite(a, tol=0.0):
    """PD test by Cholesky of ``sym(a) - tol * scale * I``."""
    a = symmetrize(_square(a, "is_positive_definite"))
    if a.shape[0] == 0:
        return True
    scale = max(1.0, float(np.abs(a).max()))
    try:
        np.linalg.cholesky(a - tol * scale * np.eye(a.shape[0]))
    except np.linalg.LinAlgError:
        return False
    return True


def eigenvalues(a):
    a = _square(a, "eigenvalues")
    if not np.all(np.isfinite(a)):
        raise LinAlgError("matrix has non-finite entries")
    amax = float(np.abs(a).max()) if a.size else 0.0
    if amax == 0.0:
        return np.zeros(a.shape[0], dtype=complex)
    # power-of-two rescale is exact and keeps subnormal or huge entries away from the QR sweep
    e = int(np.frexp(amax)[1])
    try:
        wr, wi = kernels.eigvals(np.ldexp(a, -e))
    except kernels.ConvergenceError as exc:
        raise ConvergenceError(str(exc)) from None
    return np.ldexp(wr, e) + 1j * np.ldexp(wi, e)


def spectral_radius(a):
    a = _square(a, "spectral_radius")
    if a.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(eigenvalues(a))))


def min_eig_sym(a):
    """Smallest eigenvalue of the symmetric part of ``a``."""
    a = symmetrize(_square(a, "min_eig_sym"))
    return float(np.linalg.eigvalsh(a)[0]) if a.shape[0] else np.inf


def max_eig_sym(a):
    a = symmetrize(_square(a, "max_eig_sym"))
    return float(np.linalg.eigvalsh(a)[-1]) if a.shape[0] else -np.inf


def solve_discrete_lyapunov(a, q, tol=1e-14, max_doublings=64):
    """Solve ``P - a.T @ P @ a = q`` for a Schur-stable ``a``.

    Sums the series ``sum_j (a.T)^j q a^j`` by squaring (Smith's doubling),
    stopping when the next block is below ``tol`` relative to ``P``, then
    applies one residual-correction sweep.
    """
    a = _square(a, "solve_discrete_lyapunov")
    q = symmetrize(_square(q, "solve_discrete_lyapunov"))
    if a.shape != q.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {q.shape}")
    rho = spectral_radius(a)
    if rho >= 1.0:
        raise ValueError(f"solve_discrete_lyapunov needs rho(a) < 1, got {rho:.6g}")
    P = q.copy()
    ak = a.copy()
    for _ in range(max_doublings):
        term = ak.T @ P @ ak
        P = P + term
        ak = ak @ ak
        if np.abs(term).max() <= tol * max(1.0, np.abs(P).max()):
            break
    else:
        raise ConvergenceError("Lyapunov doubling did not converge")
    # one correction with the residual as right-hand side
    res = q - (P - a.T @ P @ a)
    if np.abs(res).max() > 0.0:
        corr = res.copy()
        ak = a.copy()
        for _ in range(max_doublings):
            term = ak.T @ corr @ ak
            corr = corr + term
            ak = ak @ ak
            if np.abs(term).max() <= tol * max(1e-300, np.abs(corr).max()):
                break
        P = P + corr
    return symmetrize(P)


def left_annihilator(b, tol=1e-10):
    """Orthonormal rows spanning the left null space of a full-column-rank ``b``."""
    b = as_matrix(b)
    N, m = b.shape
    if m > N:
        raise DimensionError(f"left annihilator needs rows >= cols, got {b.shape}")
    U, s, _ = np.linalg.svd(b, full_matrices=True)
    if m and s[-1] <= tol * max(1.0, s[0]):
        raise RankDeficientError(f"b is rank deficient (sigma_min={s[-1]:.3e})")
    return U[:, m:].T.copy()


def smallest_singular_value(a):
    a = as_matrix(a)
    if a.size == 0:
        return 0.0
    return float(np.linalg.svd(a, compute_uv=False)[-1])


def norm2(a):
    a = as_matrix(a)
    return float(np.linalg.svd(a, compute_uv=False)[0]) if a.size else 0.0
