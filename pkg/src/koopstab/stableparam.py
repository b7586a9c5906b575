"""Unconstrained parameterizations of Schur-stable matrices and stabilizable pairs.

From free ``L`` (2N x 2N) and ``R`` (N x N) build ``M = L L^T + eps I`` with
N x N blocks ``M11, M12, M21, M22`` and set::

    E = (M11 + M22 + R - R^T) / 2,   F = M21,   A = E^-1 F.

``M`` is positive definite for every ``(L, R)``, so ``A`` is Schur stable. The
stabilizable pair adds free ``S`` (m x N) and full-rank ``B`` (N x m): the
construction above gives the closed-loop matrix ``A_cl`` and::

    A = [B_perp; B^T]^-1 [B_perp A_cl; S],   K = (B^T B)^-1 (B^T A_cl - S),

so that ``A + B K = A_cl``.

The ``*_core`` functions are written with :mod:`koopstab.autodiff` ops and
accept either numpy arrays or tape tensors; the public functions work on
numpy arrays and validate their inputs.
"""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import linalg

DEFAULT_EPS = 1e-8


class CertificateError(RuntimeError):
    """A stability certificate failed where the construction guarantees it."""


# generic cores -------------------------------------------------------------

def _gram_blocks(L, eps):
    two_n = ad.value(L).shape[0]
    N = two_n // 2
    M = ad.add(ad.matmul(L, ad.transpose(L)), eps * np.eye(two_n))
    top, bot = slice(0, N), slice(N, two_n)
    return (ad.block(M, top, top), ad.block(M, bot, top), ad.block(M, bot, bot))


def stable_core(L, R, eps):
    """Return ``(A, M22)`` for the free parameters ``(L, R)``."""
    M11, M21, M22 = _gram_blocks(L, eps)
    E2 = ad.add(ad.add(M11, M22), ad.sub(R, ad.transpose(R)))
    A = ad.scale(ad.matmul(ad.inv(E2), M21), 2.0)
    return A, M22


def remark_gain_core(B, M22, A_cl):
    """Gain ``K_P = B^T M22 A_cl / 2``."""
    return ad.scale(ad.matmul(ad.matmul(ad.transpose(B), M22), A_cl), 0.5)


def stabilizable_core(L, R, S, B, eps):
    """Return ``(A, A_cl, K, K_P)`` without forming the annihilator.

    Uses ``A = A_cl - B K`` with ``K = (B^T B)^-1 (B^T A_cl - S)``, which equals
    the annihilator form for any full-rank annihilator.
    """
    A_cl, M22 = stable_core(L, R, eps)
    Bt = ad.transpose(B)
    K = ad.matmul(ad.inv(ad.matmul(Bt, B)), ad.sub(ad.matmul(Bt, A_cl), S))
    A = ad.sub(A_cl, ad.matmul(B, K))
    return A, A_cl, K, remark_gain_core(B, M22, A_cl)


# parameter containers ------------------------------------------------------

def _finite(name, x):
    x = np.array(x, dtype=np.float64, ndmin=2)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    return x


@dataclass
class StableParams:
    L: np.ndarray
    R: np.ndarray
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        self.L = _finite("L", self.L)
        self.R = _finite("R", self.R)
        N = self.R.shape[0]
        if self.R.shape != (N, N) or self.L.shape != (2 * N, 2 * N):
            raise ValueError(f"need L 2Nx2N and R NxN, got {self.L.shape}, {self.R.shape}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @property
    def N(self):
        return self.R.shape[0]

    @classmethod
    def random(cls, N, rng, scale=1.0, eps=DEFAULT_EPS):
        return cls(scale * rng.standard_normal((2 * N, 2 * N)),
                   scale * rng.standard_normal((N, N)), eps)


@dataclass
class StabilizableParams:
    L: np.ndarray
    R: np.ndarray
    S: np.ndarray
    B: np.ndarray
    eps: float = DEFAULT_EPS
    rank_tol: float = 1e-10

    def __post_init__(self):
        self.L = _finite("L", self.L)
        self.R = _finite("R", self.R)
        self.S = _finite("S", self.S)
        self.B = _finite("B", self.B)
        N = self.R.shape[0]
        m = self.B.shape[1]
        if (self.L.shape != (2 * N, 2 * N) or self.R.shape != (N, N)
                or self.B.shape != (N, m) or self.S.shape != (m, N)):
            raise ValueError("inconsistent shapes for (L, R, S, B)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if m > N:
            raise ValueError("B needs at least as many rows as columns")
        smin = linalg.smallest_singular_value(self.B)
        if smin <= self.rank_tol * max(1.0, linalg.norm2(self.B)):
            raise linalg.RankDeficientError(f"B is rank deficient (sigma_min={smin:.3e})")

    @property
    def N(self):
        return self.R.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @classmethod
    def random(cls, N, m, rng, scale=1.0, eps=DEFAULT_EPS):
        return cls(scale * rng.standard_normal((2 * N, 2 * N)),
                   scale * rng.standard_normal((N, N)),
                   scale * rng.standard_normal((m, N)),
                   rng.standard_normal((N, m)), eps)


@dataclass
class Realization:
    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    A_cl: np.ndarray
    K_P: np.ndarray


@dataclass
class StabilityCertificate:
    """Spectral radius and Lyapunov margin of a (closed-loop) matrix.

    ``lyapunov`` solves ``P - A^T P A = I``; ``margin`` is the smallest
    eigenvalue of ``P - A^T P A`` recomputed from that ``P``.
    """

    A: np.ndarray
    lyapunov: np.ndarray
    spectral_radius: float
    margin: float
    B: np.ndarray = None
    K: np.ndarray = None
    A_cl: np.ndarray = None

    @property
    def passed(self):
        return self.spectral_radius < 1.0 and self.margin > 0.0

    def to_dict(self):
        d = {"spectral_radius": self.spectral_radius, "margin": self.margin,
             "passed": bool(self.passed), "dim": int(self.A.shape[0]),
             "lyapunov_max_eig": linalg.max_eig_sym(self.lyapunov)}
        if self.B is not None:
            d["inputs"] = int(self.B.shape[1])
        return d


# public numeric API --------------------------------------------------------

def implicit_form(p):
    """The matrices ``(E, F, P)`` with ``A = E^-1 F`` and ``P = M22``."""
    M = p.L @ p.L.T + p.eps * np.eye(2 * p.N)
    N = p.N
    M11, M21, M22 = M[:N, :N], M[N:, :N], M[N:, N:]
    E = 0.5 * (M11 + M22 + p.R - p.R.T)
    return E, M21, M22


def realize_stable(p):
    A, _ = stable_core(p.L, p.R, p.eps)
    return A


LYAPUNOV_FORMS = ("implicit", "inverse-block")


def lyapunov_from_params(p, form="implicit", check=True):
    """Lyapunov matrix read off the parameters.

    ``form="implicit"`` returns ``Q = E^T M22^-1 E``. ``M`` being positive
    definite makes ``Q - A^T Q A`` dominate the Schur complement of ``M22`` in
    ``M``, so its check cannot fail except through round-off.
    ``form="inverse-block"`` returns ``M22^-1``, which certifies some
    parameter draws but not all; with ``check=True`` a failure raises
    :class:`CertificateError`.
    """
    if form not in LYAPUNOV_FORMS:
        raise ValueError(f"unknown form {form!r}")
    E, _, P = implicit_form(p)
    A = realize_stable(p)
    Pinv = linalg.invert(P)
    Q = linalg.symmetrize(E.T @ Pinv @ E if form == "implicit" else Pinv)
    if check and not linalg.is_positive_definite(Q - A.T @ Q @ A):
        raise CertificateError(f"Q - A^T Q A is not positive definite ({form} form)")
    return Q


def lyapunov_margins(p):
    """Smallest eigenvalue of ``X - A^T X A`` for the candidate matrices.

    Keys: ``"E^T M22^-1 E"`` (the certificate), ``"M22^-1"`` and ``"M22"``.
    """
    E, _, P = implicit_form(p)
    A = realize_stable(p)
    Pinv = linalg.invert(P)
    cands = {"E^T M22^-1 E": E.T @ Pinv @ E, "M22^-1": Pinv, "M22": P}
    return {k: linalg.min_eig_sym(X - A.T @ X @ A) for k, X in cands.items()}


def embed_stable(A, eps=DEFAULT_EPS, min_eps=1e-300):
    """Parameters ``(L, R, eps)`` whose realization is the Schur-stable ``A``.

    Takes ``P`` from ``P - A^T P A = I`` and uses ``E = P``, ``F = P A``,
    ``R = 0``; ``eps`` is shrunk by decades until ``M - eps I`` is PD.
    """
    A = linalg.as_matrix(A)
    rho = linalg.spectral_radius(A)
    if rho >= 1.0:
        raise ValueError(f"embed_stable needs a Schur-stable matrix, rho={rho:.6g}")
    N = A.shape[0]
    P = linalg.solve_discrete_lyapunov(A, np.eye(N))
    F = P @ A
    M = np.block([[P, F.T], [F, P]])
    while True:
        try:
            L = linalg.cholesky(M - eps * np.eye(2 * N))
            break
        except linalg.NotPositiveDefiniteError:
            eps *= 0.1
            if eps < min_eps:
                raise
    return StableParams(L, np.zeros((N, N)), eps)


def realize_stabilizable(p):
    """Realize ``(A, B, K, A_cl, K_P)`` using the annihilator form for ``A``."""
    A_cl, M22 = stable_core(p.L, p.R, p.eps)
    B = p.B
    B_perp = linalg.left_annihilator(B)
    stacked = np.vstack([B_perp, B.T])
    A = linalg.invert(stacked) @ np.vstack([B_perp @ A_cl, p.S])
    K = recover_feedback_gain(p, A_cl=A_cl)
    K_P = remark_gain_core(B, M22, A_cl)
    return Realization(A, B.copy(), K, A_cl, K_P)


def recover_feedback_gain(p, A_cl=None):
    if A_cl is None:
        A_cl = realize_stable(StableParams(p.L, p.R, p.eps))
    B = p.B
    return linalg.invert(B.T @ B) @ (B.T @ A_cl - p.S)


def remark_gain(p):
    A_cl, M22 = stable_core(p.L, p.R, p.eps)
    return remark_gain_core(p.B, M22, A_cl)


def certify(A, B=None, K=None):
    """Build a :class:`StabilityCertificate` for ``A`` or for ``A + B K``."""
    A = linalg.as_matrix(A)
    if B is not None:
        B, K = linalg.as_matrix(B), linalg.as_matrix(K)
    A_cl = A if B is None else A + B @ K
    rho = linalg.spectral_radius(A_cl)
    if rho < 1.0:
        P = linalg.solve_discrete_lyapunov(A_cl, np.eye(A_cl.shape[0]))
        margin = linalg.min_eig_sym(P - A_cl.T @ P @ A_cl)
    else:
        P = np.full_like(A_cl, np.nan)
        margin = -np.inf
    return StabilityCertificate(A, P, rho, margin, B, K, A_cl if B is not None else None)
