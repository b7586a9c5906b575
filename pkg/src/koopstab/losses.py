"""Training objectives for the lifted models.

Every loss accepts a model, a :class:`Batch` and an optional parameter dict
``p``; passing tape tensors in ``p`` makes the result differentiable. Batches
stack ``k`` equal-length trajectories as columns in time-major order, so
column ``t*k + j`` is sample ``t`` of trajectory ``j``.

Autonomous losses (mean over time per trajectory, summed over trajectories)::

    j_se = sum_j 1/T sum_t |phi(x_t) - A^t phi(x_0)|^2
    j_re = sum_j 1/T sum_t |x_t - psi(phi(x_t))|^2

Controlled losses are plain sums over samples unless ``normalize=True``.
"""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass
class Batch:
    X: np.ndarray
    U: np.ndarray = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim == 2:
            self.X = self.X[None]
        if self.U is not None:
            self.U = np.asarray(self.U, dtype=np.float64)
            if self.U.ndim == 2:
                self.U = self.U[None]
        self.Xc = to_columns(self.X)
        self.Uc = to_columns(self.U) if self.U is not None else None

    @property
    def k(self):
        return self.X.shape[0]

    @property
    def T(self):
        return self.X.shape[1]


def to_columns(X):
    """(k, T, n) -> (n, T*k) with column ``t*k + j`` holding ``X[j, t]``."""
    k, T, n = X.shape
    return np.ascontiguousarray(X.transpose(2, 1, 0).reshape(n, T * k))


def from_columns(C, k):
    n, Tk = C.shape
    return C.reshape(n, Tk // k, k).transpose(2, 1, 0)


def make_batches(dataset):
    return [Batch(X, U) for X, U in dataset.batches()]


def _p(model, p):
    return model.params if p is None else p


# autonomous -----------------------------------------------------------------

def _se(A, Z, b, fused):
    k = b.k
    pred = ad.rollout(A, ad.block(Z, slice(None), slice(0, k)), b.T, fused=fused)
    return ad.scale(ad.sumsq(ad.sub(Z, pred)), 1.0 / b.T)


def _re(model, p, Z, b, T_norm):
    rec = model.decode(Z, p)
    return ad.scale(ad.sumsq(ad.sub(b.Xc, rec)), 1.0 / T_norm)


def j_se(model, batch, p=None, fused=True):
    p = _p(model, p)
    A = model.system(p) if model.kind == "stable" else model.system(p)[0]
    return _se(A, model.encode(batch.Xc, p), batch, fused)


def j_re(model, batch, p=None):
    p = _p(model, p)
    return _re(model, p, model.encode(batch.Xc, p), batch, batch.T)


def sysid_objective(model, batches, p=None, alpha=1.0, fused=True, parts=False):
    """``sum over batches of j_se + alpha j_re``; ``parts=True`` also returns both terms."""
    p = _p(model, p)
    A = model.system(p)
    total = se_sum = re_sum = None
    for b in batches:
        Z = model.encode(b.Xc, p)
        se = _se(A, Z, b, fused)
        re = _re(model, p, Z, b, b.T)
        term = ad.add(se, ad.scale(re, alpha))
        total = term if total is None else ad.add(total, term)
        se_sum = ad.value(se) if se_sum is None else se_sum + ad.value(se)
        re_sum = ad.value(re) if re_sum is None else re_sum + ad.value(re)
    if parts:
        return total, {"j_se": float(se_sum[0, 0]), "j_re": float(re_sum[0, 0])}
    return total


# controlled -----------------------------------------------------------------

def _split(b, Z, p, model):
    k, T = b.k, b.T
    cur, nxt = slice(0, (T - 1) * k), slice(k, T * k)
    Zc = ad.block(Z, slice(None), cur)
    Zn = ad.block(Z, slice(None), nxt)
    Xc = b.Xc[:, cur]
    V = model.input_unmap(Xc, b.Uc[:, cur], p)
    return Zc, Zn, V


def _norm(b, normalize):
    return 1.0 / b.T if normalize else 1.0


def _gain_of(sysm, gain):
    _, _, _, K, K_P = sysm
    if gain == "remark":
        return K_P
    if gain == "recovered":
        return K
    raise ValueError(f"unknown gain choice {gain!r}")


def _controlled_terms(model, p, b, sysm, gain, normalize):
    A, B, A_cl, _, _ = sysm
    Z = model.encode(b.Xc, p)
    Zc, Zn, V = _split(b, Z, p, model)
    c = _norm(b, normalize)
    se = ad.sumsq(ad.sub(ad.sub(Zn, ad.matmul(A, Zc)), ad.matmul(B, V)))
    sl = ad.add(ad.sumsq(ad.sub(Zn, ad.matmul(A_cl, Zc))),
                ad.sumsq(ad.sub(V, ad.matmul(_gain_of(sysm, gain), Zc))))
    re = ad.sumsq(ad.sub(b.Xc, model.decode(Z, p)))
    return ad.scale(se, c), ad.scale(sl, c), ad.scale(re, c)


def j_se_prime(model, batch, p=None, normalize=False):
    """``sum_t |z_{t+1} - A z_t - B v_t|^2`` with ``v_t = alpha^-1(x_t, u_t)``."""
    p = _p(model, p)
    return _controlled_terms(model, p, batch, model.system(p), "remark", normalize)[0]


def j_sl(model, batch, p=None, gain="remark", normalize=False):
    """``sum_t |z_{t+1} - A_cl z_t|^2 + |v_t - K z_t|^2``."""
    p = _p(model, p)
    return _controlled_terms(model, p, batch, model.system(p), gain, normalize)[1]


def j_re_prime(model, batch, p=None, normalize=False):
    p = _p(model, p)
    return _controlled_terms(model, p, batch, model.system(p), "remark", normalize)[2]


def imitation_objective(model, batches, p=None, c1=100.0, c2=1.0, c3=1.0, alpha=1.0,
                        gain="remark", normalize=False, parts=False):
    """``c1 j_se' + c2 j_sl + c3 alpha j_re'`` summed over batches."""
    p = _p(model, p)
    sysm = model.system(p)
    total = None
    sums = np.zeros(3)
    for b in batches:
        se, sl, re = _controlled_terms(model, p, b, sysm, gain, normalize)
        term = ad.add(ad.add(ad.scale(se, c1), ad.scale(sl, c2)), ad.scale(re, c3 * alpha))
        total = term if total is None else ad.add(total, term)
        sums += [ad.value(se)[0, 0], ad.value(sl)[0, 0], ad.value(re)[0, 0]]
    if parts:
        return total, {"j_se_prime": sums[0], "j_sl": sums[1], "j_re_prime": sums[2]}
    return total


# evaluation -----------------------------------------------------------------

def nse(reference, simulated):
    """Normalized squared error ``sum |x_hat - x|^2 / sum |x|^2``."""
    ref = np.asarray(reference, dtype=np.float64)
    sim = np.asarray(simulated, dtype=np.float64)
    if ref.shape != sim.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {sim.shape}")
    den = float(np.sum(ref * ref))
    if den == 0.0:
        raise ZeroDivisionError("reference trajectory is identically zero")
    return float(np.sum((sim - ref) ** 2)) / den
