"""Backend selection for the hot kernels.

The compiled extension is used when it imports; set ``KOOPSTAB_PURE_PYTHON=1``
to force the numpy fallback. ``BACKEND`` names the active one.
"""
import os

from . import _fallback

if os.environ.get("KOOPSTAB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

# above this lifted dimension the compiled loops lose to numpy's BLAS matmuls
# (see benchmarks/bench_kernels.py)
ROLLOUT_COMPILED_MAX = 24

eigvals = _impl.eigvals


def rollout_forward(A, Z0, T):
    impl = _impl if A.shape[0] <= ROLLOUT_COMPILED_MAX else _fallback
    return impl.rollout_forward(A, Z0, T)


def rollout_backward(A, Z, G, T):
    impl = _impl if A.shape[0] <= ROLLOUT_COMPILED_MAX else _fallback
    return impl.rollout_backward(A, Z, G, T)

ConvergenceError = (_fallback.ConvergenceError,) + (
    (_impl.ConvergenceError,) if _impl is not _fallback else ())

__all__ = ["BACKEND", "ROLLOUT_COMPILED_MAX", "eigvals", "rollout_forward", "rollout_backward",
           "ConvergenceError", "backends"]


def backends():
    """Map of available backend name -> module, for benchmarks and tests."""
    out = {"python": _fallback}
    try:
        from . import _kernels
        out["compiled"] = _kernels
    except ImportError:
        pass
    return out
