"""Reverse-mode differentiation over a define-by-run tape.

Every value is a 2-D ``float64`` array. A :class:`Tape` records each primitive
in execution order, so the reverse sweep is a plain walk backwards over the
node list. The free functions at the bottom (``matmul``, ``relu``, ``inv``
and friends) accept either tensors or numpy arrays; with arrays they just
compute, which lets model code run unchanged with or without a tape.
"""
import numpy as np

from . import kernels
from . import linalg


class NonFiniteError(FloatingPointError):
    """A forward value or gradient contained NaN or inf."""


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "tape", "requires_grad", "name", "grad")

    def __init__(self, value, tape=None, requires_grad=False, name=None):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)


class _Node:
    __slots__ = ("out", "inputs", "backward", "kind")

    def __init__(self, kind, out, inputs, backward):
        self.kind = kind
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Records primitives; ``backward`` returns gradients for named leaves."""

    def __init__(self):
        self.nodes = []
        self.params = {}

    def param(self, name, value):
        value = np.array(value, dtype=np.float64, ndmin=2)
        t = Tensor(value, self, True, name)
        self.params[name] = t
        return t

    def const(self, value):
        return Tensor(np.asarray(value, dtype=np.float64), None, False)

    def record(self, kind, value, inputs, backward):
        out = Tensor(value, self, True)
        self.nodes.append(_Node(kind, out, inputs, backward))
        return out

    def backward(self, loss):
        if loss.shape != (1, 1):
            raise ShapeError(f"loss must be scalar (1x1), got {loss.shape}")
        if not np.isfinite(loss.value[0, 0]):
            raise NonFiniteError("loss is not finite")
        for node in self.nodes:
            node.out.grad = None
        for p in self.params.values():
            p.grad = None
        loss.grad = np.ones((1, 1))
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                inp.grad = gi if inp.grad is None else inp.grad + gi
        out = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {name}")
            out[name] = g
        return out


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Tensor) and x.tape is not None:
            return x.tape
    return None


def _val(x):
    if isinstance(x, Tensor):
        return x.value
    v = np.asarray(x, dtype=np.float64)
    return v.reshape(1, 1) if v.ndim == 0 else v


def _wants(x):
    return isinstance(x, Tensor) and x.requires_grad


def _unbroadcast(g, shape):
    # only column-vector broadcasting (bias terms) is supported
    if g.shape == shape:
        return g
    if shape[1] == 1 and g.shape[0] == shape[0]:
        return g.sum(axis=1, keepdims=True)
    if shape == (1, 1):
        return np.array([[g.sum()]])
    raise ShapeError(f"cannot unbroadcast {g.shape} to {shape}")


def _check_broadcast(a, b):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    for big, small in ((sa, sb), (sb, sa)):
        if small == (1, 1) or (small[1] == 1 and small[0] == big[0]):
            return
    raise ShapeError(f"incompatible shapes {sa} and {sb}")


# primitives -----------------------------------------------------------------

def matmul(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul shape mismatch {av.shape} @ {bv.shape}")
    out = av @ bv
    if tape is None:
        return out

    def back(g):
        return (g @ bv.T if _wants(a) else None, av.T @ g if _wants(b) else None)
    return tape.record("matmul", out, (a, b), back)


def add(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    _check_broadcast(av, bv)
    out = av + bv
    if tape is None:
        return out

    def back(g):
        return (_unbroadcast(g, av.shape) if _wants(a) else None,
                _unbroadcast(g, bv.shape) if _wants(b) else None)
    return tape.record("add", out, (a, b), back)


def sub(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    _check_broadcast(av, bv)
    out = av - bv
    if tape is None:
        return out

    def back(g):
        return (_unbroadcast(g, av.shape) if _wants(a) else None,
                -_unbroadcast(g, bv.shape) if _wants(b) else None)
    return tape.record("sub", out, (a, b), back)


def hadamard(a, b):
    tape = _tape_of(a, b)
    av, bv = _val(a), _val(b)
    _check_broadcast(av, bv)
    out = av * bv
    if tape is None:
        return out

    def back(g):
        return (_unbroadcast(g * bv, av.shape) if _wants(a) else None,
                _unbroadcast(g * av, bv.shape) if _wants(b) else None)
    return tape.record("hadamard", out, (a, b), back)


def scale(a, c):
    tape = _tape_of(a)
    out = _val(a) * c
    if tape is None:
        return out
    return tape.record("scale", out, (a,), lambda g: (g * c,))


def transpose(a):
    tape = _tape_of(a)
    out = _val(a).T
    if tape is None:
        return out.copy()
    return tape.record("transpose", out, (a,), lambda g: (g.T,))


def concat_rows(parts):
    tape = _tape_of(*parts)
    vals = [_val(p) for p in parts]
    out = np.vstack(vals)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [v.shape[0] for v in vals])

    def back(g):
        return tuple(g[bounds[i]:bounds[i + 1]] if _wants(p) else None
                     for i, p in enumerate(parts))
    return tape.record("concat-rows", out, tuple(parts), back)


def concat_cols(parts):
    tape = _tape_of(*parts)
    vals = [_val(p) for p in parts]
    out = np.hstack(vals)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [v.shape[1] for v in vals])

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] if _wants(p) else None
                     for i, p in enumerate(parts))
    return tape.record("concat-cols", out, tuple(parts), back)


def block(a, rows=slice(None), cols=slice(None)):
    """Sub-matrix ``a[rows, cols]`` for contiguous slices."""
    tape = _tape_of(a)
    av = _val(a)
    out = av[rows, cols]
    if tape is None:
        return out.copy()

    def back(g):
        full = np.zeros_like(av)
        full[rows, cols] = g
        return (full,)
    return tape.record("slice", out, (a,), back)


def relu(a):
    tape = _tape_of(a)
    av = _val(a)
    out = np.maximum(av, 0.0)
    if tape is None:
        return out
    mask = av > 0.0
    return tape.record("relu", out, (a,), lambda g: (g * mask,))


def tanh(a):
    tape = _tape_of(a)
    out = np.tanh(_val(a))
    if tape is None:
        return out
    return tape.record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a):
    tape = _tape_of(a)
    out = np.exp(_val(a))
    if tape is None:
        return out
    return tape.record("exp", out, (a,), lambda g: (g * out,))


def inv(a):
    """Matrix inverse; the adjoint uses d(X^-1) = -X^-1 dX X^-1."""
    tape = _tape_of(a)
    out = linalg.invert(_val(a))
    if tape is None:
        return out

    def back(g):
        return (-(out.T @ g @ out.T),)
    return tape.record("matrix-inverse", out, (a,), back)


def sumsq(a):
    tape = _tape_of(a)
    av = _val(a)
    out = np.array([[float(np.sum(av * av))]])
    if tape is None:
        return out
    return tape.record("sum-of-squares", out, (a,), lambda g: (2.0 * g[0, 0] * av,))


def rollout(A, Z0, T, fused=True):
    """Column blocks ``[Z0, A Z0, ..., A^(T-1) Z0]`` as an ``N x T*k`` matrix.

    With ``fused=True`` this is a single tape node backed by the rollout
    kernel; otherwise each step is recorded as its own matmul.
    """
    tape = _tape_of(A, Z0)
    if not fused:
        blocks = [Z0]
        for _ in range(1, T):
            blocks.append(matmul(A, blocks[-1]))
        return concat_cols(blocks)
    Av, Zv = _val(A), _val(Z0)
    out = kernels.rollout_forward(Av, Zv, T)
    if tape is None:
        return out

    def back(g):
        dA, dZ0 = kernels.rollout_backward(Av, out, np.ascontiguousarray(g), T)
        return (dA if _wants(A) else None, dZ0 if _wants(Z0) else None)
    return tape.record("rollout", out, (A, Z0), back)


PRIMITIVES = {
    "matmul": matmul, "add": add, "sub": sub, "hadamard": hadamard,
    "scalar-mul": scale, "concat-rows": concat_rows, "relu": relu,
    "tanh": tanh, "exp": exp, "matrix-inverse": inv, "sum-of-squares": sumsq,
    "slice": block, "transpose": transpose, "concat-cols": concat_cols,
    "rollout": rollout,
}


def record_primitive(kind, *inputs, **kwargs):
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **kwargs)


def value(x):
    """Numeric value of a tensor or array."""
    return _val(x)


# optimizer ------------------------------------------------------------------

class AdamState:
    def __init__(self):
        self.step = 0
        self.m = {}
        self.v = {}

    def to_dict(self):
        return {"step": self.step,
                "m": {k: v.tolist() for k, v in self.m.items()},
                "v": {k: v.tolist() for k, v in self.v.items()}}

    @classmethod
    def from_dict(cls, d):
        s = cls()
        s.step = int(d["step"])
        s.m = {k: np.array(v, dtype=np.float64, ndmin=2) for k, v in d["m"].items()}
        s.v = {k: np.array(v, dtype=np.float64, ndmin=2) for k, v in d["v"].items()}
        return s


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns a new params dict; mutates ``state``."""
    state.step += 1
    t = state.step
    new = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new[name] = p
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        new[name] = p - lr * mhat / (np.sqrt(vhat) + eps)
    return new
