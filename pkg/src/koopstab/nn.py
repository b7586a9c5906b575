"""Network building blocks: the identity-augmented encoder, its learned left
inverse, and the bijective input prefeedback.

Parameters live outside the modules in flat ``name -> array`` mappings, so
the same ``apply`` works for numpy arrays and for tape tensors. Data is laid
out column-wise: a batch of states is an ``n x batch`` matrix.
"""
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

ACTIVATIONS = ("relu", "tanh", "linear")


def _activate(kind, h):
    if kind == "relu":
        return ad.relu(h)
    if kind == "tanh":
        return ad.tanh(h)
    if kind == "linear":
        return h
    raise ValueError(f"unknown activation {kind!r}")


@dataclass(frozen=True)
class Mlp:
    """Fully connected network; hidden layers use ``activation``, output is linear."""

    prefix: str
    widths: tuple
    activation: str = "relu"
    zero_output: bool = False

    def __post_init__(self):
        if len(self.widths) < 2 or any(int(w) < 0 for w in self.widths):
            raise ValueError(f"bad widths {self.widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @property
    def n_layers(self):
        return len(self.widths) - 1

    @property
    def activations(self):
        return [self.activation] * (self.n_layers - 1) + ["linear"]

    def names(self):
        out = []
        for i in range(self.n_layers):
            out += [f"{self.prefix}.W{i}", f"{self.prefix}.b{i}"]
        return out

    def n_params(self):
        w = self.widths
        return sum(w[i] * w[i + 1] + w[i + 1] for i in range(len(w) - 1))

    def init(self, rng):
        # uniform(+-1/sqrt(fan_in)) weights, zero biases
        p = {}
        for i in range(self.n_layers):
            fan_in, fan_out = self.widths[i], self.widths[i + 1]
            bound = 1.0 / np.sqrt(max(fan_in, 1))
            W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            if self.zero_output and i == self.n_layers - 1:
                W = np.zeros_like(W)
            p[f"{self.prefix}.W{i}"] = W
            p[f"{self.prefix}.b{i}"] = np.zeros((fan_out, 1))
        return p

    def apply(self, p, X):
        h = X
        for i, act in enumerate(self.activations):
            h = ad.add(ad.matmul(p[f"{self.prefix}.W{i}"], h), p[f"{self.prefix}.b{i}"])
            h = _activate(act, h)
        return h

    def jacobian(self, p, x):
        """Exact Jacobian at a single point (ReLU subgradient 0 at 0)."""
        h = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        J = np.eye(h.shape[0])
        for i, act in enumerate(self.activations):
            W = ad.value(p[f"{self.prefix}.W{i}"])
            pre = W @ h + ad.value(p[f"{self.prefix}.b{i}"])
            J = W @ J
            if act == "relu":
                d = (pre > 0.0).astype(float)
                h = np.maximum(pre, 0.0)
            elif act == "tanh":
                h = np.tanh(pre)
                d = 1.0 - h * h
            else:
                h = pre
                d = None
            if d is not None:
                J = d * J
        return J


@dataclass(frozen=True)
class EncoderDecoder:
    """Lifting ``x -> col(x, net(x))`` plus a learned map back to ``x``.

    ``decoder_kind="residual"`` decodes as ``z[:n] + net(z)``; ``"mlp"`` uses
    the network alone.
    """

    n: int
    lift_out: int = 20
    hidden: tuple = (50, 50)
    activation: str = "relu"
    decoder_kind: str = "residual"
    encoder: Mlp = field(init=False)
    decoder: Mlp = field(init=False)

    def __post_init__(self):
        if self.decoder_kind not in ("residual", "mlp"):
            raise ValueError(f"unknown decoder kind {self.decoder_kind!r}")
        hidden = tuple(int(h) for h in self.hidden)
        object.__setattr__(self, "hidden", hidden)
        object.__setattr__(self, "encoder", Mlp("enc", (self.n, *hidden, self.lift_out), self.activation))
        object.__setattr__(self, "decoder", Mlp("dec", (self.N, *hidden[::-1], self.n), self.activation))

    @property
    def N(self):
        return self.n + self.lift_out

    def names(self):
        enc = self.encoder.names() if self.lift_out else []
        return enc + self.decoder.names()

    def n_params(self):
        return (self.encoder.n_params() if self.lift_out else 0) + self.decoder.n_params()

    def init(self, rng):
        p = self.encoder.init(rng) if self.lift_out else {}
        p.update(self.decoder.init(rng))
        return p

    def encode(self, p, X):
        if ad.value(X).shape[0] != self.n:
            raise ValueError(f"encode expects {self.n} rows, got {ad.value(X).shape[0]}")
        if not self.lift_out:
            return X
        return ad.concat_rows([X, self.encoder.apply(p, X)])

    def decode(self, p, Z):
        if ad.value(Z).shape[0] != self.N:
            raise ValueError(f"decode expects {self.N} rows, got {ad.value(Z).shape[0]}")
        out = self.decoder.apply(p, Z)
        if self.decoder_kind == "residual":
            out = ad.add(ad.block(Z, slice(0, self.n)), out)
        return out

    def encoder_jacobian(self, p, x, mode="exact", step=1e-6):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if mode == "fd":
            cols = []
            for i in range(self.n):
                e = np.zeros(self.n)
                e[i] = step
                zp = ad.value(self.encode(p, (x + e).reshape(-1, 1)))
                zm = ad.value(self.encode(p, (x - e).reshape(-1, 1)))
                cols.append(((zp - zm) / (2 * step)).ravel())
            return np.column_stack(cols)
        if mode != "exact":
            raise ValueError(f"unknown jacobian mode {mode!r}")
        top = np.eye(self.n)
        if not self.lift_out:
            return top
        return np.vstack([top, self.encoder.jacobian(p, x)])


@dataclass(frozen=True)
class Prefeedback:
    """Input map ``u = alpha(x, v)``: identity or an affine coupling layer.

    The coupling form is ``u = v * exp(s(x)) + h(x)``; ``s`` and ``h`` start
    with zero output layers, so a fresh coupling layer is the identity.
    """

    kind: str
    n: int
    m: int
    hidden: tuple = (20, 20)
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in ("identity", "coupling"):
            raise ValueError(f"unknown prefeedback kind {self.kind!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def s_net(self):
        return Mlp("pf_s", (self.n, *self.hidden, self.m), self.activation, zero_output=True)

    @property
    def h_net(self):
        return Mlp("pf_h", (self.n, *self.hidden, self.m), self.activation, zero_output=True)

    def names(self):
        return [] if self.kind == "identity" else self.s_net.names() + self.h_net.names()

    def init(self, rng):
        if self.kind == "identity":
            return {}
        p = self.s_net.init(rng)
        p.update(self.h_net.init(rng))
        return p

    def forward(self, p, X, V):
        if self.kind == "identity":
            return V
        s = self.s_net.apply(p, X)
        h = self.h_net.apply(p, X)
        return ad.add(ad.hadamard(V, ad.exp(s)), h)

    def inverse(self, p, X, U):
        if self.kind == "identity":
            return U
        s = self.s_net.apply(p, X)
        h = self.h_net.apply(p, X)
        return ad.hadamard(ad.sub(U, h), ad.exp(ad.scale(s, -1.0)))
