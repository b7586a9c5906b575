"""Lifted linear models: parameters, realization, rollouts and persistence.

A model couples an :class:`~koopstab.nn.EncoderDecoder` with a stable (or
stabilizable) lifted matrix built from free parameters. All parameters sit in
one flat dict, so training code can swap in tape tensors for the arrays.
Rollouts here are numeric and work in the model's (scaled) coordinates;
:meth:`simulate` wraps them for raw coordinates.
"""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import linalg
from . import nn
from . import stableparam as sp
from .data import Scaling

MODEL_FORMAT = "koopstab-model"
MODEL_VERSION = 1
DIVERGENCE_LIMIT = 1e6


class ModelFormatError(ValueError):
    pass


def _col(x, n):
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    if x.shape[0] != n:
        raise ValueError(f"expected a state of dimension {n}, got {x.shape[0]}")
    return x


class StableKoopmanModel:
    """Autonomous model ``z+ = A z`` with ``A`` Schur stable by construction."""

    kind = "stable"
    structural = ("L", "R")

    def __init__(self, encdec, params, eps=sp.DEFAULT_EPS, scaling=None):
        self.encdec = encdec
        self.params = {k: np.array(v, dtype=np.float64, ndmin=2) for k, v in params.items()}
        self.eps = float(eps)
        self.scaling = scaling
        missing = [k for k in self.names() if k not in self.params]
        if missing:
            raise ValueError(f"missing parameters: {missing}")
        N = encdec.N
        if self.params["L"].shape != (2 * N, 2 * N) or self.params["R"].shape != (N, N):
            raise ValueError("L/R shapes do not match the lifted dimension")
        self._A = None

    @classmethod
    def init(cls, n, rng, lift_dim=20, hidden=(50, 50), activation="relu",
             decoder_kind="residual", eps=sp.DEFAULT_EPS, init_scale=None, scaling=None):
        encdec = nn.EncoderDecoder(n, lift_dim, tuple(hidden), activation, decoder_kind)
        N = encdec.N
        s = init_scale if init_scale is not None else 1.0 / np.sqrt(2 * N)
        params = {"L": rng.uniform(-s, s, size=(2 * N, 2 * N)) * np.sqrt(3.0),
                  "R": rng.uniform(-s, s, size=(N, N)) * np.sqrt(3.0)}
        params.update(encdec.init(rng))
        return cls(encdec, params, eps, scaling)

    @property
    def n(self):
        return self.encdec.n

    @property
    def N(self):
        return self.encdec.N

    def names(self):
        return list(self.structural) + self.encdec.names()

    def n_params(self):
        return int(sum(np.asarray(self.params[k]).size for k in self.names()))

    def with_params(self, params):
        return type(self)(self.encdec, params, self.eps, self.scaling)

    def stable_params(self):
        return sp.StableParams(self.params["L"], self.params["R"], self.eps)

    def system(self, p):
        """Lifted matrix from ``p`` (arrays or tape tensors)."""
        A, _ = sp.stable_core(p["L"], p["R"], self.eps)
        return A

    @property
    def A(self):
        if self._A is None:
            self._A = self.system(self.params)
        return self._A

    def encode(self, X, p=None):
        return self.encdec.encode(self.params if p is None else p, X)

    def decode(self, Z, p=None):
        return self.encdec.decode(self.params if p is None else p, Z)

    def certificate(self):
        return sp.certify(self.A)

    def one_step(self, x):
        """``decode(A encode(x))`` for a single state."""
        z = self.encode(_col(x, self.n))
        return self.decode(self.A @ z).ravel()

    def simulate(self, x0, T):
        """Autonomous rollout from a raw-coordinate state; returns ``(T, n)``."""
        x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
        if self.scaling is not None:
            x0 = self.scaling.apply(x0)
        r = rollout_autonomous(self, x0, T)
        return self.scaling.invert(r.x) if self.scaling is not None else r.x


class StabilizableKoopmanModel(StableKoopmanModel):
    """Controlled model ``z+ = A z + B v`` with ``(A, B)`` stabilizable by construction.

    Physical inputs relate to ``v`` through the prefeedback ``u = alpha(x, v)``.
    """

    kind = "stabilizable"
    structural = ("L", "R", "S", "B")

    def __init__(self, encdec, prefeedback, params, eps=sp.DEFAULT_EPS, scaling=None):
        self.prefeedback = prefeedback
        super().__init__(encdec, params, eps, scaling)
        m = self.params["B"].shape[1]
        if self.params["B"].shape != (self.N, m) or self.params["S"].shape != (m, self.N):
            raise ValueError("S/B shapes do not match")
        if prefeedback.m != m or prefeedback.n != self.n:
            raise ValueError("prefeedback dimensions do not match the model")
        self._real = None

    @classmethod
    def init(cls, n, m, rng, lift_dim=20, hidden=(50, 50), activation="relu",
             decoder_kind="residual", eps=sp.DEFAULT_EPS, init_scale=None, scaling=None,
             prefeedback="identity", pf_hidden=(20, 20)):
        encdec = nn.EncoderDecoder(n, lift_dim, tuple(hidden), activation, decoder_kind)
        pf = nn.Prefeedback(prefeedback, n, m, tuple(pf_hidden))
        N = encdec.N
        s = init_scale if init_scale is not None else 1.0 / np.sqrt(2 * N)
        B = np.zeros((N, m))
        B[:min(n, N), :] = np.eye(min(n, N), m)
        B += 0.1 * rng.standard_normal((N, m))
        params = {"L": rng.uniform(-s, s, size=(2 * N, 2 * N)) * np.sqrt(3.0),
                  "R": rng.uniform(-s, s, size=(N, N)) * np.sqrt(3.0),
                  "S": 0.1 * rng.standard_normal((m, N)), "B": B}
        params.update(encdec.init(rng))
        params.update(pf.init(rng))
        return cls(encdec, pf, params, eps, scaling)

    @property
    def m(self):
        return self.params["B"].shape[1]

    def names(self):
        return list(self.structural) + self.encdec.names() + self.prefeedback.names()

    def with_params(self, params):
        return type(self)(self.encdec, self.prefeedback, params, self.eps, self.scaling)

    def stabilizable_params(self):
        p = self.params
        return sp.StabilizableParams(p["L"], p["R"], p["S"], p["B"], self.eps)

    def system(self, p):
        """``(A, B, A_cl, K, K_P)`` from ``p`` (arrays or tape tensors)."""
        A, A_cl, K, K_P = sp.stabilizable_core(p["L"], p["R"], p["S"], p["B"], self.eps)
        return A, p["B"], A_cl, K, K_P

    @property
    def realization(self):
        if self._real is None:
            self._real = sp.realize_stabilizable(self.stabilizable_params())
        return self._real

    @property
    def A(self):
        return self.realization.A

    def gain(self, choice="recovered"):
        if isinstance(choice, str):
            if choice == "recovered":
                return self.realization.K
            if choice == "remark":
                return self.realization.K_P
            raise ValueError(f"unknown gain choice {choice!r}")
        K = linalg.as_matrix(choice)
        if K.shape != (self.m, self.N):
            raise ValueError(f"user gain must be {self.m}x{self.N}, got {K.shape}")
        return K

    def certificate(self, gain="recovered"):
        r = self.realization
        return sp.certify(r.A, r.B, self.gain(gain))

    def input_map(self, X, V, p=None):
        return self.prefeedback.forward(self.params if p is None else p, X, V)

    def input_unmap(self, X, U, p=None):
        return self.prefeedback.inverse(self.params if p is None else p, X, U)

    def policy(self, x, gain="recovered"):
        """Raw-coordinate state to raw input ``u = alpha(x, K phi(x))``."""
        xs = _col(x, self.n)
        if self.scaling is not None:
            xs = self.scaling.apply(xs.ravel()).reshape(-1, 1)
        v = self.gain(gain) @ self.encode(xs)
        return self.input_map(xs, v).ravel()


# rollouts --------------------------------------------------------------------

@dataclass
class Rollout:
    x: np.ndarray
    z: np.ndarray = None
    v: np.ndarray = None
    u: np.ndarray = None
    mode: str = "autonomous"
    diverged: bool = False

    @property
    def T(self):
        return self.x.shape[0]

    def to_csv(self, path, dt=1.0):
        cols = [dt * np.arange(self.T)[:, None], self.x]
        header = ["t"] + [f"x{i + 1}" for i in range(self.x.shape[1])]
        if self.z is not None:
            cols.append(np.linalg.norm(self.z, axis=1)[:, None])
            header.append("z_norm")
        for name, arr in (("v", self.v), ("u", self.u)):
            if arr is not None:
                pad = np.full((self.T, arr.shape[1]), np.nan)
                pad[:arr.shape[0]] = arr
                cols.append(pad)
                header += [f"{name}{i + 1}" for i in range(arr.shape[1])]
        data = np.hstack(cols)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in data:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        return Path(path)


def rollout_autonomous(model, x0, T):
    """``z_t = A^t encode(x0)`` and its decoding, ``t = 0..T-1``."""
    z = model.encode(_col(x0, model.n))
    Z = np.empty((T, model.N))
    for t in range(T):
        Z[t] = z.ravel()
        z = model.A @ z
    X = model.decode(Z.T).T
    return Rollout(X, Z)


def rollout_openloop(model, x0, inputs, input_space="v"):
    """Drive the lifted model with a given input sequence of shape (T-1, m).

    ``input_space="u"`` treats the sequence as physical inputs and maps each
    through the inverse prefeedback at the current decoded state.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if inputs.shape[1] != model.m:
        raise ValueError(f"inputs need {model.m} columns")
    T = inputs.shape[0] + 1
    r = model.realization
    z = model.encode(_col(x0, model.n))
    Z = np.empty((T, model.N))
    V = np.empty((T - 1, model.m))
    U = np.empty((T - 1, model.m))
    for t in range(T):
        Z[t] = z.ravel()
        if t == T - 1:
            break
        xhat = model.decode(z)
        w = inputs[t].reshape(-1, 1)
        if input_space == "u":
            v, u = model.input_unmap(xhat, w), w
        elif input_space == "v":
            v, u = w, model.input_map(xhat, w)
        else:
            raise ValueError(f"unknown input space {input_space!r}")
        V[t], U[t] = v.ravel(), u.ravel()
        z = r.A @ z + r.B @ v
    return Rollout(model.decode(Z.T).T, Z, V, U, mode="openloop")


def _plant_step(plant, x, u):
    if hasattr(plant, "step"):
        return np.asarray(plant.step(x, u), dtype=np.float64).reshape(-1, 1)
    return np.asarray(plant(x, u), dtype=np.float64).reshape(-1, 1)


def rollout_closedloop(model, x0, T, gain="recovered", mode="lifted", plant=None):
    """Closed-loop rollout under ``v = K z``.

    ``mode="lifted"`` iterates ``z+ = (A + B K) z`` and decodes. ``"state"``
    re-encodes the decoded prediction each step. ``"plant"`` applies the
    learned policy to ``plant`` (an object with ``step(x, u)`` or a callable),
    in the model's coordinates. The state modes stop early and flag
    ``diverged`` once the state norm passes ``DIVERGENCE_LIMIT``.
    """
    K = model.gain(gain)
    r = model.realization
    Acl = r.A + r.B @ K
    x = _col(x0, model.n)
    if mode == "lifted":
        z = model.encode(x)
        Z = np.empty((T, model.N))
        for t in range(T):
            Z[t] = z.ravel()
            z = Acl @ z
        V = (K @ Z[:-1].T).T
        X = model.decode(Z.T).T
        U = model.input_map(X[:-1].T, V.T).T
        return Rollout(X, Z, V, U, mode=mode)
    if mode not in ("state", "plant"):
        raise ValueError(f"unknown closed-loop mode {mode!r}")
    if mode == "plant" and plant is None:
        raise ValueError("plant mode needs a plant")
    xs, zs, vs, us = [], [], [], []
    diverged = False
    for t in range(T):
        xs.append(x.ravel())
        z = model.encode(x)
        zs.append(z.ravel())
        if t == T - 1:
            break
        v = K @ z
        u = model.input_map(x, v)
        vs.append(v.ravel())
        us.append(u.ravel())
        if mode == "state":
            x = model.decode(r.A @ z + r.B @ v)
        else:
            x = _plant_step(plant, x, u)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_LIMIT:
            diverged = True
            break
    m = model.m
    return Rollout(np.array(xs), np.array(zs),
                   np.array(vs).reshape(-1, m), np.array(us).reshape(-1, m),
                   mode=mode, diverged=diverged)


# persistence ----------------------------------------------------------------

def model_to_dict(model):
    e = model.encdec
    d = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "kind": model.kind,
         "n": e.n, "eps": model.eps,
         "encoder": {"lift_out": e.lift_out, "hidden": list(e.hidden),
                     "activation": e.activation, "decoder_kind": e.decoder_kind},
         "scaling": model.scaling.to_dict() if model.scaling is not None else None,
         "params": {k: np.asarray(v).tolist() for k, v in model.params.items()}}
    if model.kind == "stabilizable":
        pf = model.prefeedback
        d["m"] = model.m
        d["prefeedback"] = {"kind": pf.kind, "hidden": list(pf.hidden), "activation": pf.activation}
    return d


def model_from_dict(d):
    if d.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a model file")
    if d.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {d.get('version')!r}")
    enc = d["encoder"]
    encdec = nn.EncoderDecoder(int(d["n"]), int(enc["lift_out"]), tuple(enc["hidden"]),
                               enc["activation"], enc["decoder_kind"])
    scaling = Scaling.from_dict(d["scaling"]) if d.get("scaling") else None
    params = {k: np.array(v, dtype=np.float64, ndmin=2) for k, v in d["params"].items()}
    if d["kind"] == "stable":
        return StableKoopmanModel(encdec, params, d["eps"], scaling)
    if d["kind"] == "stabilizable":
        pf = d["prefeedback"]
        prefeedback = nn.Prefeedback(pf["kind"], int(d["n"]), int(d["m"]), tuple(pf["hidden"]),
                                     pf["activation"])
        return StabilizableKoopmanModel(encdec, prefeedback, params, d["eps"], scaling)
    raise ModelFormatError(f"unknown model kind {d['kind']!r}")


def save_model(model, path):
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(model)), encoding="utf-8")
    return path


def load_model(path):
    """Read a model file; a training output directory resolves to its model.json."""
    path = Path(path)
    if path.is_dir():
        path = path / "model.json"
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model {path}: {exc}") from None
    return model_from_dict(d)


def value_params(p):
    """Numeric copy of a params dict that may hold tape tensors."""
    return {k: np.array(ad.value(v)) for k, v in p.items()}
