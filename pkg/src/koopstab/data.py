"""Trajectory data: CSV ingestion, preprocessing and synthetic generators.

Trajectory CSV files have the header ``t,y1,...,yp[,u1,...,um]`` and one row
per sample. A dataset directory holds one CSV per trajectory plus a JSON
manifest with the timestep, scaling and generator metadata.
"""
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linalg
from . import stableparam

MANIFEST_FORMAT = "koopstab-dataset"
MANIFEST_VERSION = 1


class DataError(ValueError):
    """Malformed or inconsistent trajectory data."""


class ParseError(DataError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


# raw trajectories ----------------------------------------------------------

@dataclass
class RawTrajectory:
    t: np.ndarray
    y: np.ndarray
    u: np.ndarray = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim == 1:
            self.y = self.y.reshape(-1, 1)
        if self.y.shape[0] != self.t.shape[0]:
            raise DataError("timestamps and positions differ in length")
        if self.t.shape[0] < 4:
            raise DataError(f"need at least 4 samples, got {self.t.shape[0]}")
        if np.any(np.diff(self.t) <= 0):
            raise DataError("timestamps must be strictly increasing")
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.y))):
            raise DataError("non-finite values in trajectory")


def read_trajectory_csv(path):
    """Parse a trajectory CSV into ``(t, y, u)``; ``u`` is None without u columns."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(path, 1, "empty file") from None
        if not header or header[0] != "t":
            raise ParseError(path, 1, "first column must be 't'")
        ycols = [i for i, h in enumerate(header) if h.startswith("y")]
        ucols = [i for i, h in enumerate(header) if h.startswith("u")]
        if not ycols or len(ycols) + len(ucols) + 1 != len(header):
            raise ParseError(path, 1, f"unrecognised header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    if not rows:
        raise ParseError(path, 2, "no data rows")
    arr = np.array(rows)
    t = arr[:, 0]
    bad = np.nonzero(np.diff(t) <= 0)[0]
    if bad.size:
        raise ParseError(path, int(bad[0]) + 3, "timestamps not strictly increasing")
    return t, arr[:, ycols], (arr[:, ucols] if ucols else None)


def load_csv(path):
    t, y, u = read_trajectory_csv(path)
    return RawTrajectory(t, y, u)


def write_trajectory_csv(path, t, y, u=None):
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    header = ["t"] + [f"y{i + 1}" for i in range(y.shape[1])]
    cols = [np.asarray(t, dtype=np.float64).reshape(-1, 1), y]
    if u is not None:
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        header += [f"u{i + 1}" for i in range(u.shape[1])]
        cols.append(u)
    data = np.hstack(cols)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# preprocessing -------------------------------------------------------------

def _three_point_slopes(t, y):
    # derivative of the interpolating quadratic through neighbouring knots;
    # exact for quadratics on any grid
    n = t.shape[0]
    h = np.diff(t)
    d = np.diff(y, axis=0) / h[:, None]
    m = np.empty_like(y)
    if n == 2:
        m[:] = d[0]
        return m
    h0, h1 = h[:-1, None], h[1:, None]
    m[1:-1] = (h1 * d[:-1] + h0 * d[1:]) / (h0 + h1)
    m[0] = ((2 * h[0] + h[1]) * d[0] - h[0] * d[1]) / (h[0] + h[1])
    m[-1] = ((2 * h[-1] + h[-2]) * d[-1] - h[-1] * d[-2]) / (h[-1] + h[-2])
    return m


def resample_uniform(raw, dt):
    """Cubic Hermite (Catmull-Rom style) interpolation onto ``t0 + k dt``.

    Returns ``(t_grid, y_grid)``. Queries beyond the last knot are clamped.
    """
    if not dt > 0:
        raise DataError("dt must be positive")
    t, y = raw.t, raw.y
    span = t[-1] - t[0]
    if dt > span:
        raise DataError(f"dt={dt} exceeds the trajectory span {span}")
    count = int(math.floor(span / dt + 1e-9)) + 1
    grid = t[0] + dt * np.arange(count)
    grid = np.minimum(grid, t[-1])
    m = _three_point_slopes(t, y)
    idx = np.clip(np.searchsorted(t, grid, side="right") - 1, 0, t.shape[0] - 2)
    h = (t[idx + 1] - t[idx])[:, None]
    s = ((grid - t[idx])[:, None]) / h
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    out = h00 * y[idx] + h10 * h * m[idx] + h01 * y[idx + 1] + h11 * h * m[idx + 1]
    return grid, out


def build_states(positions, dt):
    """Stack positions and velocities into states ``[y, dy/dt]``.

    Central differences inside, second-order one-sided differences at the ends.
    """
    y = np.asarray(positions, dtype=np.float64)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    if y.shape[0] < 3:
        raise DataError("need at least 3 samples to differentiate")
    v = np.empty_like(y)
    v[1:-1] = (y[2:] - y[:-2]) / (2 * dt)
    v[0] = (-3 * y[0] + 4 * y[1] - y[2]) / (2 * dt)
    v[-1] = (3 * y[-1] - 4 * y[-2] + y[-3]) / (2 * dt)
    return np.hstack([y, v])


@dataclass
class Scaling:
    """Per-dimension affine map ``x_scaled = (x - offset) * gain``."""

    offset: np.ndarray
    gain: np.ndarray
    mode: str = "minmax"

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(-1)
        self.gain = np.asarray(self.gain, dtype=np.float64).reshape(-1)

    def apply(self, x):
        return (np.asarray(x) - self.offset) * self.gain

    def invert(self, x):
        return np.asarray(x) / self.gain + self.offset

    def to_dict(self):
        return {"mode": self.mode, "offset": self.offset.tolist(), "gain": self.gain.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["offset"], d["gain"], d.get("mode", "minmax"))

    @classmethod
    def identity(cls, n):
        return cls(np.zeros(n), np.ones(n), "none")


def fit_scaling(data, mode="minmax"):
    """Scaling onto ``[-1, 1]`` from a dataset or a list of ``(T, n)`` arrays.

    ``"minmax"`` centres each dimension on its midrange. ``"maxabs"`` keeps
    the origin fixed and divides by the largest magnitude, which matters for
    models whose equilibrium sits at the origin.
    """
    arrays = [tr.states for tr in data.trajectories] if isinstance(data, TrajectoryDataset) else list(data)
    if not arrays:
        raise DataError("cannot fit scaling on empty data")
    stacked = np.vstack([np.atleast_2d(a) for a in arrays])
    lo, hi = stacked.min(axis=0), stacked.max(axis=0)
    if mode == "minmax":
        offset = 0.5 * (hi + lo)
        half = 0.5 * (hi - lo)
        gain = np.where(half > 0, 1.0 / np.where(half > 0, half, 1.0), 1.0)
    elif mode == "maxabs":
        offset = np.zeros_like(lo)
        mag = np.maximum(np.abs(lo), np.abs(hi))
        gain = np.where(mag > 0, 1.0 / np.where(mag > 0, mag, 1.0), 1.0)
    elif mode == "none":
        return Scaling.identity(stacked.shape[1])
    else:
        raise ValueError(f"unknown scaling mode {mode!r}")
    return Scaling(offset, gain, mode)


# datasets ------------------------------------------------------------------

@dataclass
class Trajectory:
    states: np.ndarray
    inputs: np.ndarray = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if self.inputs is not None:
            self.inputs = np.asarray(self.inputs, dtype=np.float64)
            if self.inputs.ndim == 1:
                self.inputs = self.inputs.reshape(-1, 1)
            if self.inputs.shape[0] != self.states.shape[0]:
                raise DataError("inputs and states differ in length")

    @property
    def T(self):
        return self.states.shape[0]


@dataclass
class TrajectoryDataset:
    trajectories: list
    dt: float = 0.02
    scaling: Scaling = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.trajectories:
            raise DataError("dataset has no trajectories")
        ns = {tr.states.shape[1] for tr in self.trajectories}
        ms = {None if tr.inputs is None else tr.inputs.shape[1] for tr in self.trajectories}
        if len(ns) != 1 or len(ms) != 1:
            raise DataError("trajectories disagree on state or input dimension")

    @property
    def n(self):
        return self.trajectories[0].states.shape[1]

    @property
    def m(self):
        tr = self.trajectories[0]
        return 0 if tr.inputs is None else tr.inputs.shape[1]

    @property
    def has_inputs(self):
        return self.trajectories[0].inputs is not None

    def __len__(self):
        return len(self.trajectories)

    def subset(self, indices):
        return TrajectoryDataset([self.trajectories[i] for i in indices], self.dt,
                                 self.scaling, dict(self.meta))

    def scaled(self, scaling):
        """States mapped through ``scaling`` (inputs are left alone)."""
        trs = [Trajectory(scaling.apply(tr.states), tr.inputs) for tr in self.trajectories]
        return TrajectoryDataset(trs, self.dt, scaling, dict(self.meta))

    def batches(self):
        """Group trajectories by length: list of ``(X, U)`` with ``X`` of shape (k, T, n)."""
        groups = {}
        for tr in self.trajectories:
            groups.setdefault(tr.T, []).append(tr)
        out = []
        for T in sorted(groups):
            trs = groups[T]
            X = np.stack([tr.states for tr in trs])
            U = np.stack([tr.inputs for tr in trs]) if trs[0].inputs is not None else None
            out.append((X, U))
        return out

    def save(self, directory, stem="traj"):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for i, tr in enumerate(self.trajectories):
            name = f"{stem}_{i:03d}.csv"
            t = self.dt * np.arange(tr.T)
            write_trajectory_csv(directory / name, t, tr.states, tr.inputs)
            files.append(name)
        manifest = {
            "format": MANIFEST_FORMAT, "version": MANIFEST_VERSION,
            "dt": self.dt, "n": self.n, "m": self.m, "files": files,
            "scaling": self.scaling.to_dict() if self.scaling is not None else None,
            "meta": self.meta,
        }
        path = directory / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path):
        """Load from a manifest file or a directory containing ``manifest.json``."""
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        try:
            manifest = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from None
        if manifest.get("format") != MANIFEST_FORMAT:
            raise DataError(f"{path} is not a dataset manifest")
        trs = []
        dt = float(manifest["dt"])
        for name in manifest["files"]:
            t, y, u = read_trajectory_csv(path.parent / name)
            if t.shape[0] > 1 and np.max(np.abs(np.diff(t) - dt)) > 1e-9 * max(1.0, t[-1]):
                raise DataError(f"{name}: sample spacing differs from dt={dt}")
            trs.append(Trajectory(y, u))
        scaling = Scaling.from_dict(manifest["scaling"]) if manifest.get("scaling") else None
        return cls(trs, dt, scaling, manifest.get("meta", {}))


def dataset_from_raw(raws, dt=0.02, with_velocity=True):
    """Resample raw recordings and (optionally) append velocities."""
    trs = []
    for raw in raws:
        _, y = resample_uniform(raw, dt)
        trs.append(Trajectory(build_states(y, dt) if with_velocity else y))
    return TrajectoryDataset(trs, dt, meta={"source": "raw", "with_velocity": with_velocity})


# synthetic systems ---------------------------------------------------------

def _rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass
class Contracting2D:
    """``x+ = rate Rot(theta) x + gamma W2 tanh(W1 x)``.

    With the constant metric ``I`` the contraction rate is certified by
    ``kappa = rate + gamma ||W2|| ||W1|| < 1`` and ``beta = 1 - kappa^2``.
    """

    rate: float
    theta: float
    gamma: float
    W1: np.ndarray
    W2: np.ndarray
    kind: str = "contracting-2d"

    @property
    def n(self):
        return 2

    def step(self, X):
        X = np.asarray(X, dtype=np.float64)
        return self.rate * _rotation(self.theta) @ X + self.gamma * self.W2 @ np.tanh(self.W1 @ X)

    def jacobian(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        d = 1.0 - np.tanh(self.W1 @ x) ** 2
        return self.rate * _rotation(self.theta) + self.gamma * self.W2 @ (d[:, None] * self.W1)

    @property
    def kappa(self):
        return self.rate + self.gamma * linalg.norm2(self.W1) * linalg.norm2(self.W2)

    @property
    def metric(self):
        return np.eye(2)

    @property
    def beta(self):
        return 1.0 - self.kappa ** 2

    def certify(self, samples):
        """Check the contraction inequality with metric ``I`` at sample columns."""
        worst = -np.inf
        for x in np.asarray(samples).T:
            J = self.jacobian(x)
            worst = max(worst, linalg.max_eig_sym(J.T @ J - (1.0 - self.beta) * np.eye(2)))
        return {"metric": "identity", "beta": self.beta, "kappa": self.kappa,
                "worst_margin": float(worst), "passed": bool(self.kappa < 1.0 and worst <= 1e-12)}

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate, "theta": self.theta, "gamma": self.gamma,
                "W1": self.W1.tolist(), "W2": self.W2.tolist()}


def gen_contracting2d(seed=0, n_traj=7, T=150, dt=0.02, rate=0.97, theta=0.1,
                      gamma=0.02, start=(0.8, 0.6), spread=0.1):
    """Spiralling, contracting 2-D demonstrations that start near ``start``."""
    rng = np.random.default_rng(seed)
    W1 = np.linalg.qr(rng.standard_normal((2, 2)))[0] * 1.5
    W2 = _rotation(rng.uniform(0, 2 * math.pi))
    system = Contracting2D(rate, theta, gamma, W1, W2)
    while system.kappa >= 0.995:
        system.gamma *= 0.5
    X = np.asarray(start, dtype=np.float64)[:, None] + spread * rng.standard_normal((2, n_traj))
    traj = np.empty((n_traj, T, 2))
    for t in range(T):
        traj[:, t, :] = X.T
        X = system.step(X)
    cert = system.certify(traj.reshape(-1, 2).T)
    if not cert["passed"]:
        raise DataError("generated system failed its contraction certificate")
    ds = TrajectoryDataset([Trajectory(traj[i]) for i in range(n_traj)], dt,
                           meta={"generator": {"kind": "contracting2d", "seed": seed, "n_traj": n_traj,
                                               "T": T, "system": system.to_dict()},
                                 "certification": cert})
    return ds, system


@dataclass
class LiftedLTI:
    """Linear state dynamics ``x+ = A1 x`` with an exactly invariant ReLU lifting.

    For each left eigenvector ``w_i`` of ``A1`` (eigenvalue ``lam_i > 0``),
    ``g(w_i^T x) = a relu(w_i^T x) + b relu(-w_i^T x)`` obeys
    ``g(w_i^T A1 x) = lam_i g(w_i^T x)``, so ``phi = col(x, g_1, ..., g_n)``
    is mapped linearly by ``A_true = blockdiag(A1, lam_i I)``.
    """

    A1: np.ndarray
    W: np.ndarray
    lam: np.ndarray
    a: np.ndarray
    b: np.ndarray
    kind: str = "lifted-lti"

    @property
    def n(self):
        return self.A1.shape[0]

    @property
    def lift(self):
        return self.a.shape[1] * self.n

    def step(self, X):
        return self.A1 @ np.asarray(X, dtype=np.float64)

    def jacobian(self, x):
        return self.A1.copy()

    def embed(self, X):
        X = np.asarray(X, dtype=np.float64)
        s = self.W @ X
        parts = [X]
        for i in range(self.n):
            parts.append(np.outer(self.a[i], np.maximum(s[i], 0)) + np.outer(self.b[i], np.maximum(-s[i], 0)))
        return np.vstack(parts)

    def embed_jacobian(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        s = self.W @ x
        rows = [np.eye(self.n)]
        for i in range(self.n):
            coef = self.a[i] * (s[i] > 0) - self.b[i] * (s[i] < 0)
            rows.append(np.outer(coef, self.W[i]))
        return np.vstack(rows)

    @property
    def A_true(self):
        k = self.a.shape[1]
        N = self.n + self.lift
        A = np.zeros((N, N))
        A[:self.n, :self.n] = self.A1
        for i in range(self.n):
            s = self.n + i * k
            A[s:s + k, s:s + k] = self.lam[i] * np.eye(k)
        return A

    def to_dict(self):
        return {"kind": self.kind, "A1": self.A1.tolist(), "W": self.W.tolist(),
                "lam": self.lam.tolist(), "a": self.a.tolist(), "b": self.b.tolist()}


def gen_lifted_lti(seed=0, n=2, k=2, T=50, n_traj=5, dt=0.02, lam_range=(0.6, 0.95), noise=0.0,
                   ic_center=None, ic_spread=1.0):
    """Noiseless (or noisy) data from a model with an exactly invariant lifting.

    ``k`` is the number of lifted coordinates per eigen-direction, so the true
    lifted dimension is ``n + n k``. Initial states are uniform in
    ``ic_center +- ic_spread`` (the centre defaults to the origin).
    """
    rng = np.random.default_rng(seed)
    while True:
        V = rng.standard_normal((n, n))
        if np.linalg.cond(V) < 10:
            break
    lam = rng.uniform(*lam_range, size=n)
    W = np.linalg.inv(V)
    A1 = V @ np.diag(lam) @ W
    system = LiftedLTI(A1, W, lam, rng.standard_normal((n, k)), rng.standard_normal((n, k)))
    center = np.zeros((n, 1)) if ic_center is None else np.asarray(ic_center, dtype=np.float64).reshape(n, 1)
    X = center + ic_spread * rng.uniform(-1, 1, size=(n, n_traj))
    traj = np.empty((n_traj, T, n))
    for t in range(T):
        traj[:, t, :] = X.T
        X = system.step(X)
    if noise:
        traj = traj + noise * rng.standard_normal(traj.shape)
    ds = TrajectoryDataset([Trajectory(traj[i]) for i in range(n_traj)], dt,
                           meta={"generator": {"kind": "lifted-lti", "seed": seed, "n": n, "k": k,
                                               "T": T, "n_traj": n_traj, "noise": noise,
                                               "ic_center": center.ravel().tolist(), "ic_spread": ic_spread,
                                               "system": system.to_dict()},
                                 "certification": {"spectral_radius": float(lam.max()),
                                                   "passed": bool(lam.max() < 1)}})
    return ds, system


@dataclass
class LinearPlant:
    """``x+ = A x + B u`` with an expert gain ``u = K x``."""

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    kind: str = "graph-laplacian"

    @property
    def n(self):
        return self.A.shape[0]

    def step(self, X, U):
        return self.A @ X + self.B @ U

    def to_dict(self):
        return {"kind": self.kind, "A": self.A.tolist(), "B": self.B.tolist(), "K": self.K.tolist()}


def _random_connected_graph(rng, n, extra=0.3):
    W = np.zeros((n, n))
    order = rng.permutation(n)
    for i in range(1, n):
        j = order[rng.integers(0, i)]
        W[order[i], j] = W[j, order[i]] = 1.0
    for i in range(n):
        for j in range(i + 1, n):
            if W[i, j] == 0 and rng.random() < extra:
                W[i, j] = W[j, i] = 1.0
    return np.diag(W.sum(axis=1)) - W


def lqr_gain(A, B, Q=None, R=None, tol=1e-12, max_iter=100000):
    """Infinite-horizon discrete LQR gain by iterating the Riccati recursion."""
    n, m = B.shape
    Q = np.eye(n) if Q is None else Q
    R = np.eye(m) if R is None else R
    P = Q.copy()
    for _ in range(max_iter):
        G = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        Pn = Q + A.T @ P @ A - A.T @ P @ B @ G
        if np.abs(Pn - P).max() <= tol * max(1.0, np.abs(Pn).max()):
            P = Pn
            break
        P = Pn
    else:
        raise linalg.ConvergenceError("Riccati iteration did not converge")
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def gen_graph_laplacian(seed=0, n=4, T=50, n_traj=10, dt=0.05, path=False, ic_scale=1.0):
    """Unstable ``A = I + dt L_graph``, ``B = I``, expert LQR gain, logged ``(x, u)``."""
    rng = np.random.default_rng(seed)
    if path:
        Wadj = np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1)
        Lg = np.diag(Wadj.sum(axis=1)) - Wadj
    else:
        Lg = _random_connected_graph(rng, n)
    A = np.eye(n) + dt * Lg
    B = np.eye(n)
    K = lqr_gain(A, B)
    plant = LinearPlant(A, B, K)
    X = ic_scale * rng.uniform(-1, 1, size=(n, n_traj))
    xs = np.empty((n_traj, T, n))
    us = np.empty((n_traj, T, n))
    for t in range(T):
        U = K @ X
        xs[:, t, :] = X.T
        us[:, t, :] = U.T
        X = plant.step(X, U)
    rho_open = linalg.spectral_radius(A)
    rho_cl = linalg.spectral_radius(A + B @ K)
    ds = TrajectoryDataset([Trajectory(xs[i], us[i]) for i in range(n_traj)], dt,
                           meta={"generator": {"kind": "graph-laplacian", "seed": seed, "n": n, "T": T,
                                               "n_traj": n_traj, "system": plant.to_dict()},
                                 "certification": {"open_loop_rho": rho_open, "expert_closed_loop_rho": rho_cl,
                                                   "passed": bool(rho_open > 1 and rho_cl < 1)}})
    return ds, plant


def gen_stabilizable_lti(seed=0, n=3, m=1, T=40, n_traj=5, dt=0.02, scale=0.5):
    """Data from a stabilizable pair realized from random parameters (no lifting).

    ``S`` is chosen so the recovered gain equals ``B^T M22 A_cl / 2``; the
    logged inputs are that gain applied to the state.
    """
    rng = np.random.default_rng(seed)
    base = stableparam.StabilizableParams.random(n, m, rng, scale=scale)
    A_cl, M22 = stableparam.stable_core(base.L, base.R, base.eps)
    K_P = stableparam.remark_gain_core(base.B, M22, A_cl)
    S = base.B.T @ A_cl - base.B.T @ base.B @ K_P
    params = stableparam.StabilizableParams(base.L, base.R, S, base.B, base.eps)
    real = stableparam.realize_stabilizable(params)
    X = rng.uniform(-1, 1, size=(n, n_traj))
    xs = np.empty((n_traj, T, n))
    us = np.empty((n_traj, T, m))
    for t in range(T):
        U = real.K_P @ X
        xs[:, t, :] = X.T
        us[:, t, :] = U.T
        X = real.A @ X + real.B @ U
    plant = LinearPlant(real.A, real.B, real.K_P, kind="stabilizable-lti")
    ds = TrajectoryDataset([Trajectory(xs[i], us[i]) for i in range(n_traj)], dt,
                           meta={"generator": {"kind": "stabilizable-lti", "seed": seed, "n": n, "m": m,
                                               "T": T, "n_traj": n_traj, "system": plant.to_dict()}})
    return ds, plant, params


def system_from_dict(d):
    """Rebuild a synthetic system from the ``to_dict`` form stored in manifests."""
    kind = d.get("kind")
    arr = np.asarray
    if kind == "contracting-2d":
        return Contracting2D(d["rate"], d["theta"], d["gamma"], arr(d["W1"]), arr(d["W2"]))
    if kind == "lifted-lti":
        return LiftedLTI(arr(d["A1"]), arr(d["W"]), arr(d["lam"]), arr(d["a"]), arr(d["b"]))
    if kind in ("graph-laplacian", "stabilizable-lti"):
        return LinearPlant(arr(d["A"]), arr(d["B"]), arr(d["K"]), kind)
    raise DataError(f"unknown system kind {kind!r}")


def dataset_system(dataset):
    """The generating system recorded in a dataset's metadata, or None."""
    gen = dataset.meta.get("generator") or {}
    return system_from_dict(gen["system"]) if "system" in gen else None
