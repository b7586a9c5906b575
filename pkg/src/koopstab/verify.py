"""Numerical checks of the guarantees on concrete models.

* :func:`check_contraction` evaluates the metric inequality
  ``Jf^T M(f(x)) Jf - (1 - beta) M(x) <= 0`` at sample points, with
  ``M(x) = Jphi^T P Jphi``.
* :func:`check_d1_d2` measures the invariance residual ``phi(f(x)) - A phi(x)``
  and the rank of the embedding Jacobian.
* :func:`check_error_bound` compares lifted trajectories of the true system
  with pure ``A`` rollouts against ``C eps_max / (1 - rho)``.
* :func:`check_closedloop` certifies ``A + B K`` and, given a plant, reports
  what the learned policy does to it.
* :func:`robustness_rollouts` simulates from perturbed initial conditions and
  tabulates pairwise distances.

Reports serialize to JSON and CSV; rollouts can be drawn as SVG.
"""
import dataclasses
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import koopman
from . import linalg
from . import stableparam as sp

FD_STEP = 1e-6


def numeric_jacobian(f, x, step=FD_STEP):
    """Central-difference Jacobian of ``f`` (column in, column out) at ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        fp = np.asarray(f((x + e).reshape(-1, 1)), dtype=np.float64).ravel()
        fm = np.asarray(f((x - e).reshape(-1, 1)), dtype=np.float64).ravel()
        cols.append((fp - fm) / (2 * step))
    return np.column_stack(cols)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


class _Report:
    def to_dict(self):
        return _jsonable(dataclasses.asdict(self))

    def save_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")
        return Path(path)


# contraction ---------------------------------------------------------------------

@dataclass
class ContractionCheckReport(_Report):
    points: np.ndarray
    margins: np.ndarray
    beta: float
    metric: str
    tol: float
    diagnostic: bool = False

    @property
    def passed_points(self):
        return self.margins <= self.tol

    @property
    def pass_fraction(self):
        return float(np.mean(self.passed_points)) if self.margins.size else 1.0

    @property
    def passed(self):
        return bool(np.all(self.passed_points))

    @property
    def worst_margin(self):
        return float(np.max(self.margins)) if self.margins.size else -np.inf

    def summary(self):
        return {"points": int(self.margins.size), "beta": self.beta, "metric": self.metric,
                "worst_margin": self.worst_margin, "pass_fraction": self.pass_fraction,
                "passed": self.passed, "diagnostic": self.diagnostic}

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            n = self.points.shape[1] if self.points.ndim == 2 else 0
            fh.write(",".join([f"x{i + 1}" for i in range(n)] + ["margin", "passed"]) + "\n")
            for x, mgn, ok in zip(self.points, self.margins, self.passed_points):
                fh.write(",".join(repr(float(v)) for v in x) + f",{float(mgn)!r},{int(ok)}\n")


def check_contraction(f, f_jacobian, embed_jacobian, samples, A=None, metric=None, beta=None,
                      rho=1.0, tol=1e-10, diagnostic=False):
    """Contraction inequality with metric ``M(x) = Jphi(x)^T P Jphi(x)``.

    ``P`` is ``metric`` if given, else the solution of ``P - A^T P A = I``.
    ``beta`` defaults to ``rho / lambda_max(P)``; with ``rho = 1`` linear
    systems sit exactly on the boundary, so points pass when the margin is
    at most ``tol`` (relative to ``lambda_max(P)``). ``f_jacobian`` or
    ``embed_jacobian`` may be None, in which case central differences of
    ``f`` (or the identity embedding) are used.
    """
    if metric is None:
        if A is None:
            raise ValueError("need A or an explicit metric")
        P = linalg.solve_discrete_lyapunov(A, np.eye(linalg.as_matrix(A).shape[0]))
        kind = "lyapunov(A, I)"
    else:
        P = linalg.as_matrix(metric)
        kind = "explicit"
    lam = linalg.max_eig_sym(P)
    if beta is None:
        beta = rho / lam
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    margins = np.empty(samples.shape[0])
    for i, x in enumerate(samples):
        xc = x.reshape(-1, 1)
        xn = np.asarray(f(xc), dtype=np.float64).reshape(-1)
        Jf = f_jacobian(x) if f_jacobian is not None else numeric_jacobian(f, x)
        Jp = embed_jacobian(x) if embed_jacobian is not None else np.eye(x.size)
        Jpn = embed_jacobian(xn) if embed_jacobian is not None else np.eye(x.size)
        M = Jp.T @ P @ Jp
        Mn = Jpn.T @ P @ Jpn
        margins[i] = linalg.max_eig_sym(Jf.T @ Mn @ Jf - (1.0 - beta) * M)
    return ContractionCheckReport(samples, margins, float(beta), kind, tol * max(1.0, lam), diagnostic)


def check_learned_contraction(model, samples, rho=1.0):
    """Diagnostic check of the learned one-step map ``decode(A encode(x))``.

    Only attractivity is guaranteed for learned models, so this is reported
    rather than asserted.
    """
    def f(x):
        return model.one_step(x).reshape(-1, 1)

    p = model.params
    return check_contraction(f, None, lambda x: model.encdec.encoder_jacobian(p, x), samples,
                             A=model.A, rho=rho, diagnostic=True)


# invariance and the error bound ------------------------------------------------

def gelfand_constant(A, jmax=200):
    """``C = max_{0 <= j <= jmax} ||A^j|| / rho^j`` and a tail indicator.

    The tail indicator is the ratio at ``jmax`` divided by ``C``; values near
    1 mean the supremum may not have been reached yet.
    """
    A = linalg.as_matrix(A)
    rho = linalg.spectral_radius(A)
    Aj = np.eye(A.shape[0])
    best, last = 1.0, 1.0
    for j in range(1, jmax + 1):
        Aj = Aj @ A
        nrm = linalg.norm2(Aj)
        if nrm == 0.0:
            last = 0.0
            break
        ratio = np.inf if rho == 0.0 else nrm / rho ** j
        best = max(best, ratio)
        last = ratio
    return float(best), float(last / best) if np.isfinite(best) and best > 0 else 1.0, rho


@dataclass
class InvarianceReport(_Report):
    residuals: np.ndarray
    eps_max: float
    rho: float
    C: float
    bound: float
    observed_max: float = float("nan")
    slack: float = float("nan")
    tail_ratio: float = float("nan")
    sigma_min: np.ndarray = None
    per_trajectory: list = field(default_factory=list)

    @property
    def rank_ok(self):
        return self.sigma_min is None or bool(np.all(self.sigma_min >= 1.0 - 1e-12))

    @property
    def bound_holds(self):
        if np.isnan(self.observed_max):
            return True
        return bool(self.observed_max <= self.bound * (1.0 + 1e-6))

    def summary(self):
        d = {"eps_max": self.eps_max, "rho": self.rho, "C": self.C, "bound": self.bound,
             "observed_max": self.observed_max, "slack": self.slack,
             "tail_ratio": self.tail_ratio, "bound_holds": self.bound_holds,
             "points": int(self.residuals.size)}
        if self.sigma_min is not None:
            d["sigma_min"] = float(np.min(self.sigma_min))
            d["rank_ok"] = self.rank_ok
        return d


def _bound(eps_max, rho, C):
    if rho >= 1.0:
        raise ValueError(f"error bound needs rho < 1, got {rho}")
    return C * eps_max / (1.0 - rho) if eps_max > 0 else 0.0


def check_d1_d2(encode, encode_jacobian, A, f, grid, jmax=200):
    """Invariance residual ``|phi(f(x)) - A phi(x)|`` and ``sigma_min(Jphi)`` on a grid."""
    A = linalg.as_matrix(A)
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    X = grid.T
    res = np.linalg.norm(encode(f(X)) - A @ encode(X), axis=0)
    smin = np.array([linalg.smallest_singular_value(encode_jacobian(x)) for x in grid])
    C, tail, rho = gelfand_constant(A, jmax)
    eps_max = float(res.max()) if res.size else 0.0
    return InvarianceReport(res, eps_max, rho, C, _bound(eps_max, rho, C), tail_ratio=tail, sigma_min=smin)


def check_error_bound(encode, A, f, x0s, T, jmax=200):
    """Lifted prediction error of the pure ``A`` rollout against the true system.

    ``z_t = phi(x_t)`` follows the true ``f``; ``zb_t = A^t phi(x_0)``. The
    residual maximum is taken over the states actually visited, so the
    bound ``C eps_max / (1 - rho)`` applies exactly; ``C`` uses powers up to
    ``max(jmax, T)``.
    """
    A = linalg.as_matrix(A)
    x0s = np.atleast_2d(np.asarray(x0s, dtype=np.float64))
    X = x0s.T
    Z = encode(X)
    Zb = Z.copy()
    errs = np.zeros((T, X.shape[1]))
    residuals = []
    for t in range(1, T):
        Xn = f(X)
        Zn = encode(Xn)
        residuals.append(np.linalg.norm(Zn - A @ Z, axis=0))
        Zb = A @ Zb
        errs[t] = np.linalg.norm(Zn - Zb, axis=0)
        X, Z = Xn, Zn
    res = np.concatenate(residuals) if residuals else np.zeros(0)
    C, tail, rho = gelfand_constant(A, max(jmax, T))
    eps_max = float(res.max()) if res.size else 0.0
    bound = _bound(eps_max, rho, C)
    per = errs.max(axis=0)
    observed = float(per.max()) if per.size else 0.0
    return InvarianceReport(res, eps_max, rho, C, bound, observed, bound - observed, tail,
                            per_trajectory=per.tolist())


def model_error_bound(model, f, x0s, T, jmax=200):
    """:func:`check_error_bound` for a learned model; ``f`` and ``x0s`` are in model coordinates."""
    return check_error_bound(lambda X: model.encode(X), model.A, f, x0s, T, jmax)


def scaled_system(f, scaling):
    """Conjugate a raw-coordinate map ``f`` by a :class:`~koopstab.data.Scaling`."""
    if scaling is None:
        return f
    g, o = scaling.gain.reshape(-1, 1), scaling.offset.reshape(-1, 1)

    def fs(X):
        return (f(X / g + o) - o) * g
    return fs


# closed loop -------------------------------------------------------------------------

@dataclass
class ClosedLoopReport(_Report):
    certificate: dict
    remark_certificate: dict
    remark_lyapunov_margin: float
    plant_rho: float = float("nan")
    plant_linear_gain: np.ndarray = None
    plant_contraction: dict = None

    @property
    def passed(self):
        return bool(self.certificate["passed"])


def check_closedloop(model, plant=None, samples=None):
    """Certificate for ``A + B K`` plus optional plant-side diagnostics.

    For a linear plant (``A``/``B`` attributes) the linearization of the
    learned policy at the origin gives ``rho(A_p + B_p K_lin)``. With
    ``samples`` the metric inequality is also evaluated on the true closed
    loop, with ``M(x) = Jphi^T P Jphi`` built from ``A + B K``.
    """
    r = model.realization
    cert = model.certificate("recovered")
    rcert = model.certificate("remark")
    M22 = sp.implicit_form(model.stabilizable_params())[2]
    remark_margin = linalg.min_eig_sym(M22 - r.A_cl.T @ M22 @ r.A_cl)
    rep = ClosedLoopReport(cert.to_dict(), rcert.to_dict(), remark_margin)
    if plant is None:
        return rep
    n = model.n

    def policy(x):
        return model.policy(np.asarray(x).ravel()).reshape(-1, 1)

    if hasattr(plant, "A") and hasattr(plant, "B"):
        Klin = numeric_jacobian(policy, np.zeros(n))
        rep.plant_linear_gain = Klin
        rep.plant_rho = linalg.spectral_radius(plant.A + plant.B @ Klin)
    if samples is not None:
        def fc(x):
            return np.asarray(plant.step(x, policy(x)), dtype=np.float64).reshape(-1, 1)

        scal = model.scaling

        def embed_jac(x):
            J = model.encdec.encoder_jacobian(model.params, scal.apply(x) if scal else x)
            return J * scal.gain[None, :] if scal else J

        Acl = r.A + r.B @ model.gain("recovered")
        chk = check_contraction(fc, None, embed_jac, samples, A=Acl, diagnostic=True)
        rep.plant_contraction = chk.summary()
    return rep


# robustness rollouts -------------------------------------------------------------------

def max_pairwise(points):
    """Largest pairwise Euclidean distance among the rows of ``points``."""
    best = 0.0
    for a, b in itertools.combinations(range(points.shape[0]), 2):
        best = max(best, float(np.linalg.norm(points[a] - points[b])))
    return best


@dataclass
class RobustnessReport(_Report):
    ics: np.ndarray
    states: list
    lifted: list
    state_spread: np.ndarray
    lifted_spread: np.ndarray
    mode: str
    diverged: list

    @property
    def bounded(self):
        return not any(self.diverged) and all(np.all(np.isfinite(x)) for x in self.states)

    def decay_ratio(self, space="lifted"):
        """Final over initial maximum pairwise distance."""
        s = self.lifted_spread if space == "lifted" else self.state_spread
        return float(s[-1] / s[0]) if s[0] > 0 else 0.0

    def rate_estimate(self, space="lifted"):
        """Geometric per-step rate fitted to the pairwise-distance envelope."""
        s = self.lifted_spread if space == "lifted" else self.state_spread
        ok = s > 1e-300
        if ok.sum() < 2:
            return 0.0
        t = np.nonzero(ok)[0]
        slope = np.polyfit(t, np.log(s[ok]), 1)[0]
        return float(np.exp(slope))

    def summary(self):
        return {"mode": self.mode, "count": int(self.ics.shape[0]), "bounded": self.bounded,
                "lifted_decay_ratio": self.decay_ratio("lifted"),
                "state_decay_ratio": self.decay_ratio("state"),
                "lifted_rate": self.rate_estimate("lifted"), "state_rate": self.rate_estimate("state")}

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,state_spread,lifted_spread\n")
            for t, (a, b) in enumerate(zip(self.state_spread, self.lifted_spread)):
                fh.write(f"{t},{float(a)!r},{float(b)!r}\n")

    def to_svg(self, path, title=""):
        return write_svg(path, [x[:, :2] for x in self.states], title=title)


def perturbed_ics(base, radius, count, rng):
    """``count`` states uniform in the cube ``base +- radius``."""
    base = np.asarray(base, dtype=np.float64).reshape(-1)
    return base + radius * rng.uniform(-1.0, 1.0, size=(count, base.size))


def _spreads(trajs, T):
    out = np.full(T, np.nan)
    for t in range(T):
        pts = [tr[t] for tr in trajs if tr.shape[0] > t]
        if len(pts) == len(trajs):
            out[t] = max_pairwise(np.array(pts))
    return out


def robustness_rollouts(model, base_ic, radius, count, T, mode=None, plant=None, gain="recovered",
                        seed=0, ics=None):
    """Rollouts from perturbed initial conditions (model coordinates).

    ``mode`` defaults to ``"autonomous"`` for stable models and ``"lifted"``
    for controlled ones; ``"state"`` and ``"plant"`` use the closed-loop
    modes of :func:`koopstab.koopman.rollout_closedloop`.
    """
    rng = np.random.default_rng(seed)
    if ics is None:
        ics = perturbed_ics(base_ic, radius, count, rng)
    ics = np.atleast_2d(ics)
    if mode is None:
        mode = "autonomous" if model.kind == "stable" else "lifted"
    states, lifted, diverged = [], [], []
    for x0 in ics:
        if mode == "autonomous":
            r = koopman.rollout_autonomous(model, x0, T)
        else:
            r = koopman.rollout_closedloop(model, x0, T, gain=gain, mode=mode, plant=plant)
        states.append(r.x)
        lifted.append(r.z)
        diverged.append(bool(r.diverged))
    return RobustnessReport(ics, states, lifted, _spreads(states, T), _spreads(lifted, T), mode, diverged)


def policy_rollouts(policy, plant, ics, T, limit=koopman.DIVERGENCE_LIMIT):
    """Simulate ``x+ = plant.step(x, policy(x))``; returns a list of ``(T', n)`` arrays."""
    out = []
    for x0 in np.atleast_2d(ics):
        x = np.asarray(x0, dtype=np.float64).reshape(-1, 1)
        xs = [x.ravel()]
        for _ in range(T - 1):
            u = np.asarray(policy(x.ravel()), dtype=np.float64).reshape(-1, 1)
            x = np.asarray(plant.step(x, u), dtype=np.float64).reshape(-1, 1)
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > limit:
                break
            xs.append(x.ravel())
        out.append(np.array(xs))
    return out


def worst_divergence(trajs, T):
    """Final max pairwise distance over the initial one (inf if a rollout blew up)."""
    if any(tr.shape[0] < T for tr in trajs):
        return float("inf")
    first = max_pairwise(np.array([tr[0] for tr in trajs]))
    last = max_pairwise(np.array([tr[T - 1] for tr in trajs]))
    return last / first if first > 0 else 0.0


# svg ------------------------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def write_svg(path, curves, title="", width=480, height=480, pad=30):
    """Minimal SVG line plot: one ``<polyline>`` per ``(k, 2)`` array in ``curves``."""
    pts = [np.asarray(c, dtype=np.float64) for c in curves if len(c)]
    finite = np.vstack([c[np.all(np.isfinite(c), axis=1)] for c in pts]) if pts else np.zeros((1, 2))
    lo, hi = finite.min(axis=0), finite.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)

    def xy(p):
        return (pad + (p[0] - lo[0]) / span[0] * (width - 2 * pad),
                height - pad - (p[1] - lo[1]) / span[1] * (height - 2 * pad))

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        lines.append(f'<text x="{pad}" y="{pad - 10}" font-family="sans-serif" font-size="12">{title}</text>')
    for i, c in enumerate(pts):
        c = c[np.all(np.isfinite(c), axis=1)]
        coords = " ".join("%.2f,%.2f" % xy(p) for p in c)
        lines.append(f'<polyline fill="none" stroke="{_COLORS[i % len(_COLORS)]}" '
                     f'stroke-width="1.2" points="{coords}"/>')
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)
