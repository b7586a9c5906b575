"""Optimization drivers: identification, imitation, cross-validation, the
behavioral-cloning baseline and the scaling benchmark.

All fits run full-batch Adam directly on the free parameters. There is no
projection or clipping step: every iterate realizes a stable (or
stabilizable) lifted matrix, which the loop spot-checks every
``check_every`` epochs.
"""
import dataclasses
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data as data_mod
from . import koopman
from . import linalg
from . import losses
from . import nn
from .stableparam import CertificateError, DEFAULT_EPS

WORKERS_ENV = "KOOPSTAB_WORKERS"


class TrainingError(RuntimeError):
    """Optimization aborted after repeated numerical failures."""


@dataclass
class TrainConfig:
    epochs: int = 5000
    lr: float = 1e-3
    seed: int = 0
    # architecture
    lift_dim: int = 20
    hidden: tuple = (50, 50)
    activation: str = "relu"
    decoder_kind: str = "residual"
    eps: float = DEFAULT_EPS
    init_scale: float = None
    scaling: str = "maxabs"
    # losses
    alpha: float = 1e3
    c1: float = 100.0
    c2: float = 1.0
    c3: float = 1.0
    gain_choice: str = "remark"
    normalize: bool = False
    prefeedback: str = "identity"
    pf_hidden: tuple = (20, 20)
    fused_rollout: bool = True
    # schedule: "plateau" cuts lr by lr_factor after lr_patience stale epochs,
    # "cosine" anneals from lr to min_lr over the epoch budget
    lr_schedule: str = "plateau"
    patience: int = 200
    plateau_tol: float = 1e-5
    lr_patience: int = 200
    lr_factor: float = 0.5
    min_lr: float = 1e-6
    target_loss: float = None
    check_every: int = 10
    max_nan_retries: int = 5
    checkpoint_every: int = 0
    log_every: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.pf_hidden = tuple(int(h) for h in self.pf_hidden)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.lr_schedule not in ("plateau", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if not self.alpha > 0 or min(self.c1, self.c2, self.c3) <= 0:
            raise ValueError("loss weights must be positive")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        d["pf_hidden"] = list(self.pf_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d)


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    epoch_times: list = field(default_factory=list)
    lrs: list = field(default_factory=list)
    certificates: list = field(default_factory=list)
    components: dict = field(default_factory=dict)
    nan_events: list = field(default_factory=list)
    stopped: str = ""
    config: dict = field(default_factory=dict)
    final_certificate: dict = field(default_factory=dict)

    @property
    def epochs(self):
        return len(self.losses)

    @property
    def final_loss(self):
        return self.losses[-1] if self.losses else math.nan

    def to_dict(self):
        return dataclasses.asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")


# generic loop -----------------------------------------------------------------

def _objective_fn(model, batches, config):
    if model.kind == "stable":
        def f(p, parts=False):
            return losses.sysid_objective(model, batches, p, config.alpha,
                                          fused=config.fused_rollout, parts=parts)
    else:
        def f(p, parts=False):
            return losses.imitation_objective(model, batches, p, config.c1, config.c2, config.c3,
                                              config.alpha, config.gain_choice, config.normalize,
                                              parts=parts)
    return f


def _spectral_check(model, params):
    m = model.with_params(params)
    rho = linalg.spectral_radius(m.certificate().A_cl if model.kind != "stable" else m.A)
    if not rho < 1.0:
        raise CertificateError(f"realized matrix has spectral radius {rho}")
    return rho


def _save_checkpoint(path, epoch, params, state, lr, report, best, since_best, since_lr):
    payload = {"epoch": epoch, "lr": lr, "best": best, "since_best": since_best,
               "since_lr": since_lr, "adam": state.to_dict(),
               "params": {k: v.tolist() for k, v in params.items()},
               "report": report.to_dict()}
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(payload), encoding="utf-8")
    os.replace(tmp, path)


def _load_checkpoint(path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    params = {k: np.array(v, dtype=np.float64, ndmin=2) for k, v in d["params"].items()}
    report = TrainReport(**d["report"])
    return (d["epoch"], params, ad.AdamState.from_dict(d["adam"]), d["lr"], report,
            d["best"], d["since_best"], d["since_lr"])


def optimize(model, batches, config, checkpoint=None, resume=False, callback=None):
    """Run Adam on ``model``'s parameters; returns ``(model, report)``."""
    objective = _objective_fn(model, batches, config)
    params = {k: v.copy() for k, v in model.params.items()}
    state = ad.AdamState()
    lr = config.lr
    report = TrainReport(config=config.to_dict())
    best, since_best, since_lr = math.inf, 0, 0
    start = 0
    if resume and checkpoint is not None and Path(checkpoint).exists():
        start, params, state, lr, report, best, since_best, since_lr = _load_checkpoint(checkpoint)
    nan_streak = 0
    lr_mult = 1.0
    epoch = start
    report.stopped = "epochs"
    while epoch < config.epochs:
        t0 = time.perf_counter()
        if config.lr_schedule == "cosine":
            frac = epoch / max(1, config.epochs)
            lr = lr_mult * (config.min_lr + 0.5 * (config.lr - config.min_lr) * (1.0 + math.cos(math.pi * frac)))
        tape = ad.Tape()
        tp = {k: tape.param(k, v) for k, v in params.items()}
        try:
            loss = objective(tp)
            grads = tape.backward(loss)
        except (ad.NonFiniteError, linalg.SingularMatrixError) as exc:
            nan_streak += 1
            report.nan_events.append({"epoch": epoch, "error": str(exc), "lr": lr})
            if nan_streak > config.max_nan_retries:
                raise TrainingError(f"aborting after {nan_streak} failed steps: {exc}") from None
            lr *= 0.5
            lr_mult *= 0.5
            continue
        nan_streak = 0
        val = float(loss.value[0, 0])
        params = ad.adam_step(params, grads, state, lr)
        epoch += 1
        report.losses.append(val)
        report.lrs.append(lr)
        report.epoch_times.append(time.perf_counter() - t0)
        if config.check_every and epoch % config.check_every == 0:
            report.certificates.append({"epoch": epoch, "rho": _spectral_check(model, params)})
        if config.log_every and epoch % config.log_every == 0 and callback is None:
            print(f"epoch {epoch:6d} loss {val:.6e} lr {lr:.2e}", flush=True)
        if callback is not None:
            callback(epoch, val, params)
        # schedule
        if val < best * (1.0 - config.plateau_tol):
            best, since_best, since_lr = val, 0, 0
        else:
            since_best += 1
            since_lr += 1
        if config.lr_schedule == "plateau" and since_lr >= config.lr_patience and lr > config.min_lr:
            lr = max(lr * config.lr_factor, config.min_lr)
            # give the smaller step a full patience window before stopping
            since_lr = since_best = 0
        if checkpoint is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            _save_checkpoint(checkpoint, epoch, params, state, lr, report, best, since_best, since_lr)
        if config.target_loss is not None and val < config.target_loss:
            report.stopped = "target"
            break
        if config.patience and since_best >= config.patience:
            report.stopped = "plateau"
            break
    fitted = model.with_params(params)
    final, parts = objective(fitted.params, parts=True)
    report.components = {k: float(v) for k, v in parts.items()}
    report.components["objective"] = float(final[0, 0])
    report.final_certificate = fitted.certificate().to_dict()
    return fitted, report


# identification -----------------------------------------------------------------

def _prepare(dataset, config):
    if config.scaling == "none":
        scaling = None
        scaled = dataset
    else:
        scaling = data_mod.fit_scaling(dataset, config.scaling)
        scaled = dataset.scaled(scaling)
    return scaled, scaling


def init_stable_model(n, config, scaling=None):
    rng = np.random.default_rng(config.seed)
    return koopman.StableKoopmanModel.init(n, rng, config.lift_dim, config.hidden, config.activation,
                                           config.decoder_kind, config.eps, config.init_scale, scaling)


def fit_sysid(dataset, config=None, checkpoint=None, resume=False, callback=None):
    """Fit a stable lifted model by minimizing ``j_se + alpha j_re``."""
    config = config or TrainConfig()
    scaled, scaling = _prepare(dataset, config)
    model = init_stable_model(dataset.n, config, scaling)
    return optimize(model, losses.make_batches(scaled), config, checkpoint, resume, callback)


def fit_imitation(dataset, config=None, checkpoint=None, resume=False, callback=None):
    """Jointly fit a stabilizable lifted model and its feedback gain."""
    config = config or TrainConfig(scaling="none")
    if not dataset.has_inputs:
        raise data_mod.DataError("imitation needs a dataset with inputs")
    scaled, scaling = _prepare(dataset, config)
    rng = np.random.default_rng(config.seed)
    model = koopman.StabilizableKoopmanModel.init(
        dataset.n, dataset.m, rng, config.lift_dim, config.hidden, config.activation,
        config.decoder_kind, config.eps, config.init_scale, scaling, config.prefeedback,
        config.pf_hidden)
    return optimize(model, losses.make_batches(scaled), config, checkpoint, resume, callback)


def heldout_nse(model, trajectory):
    """NSE of the autonomous rollout from the first state of a raw trajectory."""
    states = trajectory.states
    sim = model.simulate(states[0], states.shape[0])
    return losses.nse(states, sim)


@dataclass
class LoocvResult:
    test_nse: list
    train_nse: list
    final_losses: list

    @property
    def median(self):
        return float(np.median(self.test_nse))

    @property
    def quartiles(self):
        return float(np.percentile(self.test_nse, 25)), float(np.percentile(self.test_nse, 75))

    def to_dict(self):
        q1, q3 = self.quartiles
        return {"test_nse": self.test_nse, "train_nse": self.train_nse,
                "final_losses": self.final_losses, "median": self.median, "q1": q1, "q3": q3}

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("fold,nse\n")
            for i, v in enumerate(self.test_nse):
                fh.write(f"{i},{v!r}\n")


def _fold(args):
    dataset, config, i = args
    train = dataset.subset([j for j in range(len(dataset)) if j != i])
    model, report = fit_sysid(train, config)
    test = heldout_nse(model, dataset.trajectories[i])
    tr = float(np.mean([heldout_nse(model, t) for t in train.trajectories]))
    return i, test, tr, report.final_loss, model


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def loocv(dataset, config=None, workers=None, return_models=False):
    """Leave-one-out cross-validation over the trajectories of ``dataset``."""
    config = config or TrainConfig()
    k = len(dataset)
    if k < 2:
        raise ValueError("leave-one-out needs at least 2 trajectories")
    workers = default_workers() if workers is None else workers
    jobs = [(dataset, config, i) for i in range(k)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fold, jobs))
    else:
        results = [_fold(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    res = LoocvResult([r[1] for r in results], [r[2] for r in results], [r[3] for r in results])
    if return_models:
        return res, [r[4] for r in results]
    return res


# behavioral cloning ---------------------------------------------------------------

@dataclass
class BcPolicy:
    net: nn.Mlp
    params: dict
    final_loss: float = math.nan

    def __call__(self, x):
        X = np.asarray(x, dtype=np.float64)
        col = X.ndim == 1
        X = X.reshape(-1, 1) if col else X
        U = self.net.apply(self.params, X)
        return U.ravel() if col else U


def fit_bc(dataset, epochs=3000, lr=1e-2, hidden=(20, 20), weight_decay=1e-4, seed=0):
    """Regress inputs on states: mean squared error plus L2 weight decay."""
    if not dataset.has_inputs:
        raise data_mod.DataError("behavioral cloning needs a dataset with inputs")
    X = np.hstack([tr.states.T for tr in dataset.trajectories])
    U = np.hstack([tr.inputs.T for tr in dataset.trajectories])
    net = nn.Mlp("bc", (dataset.n, *hidden, dataset.m), "tanh")
    params = net.init(np.random.default_rng(seed))
    state = ad.AdamState()
    count = X.shape[1]
    loss_val = math.nan
    for _ in range(epochs):
        tape = ad.Tape()
        tp = {k: tape.param(k, v) for k, v in params.items()}
        fit = ad.scale(ad.sumsq(ad.sub(U, net.apply(tp, X))), 1.0 / count)
        reg = None
        for k, v in tp.items():
            if ".W" in k:
                reg = ad.sumsq(v) if reg is None else ad.add(reg, ad.sumsq(v))
        loss = ad.add(fit, ad.scale(reg, weight_decay))
        grads = tape.backward(loss)
        loss_val = float(fit.value[0, 0])
        params = ad.adam_step(params, grads, state, lr)
    return BcPolicy(net, params, loss_val)


# scaling benchmark ------------------------------------------------------------------

@dataclass
class BenchRow:
    n: int
    trial: int
    per_iter_s: float
    iters: int
    iters_to_threshold: int
    time_to_threshold_s: float
    reached: bool


def _bench_one(n, trial, config, max_iters, timeout, threshold):
    ds, _ = data_mod.gen_graph_laplacian(seed=1000 * n + trial, n=n, T=30, n_traj=5)
    rng = np.random.default_rng(config.seed + trial)
    model = koopman.StabilizableKoopmanModel.init(
        n, n, rng, config.lift_dim, config.hidden, config.activation, config.decoder_kind,
        config.eps, config.init_scale, None, config.prefeedback, config.pf_hidden)
    batches = losses.make_batches(ds)
    objective = _objective_fn(model, batches, config)
    params = {k: v.copy() for k, v in model.params.items()}
    state = ad.AdamState()
    first = None
    hit, hit_time = -1, math.nan
    start = time.perf_counter()
    it = 0
    while it < max_iters:
        tape = ad.Tape()
        tp = {k: tape.param(k, v) for k, v in params.items()}
        loss = objective(tp)
        grads = tape.backward(loss)
        params = ad.adam_step(params, grads, state, config.lr)
        it += 1
        val = float(loss.value[0, 0])
        first = val if first is None else first
        elapsed = time.perf_counter() - start
        if hit < 0 and val <= threshold * first:
            hit, hit_time = it, elapsed
        if elapsed > timeout:
            break
    total = time.perf_counter() - start
    return BenchRow(n, trial, total / it, it, hit, hit_time, hit >= 0)


def loglog_slope(xs, ys):
    xs, ys = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    slope, _ = np.polyfit(xs, ys, 1)
    return float(slope)


def bench_scaling(dims=(2, 4, 8, 16, 32), trials=3, config=None, max_iters=300, timeout=120.0,
                  threshold=0.01):
    """Time imitation training on graph-Laplacian data of growing dimension.

    Returns ``(rows, summary)``; ``summary`` holds per-dimension medians and
    the least-squares log-log slopes of per-iteration time and of time to
    reach ``threshold`` times the initial loss (over dims where it was hit).
    """
    dims = list(dims)
    if dims != sorted(dims):
        raise ValueError("dims must be ascending")
    config = config or TrainConfig(lift_dim=8, hidden=(20, 20), lr=1e-2, scaling="none")
    rows = [_bench_one(n, t, config, max_iters, timeout, threshold) for n in dims for t in range(trials)]
    med = {n: float(np.median([r.per_iter_s for r in rows if r.n == n])) for n in dims}
    summary = {"dims": dims, "median_per_iter_s": [med[n] for n in dims],
               "per_iter_slope": loglog_slope(dims, [med[n] for n in dims])}
    reached = [n for n in dims if all(r.reached for r in rows if r.n == n)]
    if len(reached) >= 2:
        tt = [float(np.median([r.time_to_threshold_s for r in rows if r.n == n])) for n in reached]
        summary["time_to_threshold_slope"] = loglog_slope(reached, tt)
    spread = []
    for n in dims:
        v = [r.per_iter_s for r in rows if r.n == n]
        spread.append((max(v) - min(v)) / med[n] if med[n] > 0 else 0.0)
    summary["max_trial_spread"] = float(max(spread))
    return rows, summary


def bench_csv(rows, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n,trial,per_iter_s,iters,iters_to_threshold,time_to_threshold_s,reached\n")
        for r in rows:
            fh.write(f"{r.n},{r.trial},{r.per_iter_s!r},{r.iters},{r.iters_to_threshold},"
                     f"{r.time_to_threshold_s!r},{int(r.reached)}\n")
