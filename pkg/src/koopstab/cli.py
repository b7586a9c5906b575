"""Command-line interface: ``koopstab <command> ...``.

Commands: gen-data, train-sysid, train-imitation, loocv, eval, verify,
simulate, bench, schema. Every command writes under ``--out`` and leaves a
``run-manifest.json`` with the resolved configuration, its hash and the
library versions.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
failure, 4 certificate failure.
"""
import argparse
import dataclasses
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import data
from . import kernels
from . import koopman
from . import linalg
from . import losses
from . import train
from . import verify
from .autodiff import NonFiniteError
from .stableparam import CertificateError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_CERT = 0, 1, 2, 3, 4

CONFIG_SECTIONS = ("train", "data")
GEN_KINDS = ("contracting2d", "lifted-lti", "graph-laplacian", "stabilizable-lti")
GEN_KEYS = {"seed", "n", "m", "k", "T", "n_traj", "dt", "noise", "path", "ic_spread", "ic_center"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# config ----------------------------------------------------------------------------

def load_config(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    unknown = sorted(set(cfg) - set(CONFIG_SECTIONS))
    if unknown:
        raise UsageError(f"unknown config sections: {unknown}")
    if "data" in cfg:
        bad = sorted(set(cfg["data"]) - GEN_KEYS)
        if bad:
            raise UsageError(f"unknown data keys: {bad}")
    return cfg


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def train_config(cfg, overrides, **defaults):
    d = dict(defaults)
    d.update(cfg.get("train", {}))
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        k = k.strip()
        if k.startswith("train."):
            k = k[len("train."):]
        d[k] = _parse_value(v)
    try:
        return train.TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training config: {exc}") from None


def config_schema():
    fields = {}
    for f in dataclasses.fields(train.TrainConfig):
        default = f.default
        fields[f.name] = {"type": type(default).__name__ if default is not None else "number|null",
                          "default": list(default) if isinstance(default, tuple) else default}
    return {"sections": {"train": fields,
                         "data": {k: {"type": "generator argument"} for k in sorted(GEN_KEYS)}},
            "unknown_keys": "rejected"}


def _hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def write_manifest(out, command, argv, config, inputs=(), outputs=()):
    out = Path(out)
    manifest = {
        "command": command, "argv": list(argv), "config": config, "config_hash": _hash(config),
        "versions": {"koopstab": __version__, "numpy": np.__version__,
                     "python": platform.python_version(), "kernels": kernels.BACKEND},
        "inputs": {str(p): _file_hash(p) for p in inputs if Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
    }
    path = out / "run-manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def _out(path):
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _dump(path, obj):
    Path(path).write_text(json.dumps(verify._jsonable(obj), indent=2), encoding="utf-8")
    return Path(path)


def _load_data(path):
    try:
        return data.TrajectoryDataset.load(path)
    except FileNotFoundError as exc:
        raise data.DataError(str(exc)) from None


def _model_inputs(args):
    return [Path(args.model)] if getattr(args, "model", None) else []


# commands -------------------------------------------------------------------------------

def cmd_gen_data(args, argv):
    cfg = load_config(args.config)
    kw = dict(cfg.get("data", {}))
    for key in ("seed", "n", "m", "k", "T", "n_traj", "dt"):
        v = getattr(args, key, None)
        if v is not None:
            kw[key] = v
    out = _out(args.out)
    try:
        if args.kind == "contracting2d":
            kw.pop("n", None)
            ds, _ = data.gen_contracting2d(**kw)
        elif args.kind == "lifted-lti":
            ds, _ = data.gen_lifted_lti(**kw)
        elif args.kind == "graph-laplacian":
            ds, _ = data.gen_graph_laplacian(**kw)
        else:
            ds, _, _ = data.gen_stabilizable_lti(**kw)
    except TypeError as exc:
        raise UsageError(f"bad generator arguments for {args.kind}: {exc}") from None
    manifest = ds.save(out)
    write_manifest(out, "gen-data", argv, {"kind": args.kind, **kw}, outputs=[manifest])
    print(manifest)
    return EXIT_OK


def _train(args, argv, imitation):
    cfg = load_config(args.config)
    defaults = {"scaling": "none"} if imitation else {}
    tc = train_config(cfg, args.set, **defaults)
    ds = _load_data(args.data)
    out = _out(args.out)
    ckpt = out / "checkpoint.json"
    if args.checkpoint_every:
        tc.checkpoint_every = args.checkpoint_every
    fit = train.fit_imitation if imitation else train.fit_sysid
    model, report = fit(ds, tc, checkpoint=ckpt, resume=args.resume)
    mpath = koopman.save_model(model, out / "model.json")
    report.save(out / "report.json")
    cert = report.final_certificate
    _dump(out / "certificate.json", cert)
    write_manifest(out, "train-imitation" if imitation else "train-sysid", argv, tc.to_dict(),
                   inputs=[Path(args.data) / "manifest.json"],
                   outputs=[mpath, out / "report.json", out / "certificate.json"])
    print(f"final loss {report.final_loss:.6e} after {report.epochs} epochs ({report.stopped}); "
          f"rho {cert['spectral_radius']:.6f}")
    return EXIT_OK if cert.get("passed") else EXIT_CERT


def cmd_train_sysid(args, argv):
    return _train(args, argv, False)


def cmd_train_imitation(args, argv):
    return _train(args, argv, True)


def cmd_loocv(args, argv):
    cfg = load_config(args.config)
    tc = train_config(cfg, args.set)
    ds = _load_data(args.data)
    out = _out(args.out)
    res = train.loocv(ds, tc, workers=args.workers)
    res.to_csv(out / "loocv.csv")
    _dump(out / "loocv.json", res.to_dict())
    write_manifest(out, "loocv", argv, tc.to_dict(), outputs=[out / "loocv.csv", out / "loocv.json"])
    q1, q3 = res.quartiles
    print(f"median NSE {res.median:.4g} (q1 {q1:.4g}, q3 {q3:.4g})")
    return EXIT_OK


def _eval_nse(model, ds):
    out = []
    for tr in ds.trajectories:
        if model.kind == "stable":
            out.append(train.heldout_nse(model, tr))
        else:
            x = model.scaling.apply(tr.states) if model.scaling else tr.states
            r = koopman.rollout_openloop(model, x[0], tr.inputs[:-1], input_space="u")
            sim = model.scaling.invert(r.x) if model.scaling else r.x
            out.append(losses.nse(tr.states, sim))
    return out


def cmd_eval(args, argv):
    model = koopman.load_model(args.model)
    ds = _load_data(args.data)
    out = _out(args.out)
    vals = _eval_nse(model, ds)
    with open(out / "nse.csv", "w", encoding="utf-8") as fh:
        fh.write("fold,nse\n")
        for i, v in enumerate(vals):
            fh.write(f"{i},{v!r}\n")
    metrics = {"nse": vals, "median": float(np.median(vals)),
               "q1": float(np.percentile(vals, 25)), "q3": float(np.percentile(vals, 75))}
    _dump(out / "metrics.json", metrics)
    write_manifest(out, "eval", argv, {"model": str(args.model), "data": str(args.data)},
                   inputs=_model_inputs(args), outputs=[out / "nse.csv", out / "metrics.json"])
    print(f"median NSE {metrics['median']:.4g}")
    return EXIT_OK


def _samples(ds, model, count, rng):
    X = np.vstack([tr.states for tr in ds.trajectories])
    idx = rng.choice(X.shape[0], size=min(count, X.shape[0]), replace=False)
    return X[idx]


def cmd_verify(args, argv):
    model = koopman.load_model(args.model)
    out = _out(args.out)
    rng = np.random.default_rng(args.seed)
    reports = {}
    ds = _load_data(args.data) if args.data else None
    system = data.dataset_system(ds) if ds is not None else None
    if model.kind == "stable":
        cert = model.certificate()
        reports["certificate"] = cert.to_dict()
        ok = cert.passed
        if ds is not None:
            pts = _samples(ds, model, args.points, rng)
            scal = model.scaling
            pts_m = scal.apply(pts) if scal else pts
            reports["learned_contraction"] = verify.check_learned_contraction(model, pts_m).summary()
        if system is not None and hasattr(system, "step") and not hasattr(system, "K"):
            f = verify.scaled_system(system.step, model.scaling)
            pts_m = model.scaling.apply(pts) if model.scaling else pts
            enc = model.encode

            def encj(x):
                return model.encdec.encoder_jacobian(model.params, x)

            inv = verify.check_d1_d2(enc, encj, model.A, f, pts_m)
            reports["invariance"] = inv.summary()
            x0s = pts_m[:min(20, len(pts_m))]
            eb = verify.model_error_bound(model, f, x0s, args.T)
            reports["error_bound"] = eb.summary()
            ok = ok and eb.bound_holds
            if hasattr(system, "jacobian") and hasattr(system, "metric"):
                tc = verify.check_contraction(system.step, system.jacobian, None, pts,
                                              metric=system.metric, beta=system.beta)
                reports["true_contraction"] = tc.summary()
    else:
        plant = system if system is not None and hasattr(system, "K") else None
        pts = _samples(ds, model, args.points, rng) if (ds is not None and plant is not None) else None
        rep = verify.check_closedloop(model, plant, pts)
        reports["closed_loop"] = dict(rep.to_dict(), passed=rep.passed)
        ok = rep.passed
    _dump(out / "verification.json", reports)
    write_manifest(out, "verify", argv, {"model": str(args.model), "data": str(args.data)},
                   inputs=_model_inputs(args), outputs=[out / "verification.json"])
    print(json.dumps(verify._jsonable({k: (v.get("passed", v.get("bound_holds")) if isinstance(v, dict) else v)
                                       for k, v in reports.items()})))
    return EXIT_OK if ok else EXIT_CERT


def cmd_simulate(args, argv):
    model = koopman.load_model(args.model)
    out = _out(args.out)
    try:
        ic = np.array([float(v) for v in args.ic.split(",")])
    except ValueError:
        raise UsageError(f"bad --ic {args.ic!r}") from None
    if ic.size != model.n:
        raise UsageError(f"--ic needs {model.n} values")
    ic_m = model.scaling.apply(ic) if model.scaling else ic
    count = 1 if args.perturb == 0 else args.count
    rng = np.random.default_rng(args.seed)
    ics = ic_m[None, :] if count == 1 else verify.perturbed_ics(ic_m, args.perturb, count, rng)
    mode = args.mode
    plant = None
    if mode == "plant":
        if model.kind == "stable":
            raise UsageError("--mode plant needs a controlled model")
        system = data.dataset_system(_load_data(args.data)) if args.data else None
        if system is None or not hasattr(system, "B"):
            raise UsageError("--mode plant needs --data from a controlled generator")
        plant = _ModelCoordinates(system, model.scaling)
    rep = verify.robustness_rollouts(model, ic_m, args.perturb, count, args.T, mode=mode, plant=plant,
                                     ics=ics)
    outputs = []
    for i, x in enumerate(rep.states):
        xr = model.scaling.invert(x) if model.scaling else x
        r = koopman.Rollout(xr, rep.lifted[i])
        outputs.append(r.to_csv(out / f"rollout_{i:03d}.csv"))
    raw = [model.scaling.invert(x) if model.scaling else x for x in rep.states]
    outputs.append(verify.write_svg(out / "rollouts.svg", [x[:, :2] for x in raw], title="rollouts"))
    rep.to_csv(out / "spread.csv")
    outputs.append(out / "spread.csv")
    summary = rep.summary()
    if model.kind == "stable":
        zero = np.zeros((model.N, 1))
        end = model.decode(zero).ravel()
        end = model.scaling.invert(end) if model.scaling else end
        summary["decode_zero"] = end.tolist()
        summary["endpoint_distance"] = [float(np.linalg.norm(x[-1] - end)) for x in raw]
    _dump(out / "summary.json", summary)
    write_manifest(out, "simulate", argv, vars_config(args), inputs=_model_inputs(args), outputs=outputs)
    print(json.dumps(summary))
    return EXIT_OK


class _ModelCoordinates:
    """A raw-coordinate plant seen through the model's state scaling."""

    def __init__(self, plant, scaling):
        self.plant = plant
        self.scaling = scaling

    def step(self, x, u):
        if self.scaling is None:
            return self.plant.step(x, u)
        g, o = self.scaling.gain.reshape(-1, 1), self.scaling.offset.reshape(-1, 1)
        return (self.plant.step(x / g + o, u) - o) * g


def vars_config(args):
    return {k: v for k, v in vars(args).items() if k != "func"}


def cmd_bench(args, argv):
    cfg = load_config(args.config)
    tc = train_config(cfg, args.set, lift_dim=8, hidden=(20, 20), lr=1e-2, scaling="none")
    try:
        dims = [int(v) for v in args.dims.split(",")]
    except ValueError:
        raise UsageError(f"bad --dims {args.dims!r}") from None
    out = _out(args.out)
    rows, summary = train.bench_scaling(dims, args.trials, tc, max_iters=args.iters, timeout=args.timeout)
    train.bench_csv(rows, out / "timing.csv")
    _dump(out / "summary.json", summary)
    write_manifest(out, "bench", argv, {"dims": dims, "trials": args.trials, "train": tc.to_dict()},
                   outputs=[out / "timing.csv", out / "summary.json"])
    print(f"per-iteration log-log slope {summary['per_iter_slope']:.3f}")
    return EXIT_OK


def cmd_schema(args, argv):
    print(json.dumps(config_schema(), indent=2))
    return EXIT_OK


# parser -------------------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="koopstab", description="Learn and verify stable lifted linear models.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        sp.add_argument("--out", required=True, help="output directory")
        if config:
            sp.add_argument("--config", help="JSON config file")
            sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                            help="override a training config key (repeatable)")

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--kind", required=True, choices=GEN_KINDS)
    g.add_argument("--seed", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--T", type=int)
    g.add_argument("--n-traj", dest="n_traj", type=int)
    g.add_argument("--dt", type=float)
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.set_defaults(func=cmd_gen_data)

    for name, fn in (("train-sysid", cmd_train_sysid), ("train-imitation", cmd_train_imitation)):
        t = sub.add_parser(name, help=f"{name.split('-')[1]} training")
        t.add_argument("--data", required=True)
        t.add_argument("--resume", action="store_true", help="continue from out/checkpoint.json")
        t.add_argument("--checkpoint-every", type=int, default=100)
        common(t)
        t.set_defaults(func=fn)

    lo = sub.add_parser("loocv", help="leave-one-out cross-validation")
    lo.add_argument("--data", required=True)
    lo.add_argument("--workers", type=int, help=f"worker processes (default ${train.WORKERS_ENV} or 1)")
    common(lo)
    lo.set_defaults(func=cmd_loocv)

    e = sub.add_parser("eval", help="NSE of a model on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    common(e, config=False)
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify", help="certificates and guarantee checks")
    v.add_argument("--model", required=True)
    v.add_argument("--data")
    v.add_argument("--points", type=int, default=200)
    v.add_argument("--T", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    common(v, config=False)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", help="rollouts from (perturbed) initial conditions")
    s.add_argument("--model", required=True)
    s.add_argument("--ic", required=True, help="comma-separated raw initial state")
    s.add_argument("--T", type=int, default=200)
    s.add_argument("--perturb", type=float, default=0.0)
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--mode", choices=("autonomous", "lifted", "state", "plant"))
    s.add_argument("--data", help="dataset whose generating plant drives --mode plant")
    s.add_argument("--seed", type=int, default=0)
    common(s, config=False)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="per-iteration timing against state dimension")
    b.add_argument("--dims", default="2,4,8,16,32")
    b.add_argument("--trials", type=int, default=3)
    b.add_argument("--iters", type=int, default=300)
    b.add_argument("--timeout", type=float, default=120.0)
    common(b)
    b.set_defaults(func=cmd_bench)

    sc = sub.add_parser("schema", help="print the config schema")
    sc.set_defaults(func=cmd_schema)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"koopstab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (data.DataError, koopman.ModelFormatError) as exc:
        print(f"koopstab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CertificateError as exc:
        print(f"koopstab: certificate failure: {exc}", file=sys.stderr)
        return EXIT_CERT
    except (linalg.LinAlgError, NonFiniteError, train.TrainingError, FloatingPointError) as exc:
        print(f"koopstab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
