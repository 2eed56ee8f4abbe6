"""Command-line front end.

    lshyper [--config FILE] [--seed N] [--out DIR] [--threads N] COMMAND ...

Commands: gen-data, fit-mle, train, train-bbvi, eval, compare.  Settings
resolve as command-line flag, then ``LHN_*`` environment variable, then the
JSON config file, then built-in defaults.  Exit codes: 0 success, 2 invalid
configuration, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("lshyper")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    exemplar: str = "relaxation"
    seed: int = 0
    out: str = "lhn-out"
    threads: int | None = None
    dataset: str | None = None  # existing dataset stem; replaces generation
    data: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    bbvi: dict = field(default_factory=dict)
    variant: str | None = None  # exemplar preset when unset
    checkpoint_every: int = 0
    eval: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dict(vars(self))
        d.pop("threads")
        d.pop("out")
        return d


_ENV = {"LHN_CONFIG": "config", "LHN_SEED": "seed", "LHN_OUT": "out", "LHN_THREADS": "threads",
        "LHN_EXEMPLAR": "exemplar", "LHN_VARIANT": "variant", "LHN_DATASET": "dataset"}


def _int(name, v):
    try:
        return int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected an integer, got {v!r}") from None


def load_config(args) -> ExperimentConfig:
    env = {attr: os.environ[k] for k, attr in _ENV.items() if k in os.environ}
    path = args.config or env.get("config")
    raw = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    for attr in ("seed", "out", "threads", "exemplar", "variant", "dataset"):
        if attr in env:
            raw[attr] = env[attr]
    for attr in ("seed", "out", "threads"):
        v = getattr(args, attr, None)
        if v is not None:
            raw[attr] = v
    cfg = ExperimentConfig(**raw)
    cfg.seed = _int("seed", cfg.seed)
    if cfg.threads is not None:
        cfg.threads = _int("threads", cfg.threads)
        if cfg.threads < 1:
            raise ConfigError("threads: must be >= 1")
    cfg.checkpoint_every = _int("checkpoint_every", cfg.checkpoint_every)
    if cfg.dataset and not Path(cfg.dataset).with_suffix(".json").exists():
        raise ConfigError(f"dataset: {cfg.dataset} does not exist")
    for name in ("data", "model", "train", "bbvi", "eval"):
        if not isinstance(getattr(cfg, name), dict):
            raise ConfigError(f"{name}: must be an object")
    return cfg


def _set_threads(n: int | None) -> None:
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _validate(fn, what: str):
    """Run a constructor, converting argument errors into ConfigError."""
    try:
        return fn()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


# ---------------------------------------------------------------- helpers


def _out(cfg) -> Path:
    return Path(cfg.out)


def _data_stem(cfg) -> Path:
    return Path(cfg.dataset) if cfg.dataset else _out(cfg) / "data"


def _load_training_data(cfg):
    from . import experiments, storage

    stem = _data_stem(cfg)
    if not stem.with_suffix(".json").exists():
        raise FileNotFoundError(f"dataset {stem} not found; run gen-data first")
    return experiments.training_view(cfg.exemplar, storage.load_dataset(stem))


def _train_config(cfg, epochs=None):
    from .experiments import train_settings
    from .trainer import TrainConfig

    d = _validate(lambda: train_settings(cfg.exemplar, cfg.train), "train")
    d.setdefault("seed", cfg.seed)
    if epochs is not None:
        d["epochs"] = epochs
    return _validate(lambda: TrainConfig(**d), "train")


def _variant(cfg, args) -> str:
    from .experiments import DEFAULT_VARIANT

    return args.variant or cfg.variant or DEFAULT_VARIANT[cfg.exemplar]


def _model(cfg, data):
    from . import experiments

    return _validate(lambda: experiments.build_model(cfg.exemplar, data, cfg.model), "model")


def _partition_meta(partition) -> dict:
    return {"n_params": partition.n_params, "stochastic": partition.stochastic_idx.tolist()}


def _summary_stats(samples) -> dict:
    from .metrics import ensemble_stats

    if samples.shape[0] < 2 or samples.shape[1] == 0:
        return {}
    return ensemble_stats(samples).to_dict()


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg, args) -> int:
    from . import experiments, storage

    _validate(lambda: experiments.data_config(cfg.exemplar, cfg.data), "data")
    data = experiments.generate(cfg.exemplar, cfg.data, cfg.seed)
    h = storage.config_hash(cfg.to_dict())
    storage.save_dataset(_out(cfg) / "data", data, {"config_hash": h, "exemplar": cfg.exemplar})
    v = data.values[..., 0]
    print(f"N_D={data.n_traj} N_t={data.n_times} config_hash={h}")
    print("time_index,time,mean,std")
    step = max(1, data.n_times // 10)
    for k in list(range(0, data.n_times, step)) + ([data.n_times - 1] if (data.n_times - 1) % step else []):
        sd = v[:, k].std(ddof=1) if data.n_traj > 1 else 0.0
        print(f"{k},{data.times[k]:.6g},{v[:, k].mean():.6g},{sd:.6g}")
    return EXIT_OK


def _fit_and_save_mle(cfg, data, model):
    from . import storage
    from .trainer import fit_mle

    tcfg = _train_config(cfg)
    w, trace = fit_mle(model, data, tcfg, return_trace=True)
    h = storage.config_hash(cfg.to_dict())
    storage.save_checkpoint(_out(cfg) / "mle", w, {"model": model.to_dict(), "seed": cfg.seed,
                                                    "config_hash": h, "final_neg_loglik": trace[-1]})
    storage.write_table(_out(cfg) / "mle_trace.csv", ["epoch", "neg_loglik"], [[i, v] for i, v in enumerate(trace)])
    return w


def cmd_fit_mle(cfg, args) -> int:
    data = _load_training_data(cfg)
    model = _model(cfg, data)
    w = _fit_and_save_mle(cfg, data, model)
    print(f"MLE with {w.size} parameters written to {_out(cfg) / 'mle'}")
    return EXIT_OK


def _load_mle(cfg, data, model, with_mle: bool):
    from . import storage

    stem = _out(cfg) / "mle"
    if stem.with_suffix(".params").exists():
        w, meta = storage.load_checkpoint(stem)
        if w.size != model.n_params:
            raise ConfigError("MLE checkpoint does not match the configured model")
        return w
    if not with_mle:
        raise FileNotFoundError(f"{stem} not found; run fit-mle or pass --with-mle")
    return _fit_and_save_mle(cfg, data, model)


def _write_train_outputs(dest: Path, cfg, model, data, report, tcfg, done: bool):
    from . import storage
    from .metrics import w1_over_time
    from .trainer import predictive

    rows = [[e, report.loss_trace[e], report.kl_trace[e], report.loglik_trace[e],
             report.w1_trace[e] if e < len(report.w1_trace) else float("nan")]
            for e in range(len(report.loss_trace))]
    storage.write_table(dest / "loss_trace.csv", ["epoch", "neg_elbo", "kl", "loglik", "w1_mean"], rows)
    if not done:
        return
    ens = report.ensemble
    storage.write_matrix(dest / "ensemble.csv", [f"w_{i}" for i in report.partition.stochastic_idx], ens)
    state = [report.w_mle, report.w_d, report.theta]
    storage.save_checkpoint(dest / "state", _concat(state), {
        "sizes": [len(s) for s in state],
        "score_spec": report.score_spec.to_dict(),
        "score_residual": report.score_residual,
        "prior_center": report.prior_center,
    })
    preds = predictive(model, report, data)
    w1 = w1_over_time(preds, data.values)
    summary = {
        "kind": "langevin",
        "exemplar": cfg.exemplar,
        "variant": report.variant,
        "partition": _partition_meta(report.partition),
        "model": model.to_dict(),
        "train": tcfg.to_dict(),
        "likelihood": report.likelihood.to_dict() if report.likelihood else None,
        "seed": cfg.seed,
        "config_hash": storage.config_hash(cfg.to_dict()),
        "times": data.times,
        "w1_per_time": w1,
        "w1_mean": float(w1[1:].mean()) if w1.size > 1 else float(w1.mean()),
        "ensemble_stats": _summary_stats(ens),
        "epochs_completed": len(report.loss_trace),
    }
    storage.write_json(dest / "report.json", summary)


def _concat(parts):
    import numpy as np

    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def cmd_train(cfg, args) -> int:
    from . import storage
    from .trainer import partition_for, train

    data = _load_training_data(cfg)
    model = _model(cfg, data)
    variant = _variant(cfg, args)
    tcfg = _train_config(cfg, args.epochs)
    partition = _validate(lambda: partition_for(variant, model), "variant")
    w_mle = _load_mle(cfg, data, model, args.with_mle)
    dest = _out(cfg) / (args.name or f"train-{variant}")
    every = args.checkpoint_every if args.checkpoint_every is not None else cfg.checkpoint_every
    latest = {}

    def callback(epoch, report):
        latest["report"] = report
        if every and (epoch + 1) % every == 0:
            storage.save_checkpoint(dest / "checkpoints" / f"epoch_{epoch + 1:06d}",
                                    _concat([report.w_d, report.theta]),
                                    {"epoch": epoch + 1, "variant": variant})

    try:
        report = train(variant, model, data, tcfg, w_mle, partition, callback=callback)
    except FloatingPointError:
        if "report" in latest:
            _write_train_outputs(dest, cfg, model, data, latest["report"], tcfg, done=False)
        raise
    _write_train_outputs(dest, cfg, model, data, report, tcfg, done=True)
    print(f"variant={variant} stochastic={partition.n_stochastic}/{partition.n_params} "
          f"epochs={len(report.loss_trace)} -> {dest}")
    stats = _summary_stats(report.ensemble)
    if stats:
        print("ensemble mean:", " ".join(f"{v:.6g}" for v in stats["mean"]))
        print("ensemble var: ", " ".join(f"{v:.6g}" for v in stats["var"]))
    return EXIT_OK


def cmd_train_bbvi(cfg, args) -> int:
    from . import storage
    from .bbvi import BbviConfig, fit_bbvi
    from .metrics import w1_over_time
    from .trainer import model_predictions, partition_for

    data = _load_training_data(cfg)
    model = _model(cfg, data)
    d = dict(cfg.bbvi)
    d.setdefault("seed", cfg.seed)
    if args.steps is not None:
        d["steps"] = args.steps
    bcfg = _validate(lambda: BbviConfig(**d), "bbvi")
    variant = _variant(cfg, args)
    partition = _validate(lambda: partition_for(variant, model), "variant")
    w_mle = _load_mle(cfg, data, model, args.with_mle)
    rep = fit_bbvi(model, data, w_mle, bcfg, partition)
    dest = _out(cfg) / (args.name or "bbvi")
    n = int(cfg.eval.get("n_samples", 500))
    samples = rep.sample(n, cfg.seed)
    storage.write_table(dest / "elbo_trace.csv", ["step", "elbo"], [[i, v] for i, v in enumerate(rep.elbo_trace)])
    storage.write_matrix(dest / "ensemble.csv", [f"w_{i}" for i in partition.stochastic_idx], samples)
    preds = model_predictions(model, rep.full_samples(min(n, 200), cfg.seed), data)
    w1 = w1_over_time(preds, data.values)
    storage.write_json(dest / "report.json", {
        "kind": "bbvi",
        "exemplar": cfg.exemplar,
        "variant": variant,
        "partition": _partition_meta(partition),
        "model": model.to_dict(),
        "bbvi": bcfg.to_dict(),
        "surrogate": rep.surrogate.to_dict(),
        "covariance": rep.surrogate.covariance(),
        "w_d": rep.w_d,
        "seed": cfg.seed,
        "config_hash": storage.config_hash(cfg.to_dict()),
        "times": data.times,
        "w1_per_time": w1,
        "w1_mean": float(w1[1:].mean()),
        "ensemble_stats": _summary_stats(samples),
    })
    s = rep.surrogate
    print(f"BBVI mean={s.mean.round(6).tolist()} sigma={s.sigma.round(6).tolist()} rho={s.rho:.4f} -> {dest}")
    return EXIT_OK


def _load_report_predictions(report_dir: Path, data):
    """Rebuild predictive trajectories ``(S, T)`` from a report directory."""
    import numpy as np

    from . import storage
    from .nets import ParamPartition, merge
    from .node import DataModel
    from .trainer import model_predictions

    rep = storage.read_json(report_dir / "report.json")
    model = DataModel.from_dict(rep["model"])
    part = ParamPartition(rep["partition"]["n_params"], np.array(rep["partition"]["stochastic"], dtype=int))
    _, ens = storage.read_matrix(report_dir / "ensemble.csv")
    if rep["kind"] == "bbvi":
        w_d = np.asarray(rep["w_d"], dtype=float)
    else:
        state, meta = storage.load_checkpoint(report_dir / "state")
        a, b, _ = meta["sizes"]
        w_d = state[a:a + b]
    params = np.asarray(merge(part, w_d, ens))
    preds = np.asarray(model_predictions(model, params, data))
    return rep, ens, preds[..., 0].reshape(-1, data.n_times)


def cmd_eval(cfg, args) -> int:
    import numpy as np

    from . import storage
    from .datagen import TrajectoryEnsemble
    from .metrics import distance_correlation_matrix, kde, w1_over_time

    report_dir = Path(args.report)
    if not (report_dir / "report.json").exists():
        raise FileNotFoundError(f"{report_dir}/report.json not found")
    rep = storage.read_json(report_dir / "report.json")
    if args.data:
        data = storage.load_dataset(args.data)
    else:
        data = _load_training_data(cfg)
    times = np.asarray(rep["times"], dtype=float)
    if times.shape != data.times.shape or not np.allclose(times, data.times, rtol=1e-12, atol=0):
        raise ConfigError("report and dataset time grids differ")
    rep, ens, preds = _load_report_predictions(report_dir, data)
    dest = Path(args.dest) if args.dest else report_dir / "eval"
    y = data.values[..., 0]
    w1 = w1_over_time(preds, y)
    storage.write_table(dest / "w1.csv", ["time_index", "time", "w1"],
                        [[k, data.times[k], w1[k]] for k in range(data.n_times)])
    n_grid = int(cfg.eval.get("kde_points", 200))
    rows = []
    idx = sorted({data.n_times // 4, data.n_times // 2, data.n_times - 1})
    for k in idx:
        both = np.concatenate([preds[:, k], y[:, k]])
        span = max(np.ptp(both), 1e-12)
        grid = np.linspace(both.min() - 0.25 * span, both.max() + 0.25 * span, n_grid)
        dp, dd = kde(preds[:, k], grid), kde(y[:, k], grid)
        rows += [[k, g, a, b] for g, a, b in zip(grid, dp, dd)]
    storage.write_table(dest / "kde.csv", ["time_index", "y", "pred_density", "data_density"], rows)
    names = [f"w_{i}" for i in rep["partition"]["stochastic"]]
    if ens.shape[1] >= 1 and ens.shape[0] >= 4:
        storage.write_matrix(dest / "dcor.csv", names, distance_correlation_matrix(ens))
        rows = []
        for i, name in enumerate(names):
            col = ens[:, i]
            span = max(np.ptp(col), 1e-12)
            grid = np.linspace(col.min() - 0.25 * span, col.max() + 0.25 * span, n_grid)
            rows += [[i, g, d] for g, d in zip(grid, kde(col, grid))]
        storage.write_table(dest / "weight_marginals.csv", ["weight", "value", "density"], rows)
    if ens.shape[1] >= 2:
        hist, xe, ye = np.histogram2d(ens[:, 0], ens[:, 1], bins=int(cfg.eval.get("joint_bins", 30)), density=True)
        xc, yc = 0.5 * (xe[1:] + xe[:-1]), 0.5 * (ye[1:] + ye[:-1])
        storage.write_table(dest / "weight_joint.csv", [names[0], names[1], "density"],
                            [[a, b, hist[i, j]] for i, a in enumerate(xc) for j, b in enumerate(yc)])
    pred_ds = TrajectoryEnsemble(data.times, preds, {"source": str(report_dir)})
    storage.save_dataset(dest / "predictions", pred_ds)
    storage.write_json(dest / "summary.json", {
        "report": str(report_dir),
        "config_hash": rep.get("config_hash"),
        "w1_mean": float(w1[1:].mean()),
        "w1_max": float(w1.max()),
        "ensemble_stats": _summary_stats(ens),
    })
    print(f"mean W1 over time = {w1[1:].mean():.6g}; tables in {dest}")
    return EXIT_OK


def cmd_compare(cfg, args) -> int:
    from . import storage
    from .metrics import RelaxationHyper, theoretical_stats

    header = ["name", "kind", "variant", "w1_mean", "mean_0", "mean_1", "var_0", "var_1", "rho_01"]
    rows = []
    for d in args.reports:
        rep = storage.read_json(Path(d) / "report.json")
        st = rep.get("ensemble_stats") or {}
        mean, var, corr = st.get("mean", []), st.get("var", []), st.get("corr", [])
        pad = lambda v, i: v[i] if len(v) > i else float("nan")  # noqa: E731
        rho = corr[0][1] if len(corr) > 1 else float("nan")
        rows.append([Path(d).name, rep["kind"], rep.get("variant", ""), rep.get("w1_mean", float("nan")),
                     pad(mean, 0), pad(mean, 1), pad(var, 0), pad(var, 1), rho])
    if cfg.exemplar == "relaxation":
        h = RelaxationHyper(*cfg.data.get("rate", (8.0, 0.8)), *cfg.data.get("level", (1.0, 0.1)))
        t = theoretical_stats(h)
        rows.append(["theory", "analytic", "", float("nan"), t["mean_W"], t["mean_b"], t["var_W"], t["var_b"], t["rho_Wb"]])
    dest = Path(args.dest) if args.dest else _out(cfg) / "comparison.csv"
    storage.write_table(dest, header, rows)
    print(",".join(header))
    for r in rows:
        print(",".join(str(v) if isinstance(v, str) else f"{v:.6g}" for v in r))
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lshyper", description="Langevin-sampling hypernetworks for NODE models.")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="BLAS/OpenMP thread count")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", help="generate a synthetic dataset")
    sub.add_parser("fit-mle", help="maximum-likelihood pretraining")
    t = sub.add_parser("train", help="train the Langevin sampler")
    t.add_argument("--variant", choices=("full", "bll-fixed", "bll-reopt"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--with-mle", action="store_true", help="fit the MLE first if no checkpoint exists")
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--name", help="report directory name under --out")
    b = sub.add_parser("train-bbvi", help="fit the Gaussian BBVI baseline")
    b.add_argument("--variant", choices=("full", "bll-fixed", "bll-reopt"))
    b.add_argument("--steps", type=int)
    b.add_argument("--with-mle", action="store_true")
    b.add_argument("--name")
    e = sub.add_parser("eval", help="metrics and plot-ready tables for a report")
    e.add_argument("--report", required=True)
    e.add_argument("--data", help="dataset stem (default: the configured training data)")
    e.add_argument("--dest")
    c = sub.add_parser("compare", help="summary table across reports")
    c.add_argument("reports", nargs="+")
    c.add_argument("--dest")
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "fit-mle": cmd_fit_mle,
    "train": cmd_train,
    "train-bbvi": cmd_train_bbvi,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        _set_threads(cfg.threads)
        from .experiments import EXEMPLARS

        if cfg.exemplar not in EXEMPLARS:
            raise ConfigError(f"exemplar: expected one of {EXEMPLARS}, got {cfg.exemplar!r}")
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
