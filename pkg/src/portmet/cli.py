"""Command-line pipeline: generate, train, eval, audit.

Every subcommand reads the same JSON config (all keys optional, strict
schema) and accepts `--set key=value` overrides. Outputs are bit-identical
across reruns with the same root seed. The PORTMET_WORKERS environment
variable caps rollout parallelism during evaluation.

Exit codes: 0 success, 1 usage/config/data errors, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .dataio import load_dataset, save_dataset
from .errors import ChecksumError, ConfigError, InvalidInputError, NumericError
from .evaluate import (GROUP_ORDER, evaluate_model, persistence_stats, physics_audit,
                       thermo_audit, write_stats_table)
from .oracle import ICSpec, OracleModel
from .ports import load_port_model, save_port_model
from .state import PendulumParams, split_dataset
from .training import DivergenceError, TrainerState, train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 3


def _workers() -> int:
    raw = os.environ.get("PORTMET_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _dataset_audit(ds) -> tuple[float, float]:
    """(max relative energy drift, min entropy increment) over stored trajectories."""
    params = PendulumParams.from_dict(ds.metadata["params"])
    drift, min_ds = 0.0, np.inf
    for traj in ds.trajectories:
        pa = physics_audit(params, traj.states)
        drift = max(drift, pa.max_rel_energy_drift)
        min_ds = min(min_ds, pa.min_entropy_increment)
    return drift, float(min_ds)


def cmd_generate(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set or [])
    if args.n_sims is not None:
        cfg = cfgmod.apply_override(cfg, f"dataset.n_sims={args.n_sims}")
    if args.seed is not None:
        cfg = cfgmod.apply_override(cfg, f"seed={args.seed}")
    out_dir = Path(args.out or cfg["dataset"]["dir"])
    oracle = OracleModel(params=cfgmod.oracle_params(cfg), substeps=cfg["oracle"]["substeps"])
    d = cfg["dataset"]
    ds = oracle.generate_dataset(n_sims=d["n_sims"], seed=cfgmod.dataset_seed(cfg),
                                 ic=cfgmod.ic_spec(cfg), n_steps=d["n_steps"], dt=d["dt"])
    ds = split_dataset(ds, d["train_fraction"], seed=cfgmod.split_seed(cfg))
    save_dataset(ds, out_dir)
    drift, min_ds = _dataset_audit(ds)
    n_train = len(ds.indices("train"))
    print(f"wrote {len(ds.trajectories)} trajectories x {len(ds.trajectories[0])} states to {out_dir}")
    print(f"split: {n_train} train / {len(ds.trajectories) - n_train} test")
    print(f"audit: max rel energy drift {drift:.3e}, min entropy increment {min_ds:.3e}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set or [])
    ds = load_dataset(args.dataset or cfg["dataset"]["dir"])
    out_dir = Path(args.out or cfg["train"]["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    state_path = out_dir / "state.json"
    resume = None
    if args.resume:
        if not state_path.is_file():
            raise InvalidInputError(f"--resume given but no trainer state at {state_path}")
        resume = TrainerState.load(state_path)
        print(f"resuming from epoch {resume.epoch}")
    tcfg = cfgmod.train_config(cfg)
    try:
        model, report, state = train(ds, tcfg, bulk_cfg=cfgmod.bulk_net_config(cfg),
                                      boun_hidden=cfgmod.boundary_hidden(cfg),
                                      resume=resume, log_every=args.log_every)
    except DivergenceError as exc:
        exc.report.save_csv(out_dir / "report.csv")
        exc.report.save_json(out_dir / "summary.json")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    save_port_model(model, out_dir / "model")
    report.save_csv(out_dir / "report.csv")
    report.save_json(out_dir / "summary.json")
    state.save(state_path)
    print(f"trained {report.epochs[-1]} epochs ({report.stopped}), best epoch {report.best_epoch}")
    print(f"final test: data {report.test_data[-1]:.3e}, deg {report.test_deg[-1]:.3e}")
    print(f"checkpoint: {out_dir / 'model'}")
    return EXIT_OK


def _check_dims(model, ds, cfg):
    model_dim = 2 * model.bulk_cfg.state_dim
    data_dim = ds.trajectories[0].states.shape[1]
    if model_dim != data_dim:
        raise InvalidInputError(
            f"dimension mismatch: checkpoint expects {model_dim}-dim system states, "
            f"dataset provides {data_dim}-dim")
    cfg_bulk = tuple(cfg["nets"]["bulk_hidden"])
    if tuple(model.bulk_cfg.hidden) != cfg_bulk:
        print(f"note: checkpoint bulk hidden {list(model.bulk_cfg.hidden)} "
              f"differs from config {list(cfg_bulk)}; checkpoint wins")
    cfg_boun = tuple(cfg["nets"]["boundary_hidden"])
    if tuple(model.boun_hidden) != cfg_boun:
        print(f"note: checkpoint boundary hidden {list(model.boun_hidden)} "
              f"differs from config {list(cfg_boun)}; checkpoint wins")


def _print_stats(tag: str, stats):
    print(f"[{tag}] group lw lq med uq uw")
    for g in GROUP_ORDER:
        s = stats[g]
        print(f"[{tag}] {g} {s.lw:.3e} {s.lq:.3e} {s.med:.3e} {s.uq:.3e} {s.uw:.3e}")


def cmd_eval(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set or [])
    model = load_port_model(args.checkpoint)
    ds = load_dataset(args.dataset or cfg["dataset"]["dir"])
    _check_dims(model, ds, cfg)
    out_dir = Path(args.out or cfg["eval"]["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    report = evaluate_model(model, ds, splits=("train", "test"),
                            rollout_steps=cfg["eval"]["rollout_steps"], workers=_workers())
    for tag, rep in report.splits.items():
        write_stats_table(rep.stats, out_dir / f"eval_{tag}.txt")
        _print_stats(tag, rep.stats)
        print(f"[{tag}] audit: max bulk energy rate {rep.audit.max_bulk_energy_rate:.3e}, "
              f"min entropy rate {rep.audit.min_entropy_rate:.3e} "
              f"({rep.audit.entropy_rate_violations} violations), "
              f"mean deg residual {rep.audit.mean_deg_residual:.3e}")
        if rep.n_truncated:
            print(f"[{tag}] warning: {rep.n_truncated}/{rep.n_rollouts} rollouts truncated")
    report.save_json(out_dir / "eval.json")
    if cfg["eval"]["per_snapshot_csv"]:
        _write_per_snapshot(model, ds, cfg, out_dir)
    print(f"reports: {out_dir}")
    return EXIT_OK


def _write_per_snapshot(model, ds, cfg, out_dir: Path):
    from .evaluate import group_errors, rollout
    rows = []
    n_cfg = cfg["eval"]["rollout_steps"]
    for tag in ("train", "test"):
        for i in ds.indices(tag):
            truth = ds.trajectories[i]
            n = len(truth) - 1 if n_cfg is None else min(n_cfg, len(truth) - 1)
            ro = rollout(model, truth.states[0], n, truth.dt)
            if len(ro) < 2:
                continue
            errs = group_errors(ro.states, truth.states)
            for t in range(len(errs["q"])):
                rows.append((tag, i, t + 1, errs["q"][t], errs["p"][t], errs["s"][t]))
    with open(out_dir / "per_snapshot.csv", "w") as fh:
        fh.write("split,traj,t,q_err,p_err,s_err\n")
        for tag, i, t, eq, ep, es in rows:
            fh.write(f"{tag},{i},{t},{eq:.10e},{ep:.10e},{es:.10e}\n")


def cmd_audit(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set or [])
    ds = load_dataset(args.dataset or cfg["dataset"]["dir"])
    out = {}
    drift, min_ds = _dataset_audit(ds)
    out["dataset"] = {"max_rel_energy_drift": drift, "min_entropy_increment": min_ds,
                      "n_trajectories": len(ds.trajectories)}
    print(f"dataset audit: max rel energy drift {drift:.3e}, min entropy increment {min_ds:.3e}")
    if args.checkpoint:
        model = load_port_model(args.checkpoint)
        _check_dims(model, ds, cfg)
        report = evaluate_model(model, ds, splits=("test",),
                                rollout_steps=cfg["eval"]["rollout_steps"], workers=_workers())
        rep = report.splits["test"]
        out["model_test"] = rep.to_dict()
        print(f"model audit (test rollouts): max bulk energy rate {rep.audit.max_bulk_energy_rate:.3e}, "
              f"min entropy rate {rep.audit.min_entropy_rate:.3e}, "
              f"mean deg residual {rep.audit.mean_deg_residual:.3e}")
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"audit written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="portmet",
                                     description="thermoelastic double pendulum: data, training, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults used when omitted)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable, dotted paths)")

    g = sub.add_parser("generate", parents=[common], help="simulate the ground-truth dataset")
    g.add_argument("--out", help="dataset directory (default: config dataset.dir)")
    g.add_argument("--n-sims", type=int, help="shorthand for --set dataset.n_sims=N")
    g.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="fit a port model on a dataset")
    t.add_argument("--dataset", help="dataset directory (default: config dataset.dir)")
    t.add_argument("--out", help="run directory (default: config train.out_dir)")
    t.add_argument("--resume", action="store_true", help="continue from the run directory's trainer state")
    t.add_argument("--log-every", type=int, default=0, help="print losses every N epochs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="rollout + error statistics + audits")
    e.add_argument("--checkpoint", required=True, help="model directory written by train")
    e.add_argument("--dataset", help="dataset directory (default: config dataset.dir)")
    e.add_argument("--out", help="report directory (default: config eval.out_dir)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("audit", parents=[common], help="thermodynamic audit of a dataset or checkpoint")
    a.add_argument("--dataset", help="dataset directory (default: config dataset.dir)")
    a.add_argument("--checkpoint", help="also audit this model's test rollouts")
    a.add_argument("--out", help="write the audit as JSON here")
    a.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError, ChecksumError, NumericError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
