"""Command line entry point: ``geovmc {train,pretrain,evaluate,scan,check}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from geovmc.runner.config import THREADS_ENV

log = logging.getLogger("geovmc")

HARTREE_IN_EV = 27.211386245988


def _limit_threads() -> None:
    # must run before numpy/jax spin up their thread pools
    n = os.environ.get(THREADS_ENV)
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, n)
    flags = os.environ.get("XLA_FLAGS", "")
    if "intra_op_parallelism_threads" not in flags:
        os.environ["XLA_FLAGS"] = (
            f"{flags} --xla_cpu_multi_thread_eigen=false intra_op_parallelism_threads={n}"
        ).strip()


def _paths(cfg, config_path):
    out = Path(cfg.output.directory)
    if not out.is_absolute() and config_path is not None:
        out = Path(config_path).parent / out
    return out / "energy_log.csv", out / "checkpoint.pkl"


def cmd_train(args) -> int:
    from geovmc.runner.checkpoint import load_trainer
    from geovmc.runner.config import load_config
    from geovmc.runner.trainer import EnergyLog, Trainer

    if args.resume:
        # the log lives next to the checkpoint and is appended to
        ckpt = Path(args.resume)
        log_path = ckpt.parent / "energy_log.csv"
        trainer = load_trainer(ckpt)
        trainer.energy_log = EnergyLog(log_path)
    else:
        cfg = load_config(args.config)
        log_path, ckpt = _paths(cfg, args.config)
        trainer = Trainer(cfg, log_path=log_path)
    cfg = trainer.cfg
    log.info("model has %d parameters, %d geometries, %d walkers each", trainer.n_params, trainer.n_geom, trainer.batch)
    if cfg.pretraining.enabled:
        trainer.pretrain(callback=_progress("pretrain", 100))
    trainer.train(checkpoint_path=ckpt, callback=_train_progress(cfg.output.log_every))
    log.info("finished at step %d; checkpoint %s, log %s", trainer.state.step, ckpt, log_path)
    return 0


def _progress(label, every):
    def cb(step, loss):
        if step % every == 0:
            log.info("%s step %d loss %.3e", label, step, loss)

    return cb


def _train_progress(every):
    def cb(records):
        if records[0].step % max(every, 1) == 0:
            mean_e = sum(r.energy for r in records) / len(records)
            log.info("step %d mean energy %.6f Ha (%.2f s)", records[0].step, mean_e, records[0].seconds)

    return cb


def cmd_pretrain(args) -> int:
    from geovmc.runner.checkpoint import save_checkpoint
    from geovmc.runner.config import load_config
    from geovmc.runner.trainer import Trainer

    cfg = load_config(args.config)
    _, ckpt = _paths(cfg, args.config)
    trainer = Trainer(cfg)
    losses = trainer.pretrain(callback=_progress("pretrain", 100))
    save_checkpoint(trainer, ckpt)
    if losses:
        log.info("pretraining loss %.3e -> %.3e; checkpoint %s", losses[0], losses[-1], ckpt)
    return 0


def _report(label, stats, units):
    scale, unit = (HARTREE_IN_EV, "eV") if units == "ev" else (1.0, "Ha")
    print(
        f"{label}: E = {stats.mean * scale:.6f} +- {stats.std_error * scale:.6f} {unit}, "
        f"Var[E_L] = {stats.variance * scale * scale:.3e} {unit}^2, n = {stats.n_samples}"
    )


def cmd_evaluate(args) -> int:
    from geovmc.runner.checkpoint import load_trainer
    from geovmc.runner.evaluate import evaluate_from_trainer, parse_geometry

    trainer = load_trainer(args.ckpt)
    label, config = parse_geometry(args.geometry, trainer.cfg)
    stats = evaluate_from_trainer(trainer, config, args.samples)
    _report(label, stats, args.units)
    return 0


def cmd_scan(args) -> int:
    from geovmc.runner.checkpoint import load_trainer
    from geovmc.runner.evaluate import parse_grid, scan

    trainer = load_trainer(args.ckpt)
    points = scan(trainer, parse_grid(args.grid), args.out, args.samples)
    failed = [p for p in points if p.stats is None]
    for p in points:
        if p.stats is not None:
            _report(f"{p.param:g}", p.stats, args.units)
        else:
            print(f"{p.param:g}: FAILED ({p.error})")
    print(f"wrote {args.out}")
    return 1 if failed else 0


def cmd_check(args) -> int:
    from geovmc.runner import checks
    from geovmc.runner.config import load_config

    seed = 0
    if args.config:
        seed = load_config(args.config).seed
    results = checks.run_all(quick=not args.full, seed=seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geovmc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="pretrain (if enabled) and run VMC")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="run config (YAML or JSON)")
    src.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint")
    t.set_defaults(func=cmd_train)

    pt = sub.add_parser("pretrain", help="orbital pretraining only; writes a checkpoint")
    pt.add_argument("--config", required=True)
    pt.set_defaults(func=cmd_pretrain)

    e = sub.add_parser("evaluate", help="energy of a trained model at one geometry")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--geometry", required=True, help="geometry file, or template parameters like 1.4")
    e.add_argument("--samples", type=int, default=None)
    e.add_argument("--units", choices=("hartree", "ev"), default="hartree")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("scan", help="evaluate along a grid of template parameters")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--grid", required=True, help="start:stop:num or a comma-separated list")
    s.add_argument("--out", required=True, help="CSV output path")
    s.add_argument("--samples", type=int, default=None)
    s.add_argument("--units", choices=("hartree", "ev"), default="hartree")
    s.set_defaults(func=cmd_scan)

    c = sub.add_parser("check", help="run the invariant self-checks")
    c.add_argument("--config", default=None, help="take the seed from this run config")
    c.add_argument("--full", action="store_true", help="full case counts (slow)")
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    _limit_threads()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    from geovmc.errors import GeoVMCError

    try:
        return args.func(args)
    except GeoVMCError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
