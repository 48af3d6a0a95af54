"""Command-line entry point.

Subcommands: gen, train, eval, ablate, theory, plot.  Diagnostics go to
stderr; machine-readable results go to files.  Every run writes a
run_manifest.json with the resolved configuration, seed and code version,
sufficient to reproduce the run.  Exit codes: 0 success, 1 validation
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, PgodeError
from .evalkit import (
    TheoryConfig,
    emit_plots,
    lyapunov_harness,
    mse_report,
    run_ablations,
    uniqueness_check,
    write_report_json,
)
from .model import make_batch
from .objectives import VARIANT_FLAGS
from .odecore import prototype_field
from .simkit import SPLITS, SplitSpec, build_dataset, default_split_spec, load_split
from .trainer import TrainConfig, load_model, train


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _workers_default() -> int:
    env = os.environ.get("PGODE_WORKERS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"PGODE_WORKERS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _write_manifest(out_dir, command: str, argv: list[str], config: dict,
                    seed, workers=None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "argv": list(argv),
        "resolved_config": config,
        "seed": seed,
        "workers": workers,
        "code_version": __version__,
    }
    write_report_json(out_dir / "run_manifest.json", payload)


def build_parser() -> _Parser:
    parser = _Parser(prog="pgode", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a trajectory dataset")
    p.add_argument("--system", required=True, choices=["springs", "charged"])
    p.add_argument("--spec", help="SplitSpec JSON file (defaults to the standard boxes)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="TrainConfig JSON file")
    p.add_argument("--data", help="dataset directory (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--condition", type=int)
    p.add_argument("--prediction", type=int)
    p.add_argument("--variant", choices=sorted(VARIANT_FLAGS), default=None)

    p = sub.add_parser("eval", help="compute test MSE for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lengths", default="12,24,36")
    p.add_argument("--splits", default="test_id,test_ood")

    p = sub.add_parser("ablate", help="train and compare model variants")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--variants",
                   default="full,no-object-context,no-system-context,"
                           "single-prototype,no-disentangle")
    p.add_argument("--out", required=True)

    p = sub.add_parser("theory", help="run the robustness and convergence harnesses")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--objects", type=int, default=5)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--proto-scale", type=float, default=1.0)
    p.add_argument("--single-scale", type=float, default=2.0)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("plot", help="emit SVG + CSV for one sample")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test_id", choices=list(SPLITS))
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--checkpoint", help="model checkpoint; without it the "
                                        "ground-truth continuation is plotted")
    p.add_argument("--condition", type=int, default=12)
    p.add_argument("--prediction", type=int, default=12)
    p.add_argument("--out", required=True)
    return parser


# --------------------------------------------------------------------------
# subcommand bodies

def _cmd_gen(args, argv) -> int:
    workers = args.workers if args.workers is not None else _workers_default()
    if args.spec:
        if not Path(args.spec).exists():
            raise ConfigurationError(f"spec file not found: {args.spec}")
        spec = SplitSpec.from_json(args.spec)
    else:
        spec = default_split_spec(args.system)
    manifest = build_dataset(spec, args.system, args.out, args.seed,
                             force=args.force, workers=workers)
    _write_manifest(args.out, "gen", argv,
                    {"system": args.system, "spec": spec.to_dict(),
                     "force": args.force}, args.seed, workers)
    _log(f"wrote {sum(manifest['counts'].values())} samples to {args.out}")
    return 0


def _load_train_config(args) -> TrainConfig:
    payload: dict = {}
    if args.config:
        if not Path(args.config).exists():
            raise ConfigurationError(f"config file not found: {args.config}")
        with open(args.config, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    overrides = {
        "data_dir": args.data, "out_dir": args.out, "seed": args.seed,
        "epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size,
        "k": args.k, "d": args.d, "condition_length": args.condition,
        "prediction_length": args.prediction,
    }
    for key, val in overrides.items():
        if val is not None:
            payload[key] = val
    if args.variant is not None:
        payload["flags"] = VARIANT_FLAGS[args.variant].as_dict()
    if not payload.get("data_dir"):
        raise ConfigurationError("train needs --data or data_dir in the config")
    if not payload.get("out_dir"):
        raise ConfigurationError("train needs --out or out_dir in the config")
    return TrainConfig.from_dict(payload)


def _cmd_train(args, argv) -> int:
    cfg = _load_train_config(args)
    _write_manifest(cfg.out_dir, "train", argv, cfg.as_dict(), cfg.seed)
    result = train(cfg, log=_log)
    _log(f"best epoch {result.best_epoch} val position MSE {result.best_val_mse:.6f}")
    _log(f"checkpoints: {result.best_path} (best), {result.last_path} (last)")
    return 0


def _cmd_eval(args, argv) -> int:
    if not Path(args.checkpoint).exists():
        raise ConfigurationError(f"checkpoint not found: {args.checkpoint}")
    model, cfg, _ = load_model(args.checkpoint)
    lengths = [int(x) for x in args.lengths.split(",") if x]
    splits = [s.strip() for s in args.splits.split(",") if s.strip()]
    for s in splits:
        if s not in SPLITS:
            raise ConfigurationError(f"unknown split {s!r}")
    report = mse_report(model, args.data, cfg.condition_length, lengths, splits,
                        batch_size=cfg.eval_batch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(out / "mse_report.json", report.as_dict())
    _write_manifest(out, "eval", argv,
                    {"checkpoint": args.checkpoint, "data": args.data,
                     "lengths": lengths, "splits": splits}, cfg.seed)
    for split in splits:
        for length in lengths:
            vals = report.values[split][str(length)]
            _log(f"{split} len {length}: "
                 + " ".join(f"{k}={100 * v:.4f}e-2" for k, v in vals.items()
                            if k in ("q", "v")))
    return 0


def _cmd_ablate(args, argv) -> int:
    if not Path(args.config).exists():
        raise ConfigurationError(f"config file not found: {args.config}")
    with open(args.config, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not payload.get("data_dir") or not payload.get("out_dir"):
        payload.setdefault("out_dir", args.out)
    base_cfg = TrainConfig.from_dict(payload)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    report = run_ablations(base_cfg, variants, args.seeds, args.out, log=_log)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report_json(out / "ablation_report.json", report)
    _write_manifest(out, "ablate", argv,
                    {"base_config": base_cfg.as_dict(), "variants": variants,
                     "seeds": args.seeds}, base_cfg.seed)
    return 0


def _cmd_theory(args, argv) -> int:
    cfg = TheoryConfig(epsilon=args.epsilon, seeds=args.seeds,
                       horizon=args.horizon, k=args.k, n_objects=args.objects,
                       d=args.dim, proto_lipschitz=args.proto_scale,
                       single_lipschitz=args.single_scale)
    rng = np.random.default_rng(args.rng_seed)
    lyap = lyapunov_harness(cfg, rng)

    # convergence harness on a random gated bank reusing the same rng
    from .diffcore import Tape
    from .evalkit import _random_prototype

    tape = Tape()
    bank = [_random_prototype(tape, rng, cfg.d, cfg.proto_lipschitz)[0]
            for _ in range(cfg.k)]
    gates = tape.constant(rng.dirichlet(np.ones(cfg.k), size=cfg.n_objects))
    edges = np.ones((cfg.n_objects, cfg.n_objects)) - np.eye(cfg.n_objects)
    z0 = rng.normal(size=(cfg.n_objects, cfg.d))
    uniq = uniqueness_check(
        lambda z: prototype_field(z, edges, bank, gates), z0, horizon=cfg.horizon)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_report_json(out_path, {"lyapunov": lyap.as_dict(),
                                 "uniqueness": uniq.as_dict()})
    _write_manifest(out_path.parent, "theory", argv, vars(args), args.rng_seed)
    _log(f"perturbation verdict: {lyap.verdict} (premise met: {lyap.premise_met}); "
         f"convergence: {'PASS' if uniq.passed else 'FAIL'}")
    return 0


def _cmd_plot(args, argv) -> int:
    samples = load_split(args.data, args.split)
    if not (0 <= args.index < len(samples)):
        raise ConfigurationError(
            f"sample index {args.index} out of range for {len(samples)} samples")
    sample = samples[args.index]
    cond, pred = args.condition, args.prediction
    if args.checkpoint:
        model, cfg, _ = load_model(args.checkpoint)
        cond = cfg.condition_length
        preds = model.predict([sample], cond, pred)[0]
    else:
        preds = sample.features()[:, cond:cond + pred]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    svg = out / f"{sample.sample_id}.svg"
    csv_path = out / f"{sample.sample_id}.csv"
    emit_plots(sample, preds, cond, svg, csv_path)
    _write_manifest(out, "plot", argv,
                    {"data": args.data, "split": args.split, "index": args.index,
                     "checkpoint": args.checkpoint, "condition": cond,
                     "prediction": pred}, None)
    _log(f"wrote {svg} and {csv_path}")
    return 0


_COMMANDS = {"gen": _cmd_gen, "train": _cmd_train, "eval": _cmd_eval,
             "ablate": _cmd_ablate, "theory": _cmd_theory, "plot": _cmd_plot}


def parse_and_dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args, argv)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except ConfigurationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except PgodeError as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"i/o failure: {err}", file=sys.stderr)
        return 2


def main() -> int:
    return parse_and_dispatch(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
