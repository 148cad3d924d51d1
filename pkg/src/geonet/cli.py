"""Command-line entry point: ``geonet <command> [options]``.

Commands: train, sparsify, continual, connect, eval-linear, oracle-check.
Every run writes its resolved ``config.txt`` and a ``manifest.txt`` (library
version, global seed, command) into ``--out`` next to its CSVs and checkpoint.

Exit codes: 0 success, 1 runtime failure, 2 usage error.

``--data`` takes an MNIST IDX directory or ``synthetic:<gaussians|spirals>[:classes]``;
when omitted, the directory named by $GEONET_DATA is used.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .applications import (SparseTarget, UnitTarget, connect_modes, continual, geodesic_epochs,
                           linear_path_eval, sparsify)
from .data import DATA_ENV, TaskDataset, load_mnist, make_permuted_task, make_synthetic
from .geodesic import GeoConfig
from .io import load_checkpoint, save_checkpoint, write_config, write_table_csv, write_trace_csv
from .metric import path_energy
from .nn import ArchSpec, TrainOptions, TrainingDiverged, loss_and_accuracy, sgd_train

log = logging.getLogger("geonet")


class UsageError(Exception):
    pass


# -- argument groups ---------------------------------------------------------------

def _add_data(p):
    p.add_argument("--data", default=None,
                   help=f"MNIST directory or synthetic:<kind>[:classes] (default ${DATA_ENV})")
    p.add_argument("--n-train", type=int, default=10_000, help="training rows, 0 = all")
    p.add_argument("--n-test", type=int, default=2_000, help="test rows, 0 = all")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--permute", type=int, default=0, help="pixel permutation seed (0 = none)")


def _add_train(p, epochs=10):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=64)


def _add_geo(p, max_steps=1000):
    d = GeoConfig()
    p.add_argument("--beta", type=float, default=d.beta)
    p.add_argument("--eta", type=float, default=d.eta)
    p.add_argument("--radius-sq", type=float, default=d.radius_sq)
    p.add_argument("--max-steps", type=int, default=max_steps)
    p.add_argument("--metric-batch", type=int, default=d.metric_batch)
    p.add_argument("--osc-window", type=int, default=d.osc_window)
    p.add_argument("--osc-tol", type=float, default=d.osc_tol)
    p.add_argument("--arrive-tol", type=float, default=None)
    p.add_argument("--frozen-metric", action="store_true")
    p.add_argument("--output-mode", choices=("logits", "softmax"), default=d.output_mode)
    p.add_argument("--cg-max-iter", type=int, default=d.cg_max_iter)
    p.add_argument("--keep-every", type=int, default=10,
                   help="checkpoint stride kept for path-energy evaluation")
    p.add_argument("--energy-rows", type=int, default=256,
                   help="test rows used to evaluate path energy")


def _add_common(p):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="global seed")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geonet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"geonet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network with SGD")
    p.add_argument("--arch", default="784-300-100-10")
    p.add_argument("--hidden", choices=("relu", "tanh"), default="relu")
    _add_data(p)
    _add_train(p)
    _add_common(p)

    p = sub.add_parser("sparsify", help="walk a trained network into a sparse set")
    p.add_argument("--from", dest="from_", required=True, help="GEOW checkpoint to sparsify")
    p.add_argument("--p", type=float, default=None, help="percent of weights set to zero")
    p.add_argument("--units", default=None, metavar="LAYER:N",
                   help="structured target: remove N units of hidden LAYER (0-based)")
    p.add_argument("--ns", type=int, default=25, help="steps between re-projections")
    p.add_argument("--accuracy-floor", type=float, default=None)
    p.add_argument("--seeds", default=None, help="comma-separated seeds for multi-path runs")
    _add_data(p)
    _add_geo(p, max_steps=2000)
    _add_common(p)

    p = sub.add_parser("continual", help="learn permuted tasks one after another")
    p.add_argument("--arch", default="784-100-10")
    p.add_argument("--hidden", choices=("relu", "tanh"), default="relu")
    p.add_argument("--tasks", type=int, default=2)
    p.add_argument("--max-task-drop", type=float, default=None,
                   help="stop each walk once the new task's training accuracy drops this much")
    _add_data(p)
    _add_train(p, epochs=10)
    _add_geo(p)
    _add_common(p)

    p = sub.add_parser("connect", help="walk from one trained network to another")
    p.add_argument("--from", dest="from_", required=True)
    p.add_argument("--to", required=True)
    p.add_argument("--seeds", default=None)
    _add_data(p)
    _add_geo(p)
    _add_common(p)

    p = sub.add_parser("eval-linear", help="accuracy along the straight segment between two networks")
    p.add_argument("--from", dest="from_", required=True)
    p.add_argument("--to", required=True)
    p.add_argument("--points", type=int, default=25)
    _add_data(p)
    _add_common(p)

    p = sub.add_parser("oracle-check", help="run the dense-oracle self checks")
    p.add_argument("--level", choices=("quick", "all"), default="all")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


# -- helpers -----------------------------------------------------------------------------

def load_data(args) -> TaskDataset:
    spec = args.data
    if spec is not None and spec.startswith("synthetic:"):
        parts = spec.split(":")
        classes = int(parts[2]) if len(parts) > 2 else 3
        n = max(1, (args.n_train + args.n_test) // classes)
        ds = make_synthetic(parts[1], n, classes, seed=args.data_seed)
    else:
        ds = load_mnist(spec, n_train=args.n_train or None, n_test=args.n_test or None,
                        seed=args.data_seed)
    if args.permute:
        ds = make_permuted_task(ds, args.permute)
    return ds


def geo_config(args, seed=None) -> GeoConfig:
    return GeoConfig(beta=args.beta, eta=args.eta, radius_sq=args.radius_sq,
                     max_steps=args.max_steps, metric_batch=args.metric_batch,
                     osc_window=args.osc_window, osc_tol=args.osc_tol, arrive_tol=args.arrive_tol,
                     seed=args.seed if seed is None else seed, frozen_metric=args.frozen_metric,
                     output_mode=args.output_mode, cg_max_iter=args.cg_max_iter,
                     keep_every=args.keep_every)


def train_options(args, seed=None) -> TrainOptions:
    return TrainOptions(lr=args.lr, momentum=args.momentum, epochs=args.epochs,
                        batch_size=args.batch_size, seed=args.seed if seed is None else seed)


def prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = {k.rstrip("_"): v for k, v in sorted(vars(args).items())
                if k not in ("out", "verbose")}
    write_config(out / "config.txt", resolved)
    write_config(out / "manifest.txt", {"version": __version__, "seed": args.seed,
                                        "command": args.command})
    return out


def parse_seeds(text):
    if text is None:
        return None
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


def energy_of(arch, trace, ds, rows):
    X = ds.test.inputs[:rows]
    return path_energy(arch, trace.checkpoints, X) if len(trace.checkpoints) > 1 else 0.0


def run_multi_seed(out: Path, seeds, arch, ds, rows, one_run):
    """Run ``one_run(seed, subdir)`` per seed and record per-path energies."""
    rows_out, best = [], None
    for s in seeds:
        sub = out / f"seed_{s}"
        sub.mkdir(exist_ok=True)
        trace = one_run(s, sub)
        e = energy_of(arch, trace, ds, rows)
        rows_out.append([s, e, trace.n_steps, trace.records[-1]["accuracy"], trace.stop_reason])
        if best is None or e < best[1]:
            best = (s, e)
    table = [r + [int(r[0] == best[0])] for r in rows_out]
    write_table_csv(out / "paths.csv", ["seed", "path_energy", "steps", "final_accuracy",
                                        "stop_reason", "selected"], table)
    for r in table:
        print(f"seed {r[0]}: energy {r[1]:.6g}  steps {r[2]}  acc {r[3]:.4f}"
              + ("  <- shortest" if r[-1] else ""))
    return best


# -- commands -----------------------------------------------------------------------------

def cmd_train(args) -> int:
    arch = ArchSpec.parse(args.arch, hidden=args.hidden)
    ds = load_data(args)
    out = prepare_out(args)
    rows = []

    def on_epoch(epoch, w, train_loss):
        loss, acc = loss_and_accuracy(arch, w, ds.test)
        rows.append([epoch, train_loss, loss, acc])
        log.info("epoch %d train loss %.4f test acc %.4f", epoch, train_loss, acc)

    w = sgd_train(arch, ds.train, train_options(args), on_epoch=on_epoch)
    write_table_csv(out / "metrics.csv", ["epoch", "train_loss", "test_loss", "test_accuracy"], rows)
    save_checkpoint(out / "final.geow", arch, w)
    print(f"test accuracy {rows[-1][3]:.4f}" if rows else "no epochs run")
    return 0


def parse_units(text, arch):
    try:
        layer, n = (int(s) for s in text.split(":"))
    except ValueError:
        raise UsageError(f"--units expects LAYER:N, got {text!r}") from None
    return layer, n


def cmd_sparsify(args) -> int:
    if (args.p is None) == (args.units is None):
        raise UsageError("sparsify needs exactly one of --p or --units")
    arch, w_t = load_checkpoint(args.from_)
    ds = load_data(args)
    seeds = parse_seeds(args.seeds)
    out = prepare_out(args)
    if args.p is not None:
        target = SparseTarget(args.p, args.ns)
    else:
        layer, n = parse_units(args.units, arch)
        target = UnitTarget(arch, layer, n, args.ns)

    def one_run(seed, where):
        trace = sparsify(arch, w_t, ds, target, geo_config(args, seed),
                         accuracy_floor=args.accuracy_floor)
        write_trace_csv(trace, where / "trace.csv")
        save_checkpoint(where / "final.geow", arch, trace.final)
        r = trace.records[-1]
        print(f"{target.describe()}: {trace.stop_reason} after {trace.n_steps} steps, "
              f"accuracy {r['accuracy']:.4f}, sparsity {r['sparsity']:.4f}, "
              f"geodesic epochs {geodesic_epochs(trace, len(ds.train)):.2f}")
        return trace

    if seeds is None:
        one_run(args.seed, out)
    else:
        run_multi_seed(out, seeds, arch, ds, args.energy_rows, one_run)
    return 0


def cmd_continual(args) -> int:
    if args.tasks < 1:
        raise UsageError("--tasks must be >= 1")
    arch = ArchSpec.parse(args.arch, hidden=args.hidden)
    base = load_data(args)
    # task 1 is the unpermuted set, task i uses permutation seed i-1
    tasks = [base] + [make_permuted_task(base, s) for s in range(1, args.tasks)]
    out = prepare_out(args)

    def on_stage(i, trace):
        write_trace_csv(trace, out / f"trace_stage{i + 1}.csv")

    res = continual(arch, tasks, geo_config(args), train_options(args), on_stage=on_stage,
                    max_task_drop=args.max_task_drop)
    header = ["stage"] + [f"acc_task_{j + 1}" for j in range(len(tasks))] + ["mean_seen"]
    rows = [[i + 1, *accs, float(np.mean(accs[:i + 1]))]
            for i, accs in enumerate(res.stage_accuracies)]
    write_table_csv(out / "stage_accuracies.csv", header, rows)
    write_table_csv(out / "single_task.csv", ["task", "accuracy"],
                    [[j + 1, a] for j, a in enumerate(res.single_task)])
    save_checkpoint(out / "final.geow", arch, res.w_final)
    final = res.stage_accuracies[-1]
    print("final accuracies " + " ".join(f"{a:.4f}" for a in final) + f"  mean {np.mean(final):.4f}")
    return 0


def _load_pair(args):
    arch, w_1 = load_checkpoint(args.from_)
    _, w_2 = load_checkpoint(args.to, expect=arch)
    return arch, w_1, w_2


def cmd_connect(args) -> int:
    arch, w_1, w_2 = _load_pair(args)
    ds = load_data(args)
    seeds = parse_seeds(args.seeds)
    out = prepare_out(args)

    def one_run(seed, where):
        trace = connect_modes(arch, w_1, w_2, ds, geo_config(args, seed))
        write_trace_csv(trace, where / "trace.csv")
        save_checkpoint(where / "final.geow", arch, trace.final)
        acc = trace.column("accuracy")
        print(f"{trace.stop_reason} after {trace.n_steps} steps, min accuracy {acc.min():.4f}, "
              f"final distance {trace.records[-1]['dist_to_target']:.4g}")
        return trace

    if seeds is None:
        one_run(args.seed, out)
    else:
        run_multi_seed(out, seeds, arch, ds, args.energy_rows, one_run)
    return 0


def cmd_eval_linear(args) -> int:
    arch, w_1, w_2 = _load_pair(args)
    ds = load_data(args)
    out = prepare_out(args)
    trace = linear_path_eval(arch, w_1, w_2, ds, n_points=args.points)
    write_trace_csv(trace, out / "trace.csv")
    acc = trace.column("accuracy")
    print(f"linear path: min accuracy {acc.min():.4f}, best {acc.max():.4f}")
    return 0


def cmd_oracle_check(args) -> int:
    from .checks import run_checks
    results = run_checks(args.level)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {"train": cmd_train, "sparsify": cmd_sparsify, "continual": cmd_continual,
            "connect": cmd_connect, "eval-linear": cmd_eval_linear,
            "oracle-check": cmd_oracle_check}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"geonet: error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, TrainingDiverged, RuntimeError) as e:
        print(f"geonet {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())
