"""MNIST experiment recipes shared by ``scripts/`` and the acceptance suite.

Each ``run_*`` function returns a plain dict of headline numbers plus the
traces it produced, so callers can print, assert on, or serialise them.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .applications import (SparseTarget, UnitTarget, connect_modes, continual, geodesic_epochs,
                           linear_path_eval, permute_hidden_units, project_sparse,
                           prune_finetune_baseline, sparsify, task_accuracies)
from .data import TaskDataset, load_mnist, make_permuted_task
from .geodesic import GeoConfig
from .nn import ArchSpec, TrainOptions, loss_and_accuracy, sgd_train

log = logging.getLogger(__name__)

LENET = "784-300-100-10"

# settings used by the scripts and the acceptance suite; see README for the sweeps behind them
SPARSIFY_CFG = GeoConfig(max_steps=3000, keep_every=50)
STRUCTURED_CFG = GeoConfig(beta=0.05, max_steps=3000, keep_every=50)
# small beta and a larger metric sample keep the walk closer to function-preserving directions
CONTINUAL_CFG = GeoConfig(beta=0.05, metric_batch=512, cg_max_iter=30, max_steps=1000)
CONTINUAL_TASK_DROP = 0.10
MODES_CFG = GeoConfig(beta=0.05, metric_batch=512, cg_max_iter=30, max_steps=3000, keep_every=50)


@dataclass
class MnistSetup:
    path: Optional[str] = None
    n_train: int = 10_000
    n_test: int = 2_000
    data_seed: int = 0
    train: TrainOptions = field(default_factory=lambda: TrainOptions(epochs=20))

    def load(self) -> TaskDataset:
        return load_mnist(self.path, self.n_train, self.n_test, self.data_seed)


def dense_reference(ds: TaskDataset, opts: TrainOptions, arch: str = LENET):
    a = ArchSpec.parse(arch)
    w = sgd_train(a, ds.train, opts)
    return a, w, loss_and_accuracy(a, w, ds.test)[1]


# -- sparsification --------------------------------------------------------------------

def run_sparsify(ds, arch, w, p: float = 90.0, cfg: Optional[GeoConfig] = None, ns: int = 25) -> dict:
    cfg = cfg or SPARSIFY_CFG
    t0 = time.perf_counter()
    tr = sparsify(arch, w, ds, SparseTarget(p, ns), cfg)
    acc = tr.column("accuracy")
    return {"trace": tr, "final_accuracy": float(acc[-1]), "min_accuracy": float(acc.min()),
            "sparsity": float(tr.records[-1]["sparsity"]), "steps": tr.n_steps,
            "stop_reason": tr.stop_reason, "forced_snap": tr.forced_snap,
            "one_shot_accuracy": loss_and_accuracy(arch, project_sparse(w, p), ds.test)[1],
            "seconds": time.perf_counter() - t0}


def run_structured(ds, arch, w, layer: int = 0, n_remove: int = 250,
                   cfg: Optional[GeoConfig] = None, ns: int = 25,
                   retrain_epochs: int = 1, n_stages: Optional[int] = None,
                   train_opts: Optional[TrainOptions] = None) -> dict:
    """Unit removal by geodesic walk vs iterative prune-finetune.

    Epoch accounting: a baseline epoch is one SGD pass over the training
    split; the walk is charged the rows its metric products drew divided by
    the training-set size (``data_epochs``).  ``compute_epochs`` additionally
    counts every Lanczos product as a pass over its metric sample.
    """
    target = UnitTarget(arch, layer, n_remove, ns)
    cfg = cfg or STRUCTURED_CFG
    t0 = time.perf_counter()
    base = prune_finetune_baseline(arch, w, ds, target, train_opts or TrainOptions(),
                                   retrain_epochs=retrain_epochs, n_stages=n_stages)
    t1 = time.perf_counter()
    tr = sparsify(arch, w, ds, target, cfg)
    t2 = time.perf_counter()
    n = len(ds.train)
    return {"trace": tr, "baseline": base,
            "geo_accuracy": float(tr.records[-1]["accuracy"]),
            "geo_min_accuracy": float(tr.column("accuracy").min()),
            "baseline_accuracy": float(base.records[-1]["accuracy"]),
            "one_shot_accuracy": loss_and_accuracy(arch, target.project(w), ds.test)[1],
            "geo_data_epochs": geodesic_epochs(tr, n),
            "geo_compute_epochs": tr.metric_matvecs * cfg.metric_batch / n,
            "baseline_epochs": base.total_epochs, "dead_units": target.n_dead(tr.final),
            "forced_snap": tr.forced_snap, "steps": tr.n_steps,
            "seconds_baseline": t1 - t0, "seconds_geo": t2 - t1}


# -- continual learning ----------------------------------------------------------------------

def permuted_tasks(base: TaskDataset, k: int) -> list:
    """Task 1 is the unpermuted set, task i uses permutation seed i-1."""
    return [base] + [make_permuted_task(base, s) for s in range(1, k)]


def best_linear_mean(arch, w_1, w_2, tasks, n_points: int = 25):
    accs = []
    for t in np.linspace(0.0, 1.0, n_points):
        w = (1 - t) * w_1 + t * w_2
        accs.append(np.mean(task_accuracies(arch, w, tasks)))
    return float(max(accs)), accs


def run_continual(base: TaskDataset, k: int, arch: str = "784-100-10",
                  cfg: Optional[GeoConfig] = None, train_opts: Optional[TrainOptions] = None,
                  max_task_drop: Optional[float] = CONTINUAL_TASK_DROP) -> dict:
    a = ArchSpec.parse(arch)
    tasks = permuted_tasks(base, k)
    cfg = cfg or CONTINUAL_CFG
    train_opts = train_opts or TrainOptions(epochs=10)
    t0 = time.perf_counter()
    trained = [sgd_train(a, t.train, replace(train_opts, seed=train_opts.seed + i))
               for i, t in enumerate(tasks)]
    res = continual(a, tasks, cfg, train_opts, trained=trained, max_task_drop=max_task_drop)
    final = task_accuracies(a, res.w_final, tasks)
    out = {"result": res, "trained": trained, "final_accuracies": final,
           "final_mean": float(np.mean(final)), "single_task": res.single_task,
           "ceiling": float(np.mean(res.single_task)),
           "stage_accuracies": res.stage_accuracies, "best_mean": res.best_mean,
           "steps": [tr.n_steps for tr in res.traces],
           "stop_reasons": [tr.stop_reason for tr in res.traces],
           "seconds": time.perf_counter() - t0}
    if k == 2:
        out["linear_best_mean"], out["linear_means"] = best_linear_mean(a, trained[0], trained[1], tasks)
    return out


# -- mode connectivity --------------------------------------------------------------------------

def run_modes(ds: TaskDataset, arch: str = "784-100-10", seeds=(1, 2),
              cfg: Optional[GeoConfig] = None, train_opts: Optional[TrainOptions] = None,
              permuted: bool = False, n_points: int = 25) -> dict:
    """Geodesic vs straight path between two modes.

    With ``permuted`` the second mode is an exact hidden-unit permutation of
    the first (functionally identical endpoints).
    """
    a = ArchSpec.parse(arch)
    train_opts = train_opts or TrainOptions(epochs=10)
    cfg = cfg or MODES_CFG
    w_1 = sgd_train(a, ds.train, replace(train_opts, seed=seeds[0]))
    w_2 = (permute_hidden_units(a, w_1, seeds[1]) if permuted
           else sgd_train(a, ds.train, replace(train_opts, seed=seeds[1])))
    t0 = time.perf_counter()
    tr = connect_modes(a, w_1, w_2, ds, cfg)
    lin = linear_path_eval(a, w_1, w_2, ds, n_points=n_points)
    gacc, lacc = tr.column("accuracy"), lin.column("accuracy")
    final_gap = float(tr.records[-1]["dist_to_target"])
    # stitch the remaining straight piece when the walk stopped short of w_2
    stitch_min = 1.0
    if final_gap > 0:
        stitch = linear_path_eval(a, tr.final, w_2, ds, n_points=max(2, int(np.ceil(final_gap / cfg.eta)) + 1))
        stitch_min = float(stitch.column("accuracy").min())
    return {"trace": tr, "linear": lin, "geo_min": float(gacc.min()),
            "geo_min_with_stitch": float(min(gacc.min(), stitch_min)),
            "linear_min": float(lacc.min()), "endpoint_accuracies": (float(lacc[0]), float(lacc[-1])),
            "stop_reason": tr.stop_reason, "steps": tr.n_steps, "final_gap": final_gap,
            "distance": float(np.linalg.norm(w_2 - w_1)), "seconds": time.perf_counter() - t0}
