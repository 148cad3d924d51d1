"""Drivers built on the geodesic walk: sparsification, sequential tasks, mode connection.

Each driver returns a :class:`~geonet.geodesic.PathTrace`; the baselines
(straight-line interpolation, prune-and-retrain) return the same type so their
curves can be compared row for row.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .data import TaskDataset
from .geodesic import GeoConfig, MetricSampler, PathTrace, batch_evaluator, geo
from .nn import (ArchSpec, Batch, TrainOptions, init_network, loss_and_accuracy,
                 sgd_train, sparsity)

log = logging.getLogger(__name__)


class AccuracyFloorError(ValueError):
    pass


# -- sparsity sets ---------------------------------------------------------

def _n_zeros(n: int, p: float) -> int:
    return int(math.ceil(n * p / 100.0 - 1e-9))


def project_sparse(w, p: float) -> np.ndarray:
    """Euclidean projection onto {w : at least p% of entries are zero}.

    Keeps the n - ceil(n·p/100) largest magnitudes; among equal magnitudes the
    lower index is kept.
    """
    if not 0 < p < 100:
        raise ValueError(f"sparsity percentage must lie in (0, 100), got {p}")
    w = np.asarray(w, dtype=np.float64)
    n = w.size
    keep = n - _n_zeros(n, p)
    if keep < 1:
        raise ValueError(f"p = {p} leaves no non-zero weight among {n}")
    order = np.argsort(-np.abs(w), kind="stable")
    out = np.zeros_like(w)
    out[order[:keep]] = w[order[:keep]]
    return out


def is_sparse(w, p: float) -> bool:
    w = np.asarray(w)
    return int(np.count_nonzero(w == 0.0)) >= _n_zeros(w.size, p)


def unit_blocks(arch: ArchSpec, layer: int) -> list:
    """Flat indices touching each unit of hidden layer ``layer`` (fan-in row, bias, fan-out column)."""
    if not 0 <= layer < arch.n_layers - 1:
        raise ValueError(f"layer {layer} is not a hidden layer of {arch}")
    d = arch.layer_dims
    sl = arch.slices()
    (sw_in, sb_in), (sw_out, _) = sl[layer], sl[layer + 1]
    n_in, n_units, n_next = d[layer], d[layer + 1], d[layer + 2]
    blocks = []
    for u in range(n_units):
        fan_in = sw_in.start + u * n_in + np.arange(n_in)
        fan_out = sw_out.start + np.arange(n_next) * n_units + u
        blocks.append(np.concatenate([fan_in, [sb_in.start + u], fan_out]))
    return blocks


@dataclass
class SparseTarget:
    """p% of all weights forced to zero, target re-projected every ``reproject_every`` steps."""

    p: float
    reproject_every: int = 25

    def __post_init__(self):
        if not 0 < self.p < 100:
            raise ValueError("p must lie in (0, 100)")
        if self.reproject_every < 1:
            raise ValueError("reproject_every must be >= 1")

    def project(self, w):
        return project_sparse(w, self.p)

    def contains(self, w) -> bool:
        return is_sparse(w, self.p)

    def describe(self) -> str:
        return f"sparse p={self.p}"


@dataclass
class UnitTarget:
    """Structured target: ``n_remove`` units of hidden ``layer`` with all their weights zeroed.

    Units are chosen by smallest block L2 norm.
    """

    arch: ArchSpec
    layer: int
    n_remove: int
    reproject_every: int = 25

    def __post_init__(self):
        self.blocks = unit_blocks(self.arch, self.layer)
        if not 0 < self.n_remove < len(self.blocks):
            raise ValueError("n_remove must leave at least one unit")

    def removed_units(self, w) -> np.ndarray:
        norms = np.array([np.linalg.norm(w[b]) for b in self.blocks])
        return np.argsort(norms, kind="stable")[:self.n_remove]

    def project(self, w, n_remove: Optional[int] = None):
        out = np.array(w, dtype=np.float64)
        k = self.n_remove if n_remove is None else n_remove
        norms = np.array([np.linalg.norm(out[b]) for b in self.blocks])
        for u in np.argsort(norms, kind="stable")[:k]:
            out[self.blocks[u]] = 0.0
        return out

    def n_dead(self, w) -> int:
        return sum(1 for b in self.blocks if not np.any(w[b]))

    def contains(self, w) -> bool:
        return self.n_dead(w) >= self.n_remove

    def describe(self) -> str:
        return f"units layer={self.layer} remove={self.n_remove}"


# -- Algorithm: sparsify by repeated walks toward the projection ----------------

def sparsify(arch: ArchSpec, w_t, data: TaskDataset, target: Union[SparseTarget, UnitTarget],
             cfg: GeoConfig, accuracy_floor: Optional[float] = None,
             force_final: bool = True) -> PathTrace:
    """Walk from ``w_t`` into the sparse set, re-projecting the target every n_s steps.

    ``cfg.max_steps`` bounds the total number of steps over all segments.  If
    the budget runs out before the walk arrives, the last point is projected
    onto the set (``force_final``) and the trace's ``stop_reason`` stays
    ``max_steps`` with ``forced_snap`` set to the distance jumped.
    """
    w_t = arch.check_weights(w_t)
    if accuracy_floor is not None:
        _, acc = loss_and_accuracy(arch, w_t, data.test)
        if acc < accuracy_floor:
            raise AccuracyFloorError(
                f"start network accuracy {acc:.4f} is below the floor {accuracy_floor:.4f}")

    def extra(w):
        out = {"sparsity": sparsity(w)}
        if isinstance(target, UnitTarget):
            out["dead_units"] = target.n_dead(w)
        return out

    sampler = MetricSampler(arch, data.train, cfg)
    trace = None
    w = w_t
    while True:
        used = 0 if trace is None else trace.n_steps
        if target.contains(w) or used >= cfg.max_steps:
            break
        w_a = target.project(w)
        seg = geo(arch, w, data, w_a, cfg, extra_columns=extra, sampler=sampler,
                  max_steps=min(target.reproject_every, cfg.max_steps - used))
        if trace is None:
            trace = seg
        else:
            trace.extend(seg)
        w = seg.final
        log.info("sparsify: step %d dist %.4f acc %.4f sparsity %.4f (%s)",
                 trace.n_steps, seg.records[-1]["dist_to_target"],
                 seg.records[-1]["accuracy"], seg.records[-1]["sparsity"], seg.stop_reason)
    if trace is None:
        # already inside the set
        trace = geo(arch, w, data, w, cfg, extra_columns=extra, sampler=sampler, max_steps=0)
    trace.forced_snap = 0.0
    if not target.contains(trace.final) and force_final:
        w_a = target.project(trace.final)
        jump = float(np.linalg.norm(w_a - trace.final))
        ev = batch_evaluator(arch, data.test, extra)(w_a)
        trace.records.append({"step": trace.n_steps + 1, **ev, "dist_to_target": 0.0,
                              "quad_form": math.nan, "step_norm": jump})
        trace.checkpoints.append(w_a)
        trace.checkpoint_steps.append(trace.n_steps)
        trace.forced_snap = jump
    if target.contains(trace.final) and trace.stop_reason != "max_steps":
        trace.stop_reason = "arrived"
    return trace


def prune_finetune_baseline(arch: ArchSpec, w_t, data: TaskDataset,
                            target: Union[SparseTarget, UnitTarget], opts: TrainOptions,
                            retrain_epochs: int = 1, n_stages: Optional[int] = None) -> PathTrace:
    """Iterative prune-retrain: each stage prunes a little more, then retrains on the mask.

    For a :class:`UnitTarget` the default is one unit per stage; for a
    :class:`SparseTarget` ``n_stages`` (default 10) equal steps in p.  Records
    one row per stage with the cumulative number of retraining epochs.
    """
    w = arch.check_weights(w_t).copy()
    if isinstance(target, UnitTarget):
        n_stages = target.n_remove if n_stages is None else n_stages
        schedule = [lambda w, s=s: target.project(w, int(round(target.n_remove * s / n_stages)))
                    for s in range(1, n_stages + 1)]
    else:
        n_stages = 10 if n_stages is None else n_stages
        schedule = [lambda w, s=s: project_sparse(w, target.p * s / n_stages)
                    for s in range(1, n_stages + 1)]
    trace = PathTrace()
    evaluate = batch_evaluator(arch, data.test, lambda w: {"sparsity": sparsity(w)})
    trace.records.append({"step": 0, **evaluate(w), "epochs": 0,
                          "dist_to_target": math.nan, "quad_form": math.nan, "step_norm": 0.0})
    trace.checkpoints.append(w.copy())
    trace.checkpoint_steps.append(0)
    epochs = 0
    for s, prune in enumerate(schedule, start=1):
        w_pruned = prune(w)
        jump = float(np.linalg.norm(w_pruned - w))
        # pruned entries stay pruned for the rest of the schedule
        mask = w_pruned != 0.0
        w = w_pruned
        if retrain_epochs:
            stage_opts = TrainOptions(lr=opts.lr, momentum=opts.momentum, epochs=retrain_epochs,
                                      batch_size=opts.batch_size, seed=opts.seed + s)
            w = sgd_train(arch, data.train, stage_opts, w0=w, mask=mask)
            epochs += retrain_epochs
        trace.records.append({"step": s, **evaluate(w), "epochs": epochs,
                              "dist_to_target": math.nan, "quad_form": math.nan, "step_norm": jump})
        trace.checkpoints.append(w.copy())
        trace.checkpoint_steps.append(s)
    trace.stop_reason = "max_steps"
    trace.total_epochs = epochs
    return trace


def geodesic_epochs(trace: PathTrace, n_train: int) -> float:
    """Data passes used by a walk: rows drawn for metric products over training-set size."""
    return trace.metric_samples / n_train


# -- sequential tasks ----------------------------------------------------------

def task_accuracies(arch: ArchSpec, w, tasks: Sequence[TaskDataset], split: str = "test") -> list:
    return [loss_and_accuracy(arch, w, getattr(t, split))[1] for t in tasks]


class CountingBatch:
    """Read-only view of a Batch that counts row accesses through ``inputs``."""

    def __init__(self, batch: Batch):
        self._batch = batch
        self.reads = 0

    @property
    def inputs(self):
        self.reads += 1
        return self._batch.inputs

    @property
    def labels(self):
        self.reads += 1
        return self._batch.labels

    def __len__(self):
        return len(self._batch)

    def subset(self, idx) -> Batch:
        self.reads += 1
        return self._batch.subset(idx)


@dataclass
class ContinualResult:
    w_final: np.ndarray
    traces: list
    stage_accuracies: list       # row i: accuracies of w_p on tasks 1..k after stage i+1
    single_task: list            # test accuracy of each freshly trained w_i on its own task
    best_mean: list              # per stage: (step, mean accuracy over seen tasks) of best checkpoint


def continual(arch: ArchSpec, tasks: Sequence[TaskDataset], cfg: GeoConfig,
              train_opts: TrainOptions, trained: Optional[Sequence[np.ndarray]] = None,
              on_stage: Optional[Callable] = None, max_task_drop: Optional[float] = None,
              monitor_rows: int = 2000) -> ContinualResult:
    """Learn tasks one at a time: train on task i, then walk from that network toward
    the network carrying tasks 1..i-1, measuring functional change on task i only.

    ``trained`` optionally supplies the already-trained single-task networks.
    With ``max_task_drop`` set, each walk also stops once task i's accuracy on
    the first ``monitor_rows`` rows of its training split falls more than
    ``max_task_drop`` below its starting value (column ``monitor_accuracy``);
    the stop uses task-i data only.  Without it the walk runs to arrival,
    oscillation or ``max_steps``.
    """
    tasks = list(tasks)
    if not tasks:
        raise ValueError("need at least one task")
    for t in tasks:
        if t.n_features != arch.n_inputs or t.n_classes > arch.n_outputs:
            raise ValueError(f"task {t.name} does not fit arch {arch}")
    k = len(tasks)

    def train_task(i):
        if trained is not None:
            return arch.check_weights(trained[i])
        opts = TrainOptions(lr=train_opts.lr, momentum=train_opts.momentum,
                            epochs=train_opts.epochs, batch_size=train_opts.batch_size,
                            seed=train_opts.seed + i)
        return sgd_train(arch, tasks[i].train, opts)

    w_p = train_task(0)
    single = [loss_and_accuracy(arch, w_p, tasks[0].test)[1]]
    stages = [task_accuracies(arch, w_p, tasks)]
    traces, best = [], [(0, single[0])]
    for i in range(1, k):
        w_i = train_task(i)
        single.append(loss_and_accuracy(arch, w_i, tasks[i].test)[1])
        seen = tasks[:i + 1]

        monitor = None
        if max_task_drop is not None:
            monitor = tasks[i].train.subset(np.arange(min(monitor_rows, len(tasks[i].train))))

        def extra(w, seen=seen, monitor=monitor):
            accs = task_accuracies(arch, w, tasks)
            out = {f"acc_task_{j + 1}": a for j, a in enumerate(accs)}
            out["mean_seen"] = float(np.mean(accs[:len(seen)]))
            if max_task_drop is not None:
                out["monitor_accuracy"] = loss_and_accuracy(arch, w, monitor)[1]
            return out

        stop_when = None
        if max_task_drop is not None:
            start = loss_and_accuracy(arch, w_i, monitor)[1]
            stop_when = lambda rec, start=start: rec["monitor_accuracy"] < start - max_task_drop
        stage_cfg = GeoConfig(**{**cfg.as_dict(), "seed": cfg.seed + i})
        # the metric sees task i only
        trace = geo(arch, w_i, tasks[i].train, w_p, stage_cfg, eval_batch=tasks[i].test,
                    extra_columns=extra, stop_when=stop_when)
        w_p = trace.final
        traces.append(trace)
        stages.append(task_accuracies(arch, w_p, tasks))
        b = trace.best_record("mean_seen")
        best.append((b["step"], b["mean_seen"]))
        log.info("continual stage %d: %s after %d steps (%s)", i + 1,
                 np.round(stages[-1], 4), trace.n_steps, trace.stop_reason)
        if on_stage is not None:
            on_stage(i, trace)
    return ContinualResult(w_final=w_p, traces=traces, stage_accuracies=stages,
                           single_task=single, best_mean=best)


# -- mode connectivity -------------------------------------------------------------

def connect_modes(arch: ArchSpec, w_1, w_2, data: TaskDataset, cfg: GeoConfig) -> PathTrace:
    """Walk from ``w_1`` toward the fixed target ``w_2`` under the task metric."""
    w_1, w_2 = arch.check_weights(w_1), arch.check_weights(w_2)
    return geo(arch, w_1, data, w_2, cfg)


def linear_path_eval(arch: ArchSpec, w_1, w_2, data: Union[TaskDataset, Batch],
                     n_points: int = 25, extra_columns: Optional[Callable] = None) -> PathTrace:
    """Loss and accuracy at ``n_points`` evenly spaced points of the segment w_1 -> w_2."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    w_1, w_2 = arch.check_weights(w_1), arch.check_weights(w_2)
    batch = data.test if hasattr(data, "test") else data
    evaluate = batch_evaluator(arch, batch, extra_columns)
    trace = PathTrace()
    prev = w_1
    for s, t in enumerate(np.linspace(0.0, 1.0, n_points)):
        w = (1.0 - t) * w_1 + t * w_2
        if s == n_points - 1:
            w = w_2.copy()
        trace.records.append({"step": s, **evaluate(w),
                              "dist_to_target": float(np.linalg.norm(w_2 - w)),
                              "quad_form": math.nan, "step_norm": float(np.linalg.norm(w - prev))})
        trace.checkpoints.append(w)
        trace.checkpoint_steps.append(s)
        prev = w
    trace.stop_reason = "arrived"
    return trace


def permute_hidden_units(arch: ArchSpec, w, seed: int) -> np.ndarray:
    """Functionally identical network with every hidden layer's units shuffled."""
    rng = np.random.default_rng(seed)
    layers = [(W.copy(), b.copy()) for W, b in arch.unflatten(w)]
    for l in range(arch.n_layers - 1):
        perm = rng.permutation(arch.layer_dims[l + 1])
        W, b = layers[l]
        layers[l] = (W[perm], b[perm])
        Wn, bn = layers[l + 1]
        layers[l + 1] = (Wn[:, perm], bn)
    return arch.flatten(layers)


def train_modes(arch: ArchSpec, data: TaskDataset, opts: TrainOptions, seeds=(1, 2)) -> list:
    out = []
    for s in seeds:
        o = TrainOptions(lr=opts.lr, momentum=opts.momentum, epochs=opts.epochs,
                         batch_size=opts.batch_size, seed=s)
        out.append(sgd_train(arch, data.train, o))
    return out
