"""Approximate geodesic walk toward a target network.

Each step solves the trust-region problem

    min_θ  θᵀ g_w θ - β θᵀ(w_a - w)   subject to  θᵀθ <= radius_sq

with the pullback metric at the current point, then moves ``eta`` along
θ/‖θ‖.  The walk stops on arrival, after ``max_steps`` steps, when the
distance to the target stops improving (oscillation), or when an optional
caller-supplied criterion on the latest trace row fires.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Union

import numpy as np

from .metric import MetricOperator, quad_form
from .nn import ArchSpec, Batch, loss_and_accuracy
from .trust_region import solve_direction

STOP_REASONS = ("arrived", "max_steps", "oscillation", "criterion")


class GeodesicError(RuntimeError):
    pass


@dataclass
class GeoConfig:
    beta: float = 5.0
    eta: float = 0.05
    radius_sq: float = 0.01
    max_steps: int = 1000
    metric_batch: int = 64
    osc_window: int = 20
    osc_tol: float = 1e-3
    arrive_tol: Optional[float] = None   # None -> eta
    seed: int = 0
    frozen_metric: bool = False          # draw one metric sample and keep it
    output_mode: str = "logits"
    cg_tol: float = 1e-8
    cg_max_iter: int = 60
    snap_on_arrival: bool = True
    keep_every: int = 1                  # checkpoint stride kept in memory

    def __post_init__(self):
        for name in ("beta", "eta", "radius_sq", "metric_batch", "osc_window", "keep_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"GeoConfig.{name} must be positive")
        if self.max_steps < 0 or self.osc_tol < 0:
            raise ValueError("max_steps and osc_tol must be non-negative")

    @property
    def arrival_tolerance(self) -> float:
        return self.eta if self.arrive_tol is None else self.arrive_tol

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class PathTrace:
    """Checkpoints and per-step diagnostics of one walk.

    Row ``s`` of ``records`` describes checkpoint ``s``; its ``quad_form`` and
    ``step_norm`` belong to the step that produced it (zero for the start).
    ``checkpoints`` holds every ``keep_every``-th point plus the last one, and
    ``checkpoint_steps`` their step indices.
    """

    records: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    checkpoint_steps: list = field(default_factory=list)
    stop_reason: Optional[str] = None
    snapped: bool = False
    metric_samples: int = 0       # data rows consumed by metric products
    metric_matvecs: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.checkpoints[-1]

    @property
    def start(self) -> np.ndarray:
        return self.checkpoints[0]

    @property
    def n_steps(self) -> int:
        return len(self.records) - 1

    def column(self, key) -> np.ndarray:
        return np.array([r[key] for r in self.records], dtype=float)

    def best_record(self, key="accuracy") -> dict:
        return max(self.records, key=lambda r: r[key])

    def _keep(self, step, w, every):
        if step % every == 0:
            self.checkpoints.append(w.copy())
            self.checkpoint_steps.append(step)

    def _finish(self, step, w):
        if not self.checkpoint_steps or self.checkpoint_steps[-1] != step:
            self.checkpoints.append(w.copy())
            self.checkpoint_steps.append(step)

    def extend(self, other: "PathTrace"):
        """Append a continuation whose first checkpoint equals our last one."""
        offset = self.n_steps
        for r in other.records[1:]:
            r = dict(r)
            r["step"] += offset
            self.records.append(r)
        for s, w in zip(other.checkpoint_steps, other.checkpoints):
            if s == 0:
                continue
            self.checkpoints.append(w)
            self.checkpoint_steps.append(s + offset)
        self.stop_reason = other.stop_reason
        self.snapped = other.snapped
        self.metric_samples += other.metric_samples
        self.metric_matvecs += other.metric_matvecs


def oscillating(dists, window: int, tol: float) -> bool:
    """True when the best distance of the last ``window`` steps failed to beat
    the best distance before them by a relative margin ``tol``."""
    if len(dists) <= window:
        return False
    before = min(dists[:-window])
    recent = min(dists[-window:])
    return recent > before * (1.0 - tol)


class MetricSampler:
    """Builds a MetricOperator at a weight point from a per-step data sample."""

    def __init__(self, arch: ArchSpec, data: Batch, cfg: GeoConfig):
        self.arch = arch
        self.data = data
        self.cfg = cfg
        self.rng = np.random.default_rng([cfg.seed, 0xC0FFEE])
        self.size = min(cfg.metric_batch, len(data))
        self.frozen = self._draw() if cfg.frozen_metric else None
        self.draws = 0

    def _draw(self):
        return np.sort(self.rng.choice(len(self.data), size=self.size, replace=False))

    def __call__(self, w) -> MetricOperator:
        idx = self.frozen if self.frozen is not None else self._draw()
        self.draws += 1
        return MetricOperator(self.arch, w, self.data.inputs[idx], self.cfg.output_mode)


def fixed_target(w_a) -> Callable:
    w_a = np.array(w_a, dtype=np.float64)
    return lambda w, step: w_a


def walk(w_t, metric_at: Callable, target: Callable, cfg: GeoConfig,
         evaluate: Optional[Callable] = None, max_steps: Optional[int] = None,
         stop_when: Optional[Callable] = None) -> PathTrace:
    """Run the walk with arbitrary metric and evaluation callbacks.

    Parameters
    ----------
    metric_at : w -> object with ``apply(v)`` (and optionally ``n_samples``).
    target : (w, step) -> target weight vector w_a.
    evaluate : w -> dict with at least ``loss`` and ``accuracy``; extra keys
        become extra trace columns.
    stop_when : trace row -> bool, checked after every recorded row; a true
        result ends the walk with stop reason ``criterion``.
    """
    w = np.array(w_t, dtype=np.float64)
    max_steps = cfg.max_steps if max_steps is None else max_steps
    tol = cfg.arrival_tolerance
    evaluate = evaluate or (lambda w: {"loss": math.nan, "accuracy": math.nan})
    trace = PathTrace()
    dists = []
    last_q, last_norm = 0.0, 0.0
    step = 0
    while True:
        if not np.all(np.isfinite(w)):
            raise GeodesicError(f"non-finite weights at step {step}")
        w_a = np.asarray(target(w, step), dtype=np.float64)
        diff = w_a - w
        dist = float(np.linalg.norm(diff))
        dists.append(dist)
        rec = {"step": step, **evaluate(w), "dist_to_target": dist,
               "quad_form": last_q, "step_norm": last_norm}
        trace.records.append(rec)
        trace._keep(step, w, cfg.keep_every)
        if dist <= tol:
            trace.stop_reason = "arrived"
            if cfg.snap_on_arrival and dist > 0:
                step += 1
                op = metric_at(w)
                q = quad_form(op, diff) if isinstance(op, MetricOperator) else float(diff @ op.apply(diff))
                w = w_a.copy()
                trace.snapped = True
                trace.records.append({"step": step, **evaluate(w), "dist_to_target": 0.0,
                                      "quad_form": q, "step_norm": dist})
                trace._keep(step, w, cfg.keep_every)
            break
        if stop_when is not None and step > 0 and stop_when(rec):
            trace.stop_reason = "criterion"
            break
        if step >= max_steps:
            trace.stop_reason = "max_steps"
            break
        if oscillating(dists, cfg.osc_window, cfg.osc_tol):
            trace.stop_reason = "oscillation"
            break
        op = metric_at(w)
        res = solve_direction(op.apply, diff, cfg.beta, cfg.radius_sq,
                              tol=cfg.cg_tol, max_iter=cfg.cg_max_iter)
        trace.metric_samples += getattr(op, "n_samples", 0)
        trace.metric_matvecs += res.iterations
        theta = res.theta
        tn = np.linalg.norm(theta)
        if tn == 0.0:
            raise GeodesicError(f"zero step direction at step {step}")
        last_q = (quad_form(op, theta) if isinstance(op, MetricOperator)
                  else float(theta @ op.apply(theta)))
        dw = (cfg.eta / tn) * theta
        last_norm = float(np.linalg.norm(dw))
        w = w + dw
        step += 1
    trace._finish(step, w)
    return trace


def batch_evaluator(arch: ArchSpec, batch: Optional[Batch], extra: Optional[Callable] = None):
    """w -> {loss, accuracy, **extra(w)} on ``batch``."""
    def evaluate(w):
        out = {}
        if batch is not None:
            loss, acc = loss_and_accuracy(arch, w, batch)
            out = {"loss": loss, "accuracy": acc}
        else:
            out = {"loss": math.nan, "accuracy": math.nan}
        if extra is not None:
            out.update(extra(w))
        return out
    return evaluate


def geo(arch: ArchSpec, w_t, metric_data: Union[Batch, "TaskDataset"], target, cfg: GeoConfig,
        eval_batch: Optional[Batch] = None, extra_columns: Optional[Callable] = None,
        max_steps: Optional[int] = None, sampler: Optional[MetricSampler] = None,
        stop_when: Optional[Callable] = None) -> PathTrace:
    """Walk from ``w_t`` toward ``target`` under the pullback metric of ``metric_data``.

    ``target`` is a fixed weight vector or a callable ``(w, step) -> w_a``.
    ``metric_data`` may be a bare input array, or a TaskDataset, in which case the metric is sampled
    from its training split and the walk is evaluated on its test split unless
    ``eval_batch`` is given.
    """
    if hasattr(metric_data, "train"):
        eval_batch = metric_data.test if eval_batch is None else eval_batch
        metric_data = metric_data.train
    elif not hasattr(metric_data, "inputs"):
        X = np.atleast_2d(np.asarray(metric_data, dtype=np.float64))
        metric_data = Batch(X, np.zeros(len(X), dtype=np.int64))
    w_t = arch.check_weights(w_t)
    if not callable(target):
        target = fixed_target(arch.check_weights(target))
    sampler = sampler or MetricSampler(arch, metric_data, cfg)
    return walk(w_t, sampler, target, cfg, batch_evaluator(arch, eval_batch, extra_columns),
                max_steps=max_steps, stop_when=stop_when)
