"""Pullback metric g_w(X) = (1/N) Σ_i J_w(x_i)ᵀ J_w(x_i) on weight space, matrix-free."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .nn import ArchSpec, Batch, Linearization, forward, softmax

DENSE_CAP = 2000


class MetricOperator:
    """The metric at one weight point for one data sample.

    ``apply(v)`` costs one forward-mode and one reverse-mode sweep over the
    sample; the forward pass at ``w`` is computed once at construction.
    """

    def __init__(self, arch: ArchSpec, w, data, output_mode: str = "logits"):
        X = data.inputs if isinstance(data, Batch) else np.asarray(data, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        self.arch = arch
        self.weight_point = arch.check_weights(w)
        self.output_mode = output_mode
        self._lin = Linearization(arch, self.weight_point, X, output_mode)
        self.n_samples = X.shape[0]
        self.matvecs = 0

    @property
    def n(self) -> int:
        return self.arch.n_params

    @property
    def inputs(self) -> np.ndarray:
        return self._lin.X

    def apply(self, v) -> np.ndarray:
        v = self.arch.check_weights(v)
        self.matvecs += 1
        return self._lin.vjp(self._lin.jvp(v)) / self.n_samples

    __matmul__ = apply

    def output_change(self, v) -> np.ndarray:
        """Per-sample J_i v, shape (N, m)."""
        return self._lin.jvp(v)


def metric_vecprod(op: MetricOperator, v) -> np.ndarray:
    return op.apply(v)


def quad_form(op: MetricOperator, v) -> float:
    """⟨v, v⟩_w = mean_i |J_i v|², evaluated as a sum of squares (never negative)."""
    Jv = op.output_change(op.arch.check_weights(v))
    return float(np.sum(Jv * Jv) / op.n_samples)


def dense_metric(op: MetricOperator, cap: int = DENSE_CAP) -> np.ndarray:
    """Materialise G column by column.  Only for tiny networks."""
    n = op.n
    if n > cap:
        raise ValueError(f"dense metric refused: n = {n} exceeds the cap of {cap} parameters")
    G = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        G[:, j] = op.apply(e)
        e[j] = 0.0
    asym = np.max(np.abs(G - G.T))
    scale = max(1.0, np.max(np.abs(G)))
    if asym > 1e-10 * scale:
        raise AssertionError(f"dense metric is not symmetric (max |G - Gᵀ| = {asym:.3e})")
    return 0.5 * (G + G.T)


def _inputs(data) -> np.ndarray:
    return data.inputs if isinstance(data, Batch) else np.asarray(data, dtype=np.float64)


def functional_distance(arch: ArchSpec, w_t, w_p, data, output_mode: str = "logits") -> float:
    """Exact mean squared output difference (1/N) Σ_i |f(x_i, w_t) - f(x_i, w_p)|²."""
    w_t = arch.check_weights(w_t)
    w_p = arch.check_weights(w_p)
    X = _inputs(data)
    a, b = forward(arch, w_t, X), forward(arch, w_p, X)
    if output_mode == "softmax":
        a, b = softmax(a), softmax(b)
    return float(np.sum((a - b) ** 2) / X.shape[0])


def path_energy(arch: ArchSpec, path: Sequence[np.ndarray], data,
                output_mode: str = "logits") -> float:
    """Midpoint-rule discretisation of ∫₀¹ ⟨γ̇, γ̇⟩_γ dt over uniformly spaced checkpoints."""
    if len(path) < 2:
        raise ValueError("path energy needs at least two checkpoints")
    X = _inputs(data)
    S = len(path) - 1
    dt = 1.0 / S
    total = 0.0
    for a, b in zip(path[:-1], path[1:]):
        a, b = arch.check_weights(a), arch.check_weights(b)
        op = MetricOperator(arch, 0.5 * (a + b), X, output_mode)
        total += quad_form(op, (b - a) / dt) * dt
    return total


def path_length(arch: ArchSpec, path: Sequence[np.ndarray], data,
                output_mode: str = "logits") -> float:
    """Σ_s sqrt(⟨Δγ, Δγ⟩) at segment midpoints (parametrisation-free)."""
    X = _inputs(data)
    total = 0.0
    for a, b in zip(path[:-1], path[1:]):
        op = MetricOperator(arch, 0.5 * (a + b), X, output_mode)
        total += np.sqrt(quad_form(op, b - a))
    return float(total)


def constant_speed_resample(arch: ArchSpec, path: Sequence[np.ndarray], data, n_points: int,
                            output_mode: str = "logits") -> list:
    """Re-place ``n_points`` checkpoints along the polyline at equal metric arc length.

    Energy depends on the parametrisation while length does not; a polyline
    sampled at constant metric speed has energy ≈ length², which is what a
    geodesic of the same length would have.
    """
    X = _inputs(data)
    seg = [np.sqrt(quad_form(MetricOperator(arch, 0.5 * (a + b), X, output_mode), b - a))
           for a, b in zip(path[:-1], path[1:])]
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0.0:
        return [np.array(path[0], dtype=np.float64) for _ in range(n_points)]
    out = []
    for s in np.linspace(0.0, cum[-1], n_points):
        k = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        frac = 0.0 if seg[k] == 0 else (s - cum[k]) / seg[k]
        out.append(path[k] + frac * (path[k + 1] - path[k]))
    return out
