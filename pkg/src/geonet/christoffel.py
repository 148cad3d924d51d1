"""Exact geodesics on tiny networks: Christoffel symbols and RK4 on the geodesic ODE.

Costs O(n³) memory and O(n²) metric products per evaluation; use only as a
reference for the approximate walk on networks with a handful of weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .metric import DENSE_CAP, MetricOperator, dense_metric
from .nn import ArchSpec, Batch

FD_STEP = 1e-4


class GeodesicBlowUp(RuntimeError):
    pass


@dataclass
class ChristoffelTensor:
    """``gamma[e, m, v]`` = Γ^e_{mv} at ``w``."""

    gamma: np.ndarray
    w: np.ndarray
    eps: float

    def contract(self, v) -> np.ndarray:
        """Γ^e_{mv} v^m v^v."""
        return np.einsum("emv,m,v->e", self.gamma, v, v)


def network_metric(arch: ArchSpec, batch, output_mode: str = "logits", cap: int = DENSE_CAP):
    X = batch.inputs if isinstance(batch, Batch) else np.asarray(batch, dtype=np.float64)

    def metric(w):
        return dense_metric(MetricOperator(arch, w, X, output_mode), cap=cap)
    return metric


def default_eps(G: np.ndarray) -> float:
    n = G.shape[0]
    return max(1e-6 * float(np.trace(G)) / n, 1e-300)


def christoffel_from_metric(metric: Callable, w, eps: float = None,
                            h: float = FD_STEP) -> ChristoffelTensor:
    """Γ^e_{mv} = ½ Σ_r (G+εI)⁻¹_{er} (∂_v g_{rm} + ∂_m g_{rv} - ∂_r g_{mv}).

    Metric derivatives are central differences with step ``h``.  ``eps``
    defaults to 1e-6·trace(G)/n.
    """
    w = np.asarray(w, dtype=np.float64)
    n = w.size
    G = metric(w)
    if eps is None:
        eps = default_eps(G)
    dG = np.empty((n, n, n))   # dG[k, i, j] = ∂_k g_ij
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        dG[k] = (metric(w + e) - metric(w - e)) / (2 * h)
    Ginv = np.linalg.inv(G + eps * np.eye(n))
    # bracket[r, m, v] = ∂_v g_rm + ∂_m g_rv - ∂_r g_mv
    bracket = dG.transpose(1, 2, 0) + dG.transpose(1, 0, 2) - dG
    gamma = 0.5 * np.einsum("er,rmv->emv", Ginv, bracket)
    return ChristoffelTensor(gamma=gamma, w=w.copy(), eps=float(eps))


def christoffel(arch: ArchSpec, w, batch, eps: float = None, cap: int = DENSE_CAP,
                output_mode: str = "logits") -> ChristoffelTensor:
    w = arch.check_weights(w)
    if arch.n_params > cap:
        raise ValueError(f"Christoffel symbols refused: n = {arch.n_params} exceeds the cap of {cap}")
    return christoffel_from_metric(network_metric(arch, batch, output_mode, cap), w, eps)


def integrate_geodesic(metric: Callable, w0, v0, steps: int, eps: float = None,
                       t_end: float = 1.0, return_velocity: bool = False):
    """RK4 on  ẅ^e = -Γ^e_{mv} ẇ^m ẇ^v  over [0, t_end]; returns steps+1 points."""
    w = np.array(w0, dtype=np.float64)
    v = np.array(v0, dtype=np.float64)
    dt = t_end / steps

    def accel(ww, vv):
        return -christoffel_from_metric(metric, ww, eps).contract(vv)

    path, vels = [w.copy()], [v.copy()]
    for s in range(steps):
        k1w, k1v = v, accel(w, v)
        k2w, k2v = v + 0.5 * dt * k1v, accel(w + 0.5 * dt * k1w, v + 0.5 * dt * k1v)
        k3w, k3v = v + 0.5 * dt * k2v, accel(w + 0.5 * dt * k2w, v + 0.5 * dt * k2v)
        k4w, k4v = v + dt * k3v, accel(w + dt * k3w, v + dt * k3v)
        w = w + dt / 6 * (k1w + 2 * k2w + 2 * k3w + k4w)
        v = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not np.all(np.isfinite(w)) or np.linalg.norm(w) > 1e6:
            raise GeodesicBlowUp(f"geodesic integration blew up at step {s + 1}")
        path.append(w.copy())
        vels.append(v.copy())
    return (path, vels) if return_velocity else path


def integrate_geodesic_ode(arch: ArchSpec, w0, v0, batch, steps: int, eps: float = None,
                           t_end: float = 1.0, return_velocity: bool = False,
                           output_mode: str = "logits"):
    w0 = arch.check_weights(w0)
    if arch.n_params > DENSE_CAP:
        raise ValueError(f"geodesic ODE refused: n = {arch.n_params} exceeds the cap of {DENSE_CAP}")
    return integrate_geodesic(network_metric(arch, batch, output_mode), w0, v0, steps,
                              eps=eps, t_end=t_end, return_velocity=return_velocity)
