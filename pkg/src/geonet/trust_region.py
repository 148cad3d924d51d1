"""Step-direction subproblem: min θᵀGθ - β dᵀθ  s.t.  θᵀθ <= r².

Solved matrix-free with the Lanczos form of Steihaug-Toint CG (GLTR, Gould,
Lucidi, Roma & Toint 1999).  While the iterates stay inside the ball they are
exactly the CG iterates; once the boundary is active the subproblem is solved
exactly on the growing Krylov space instead of stopping at the first boundary
crossing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq


@dataclass
class TRResult:
    theta: np.ndarray
    objective: float
    lam: float            # multiplier of the norm constraint
    iterations: int
    on_boundary: bool
    residual: float       # ‖(2G + 2λI)θ - βd‖ relative to ‖βd‖


def _safe_norm(x) -> float:
    m = np.max(np.abs(x))
    return float(m * np.linalg.norm(x / m)) if m > 0 else 0.0


def tr_objective(apply_G: Callable, theta, d, beta) -> float:
    return float(theta @ apply_G(theta) - beta * (d @ theta))


def _small_tr(alpha, offdiag, g1, radius):
    """Exact solve of min g1·h₁ + ½hᵀTh over ‖h‖ <= radius for symmetric tridiagonal T."""
    # dividing T and g by a common scale leaves the minimiser unchanged and keeps
    # the secular equation away from overflow
    scale = max(abs(g1), np.max(np.abs(alpha)), np.max(np.abs(offdiag), initial=0.0))
    h, lam = _small_tr_scaled(alpha / scale, offdiag / scale, g1 / scale, radius)
    return h, lam * scale


def _small_tr_scaled(alpha, offdiag, g1, radius):
    mu, V = eigh_tridiagonal(alpha, offdiag)
    c = -g1 * V[0, :]
    tiny = 1e-14 * max(1.0, abs(mu[-1]))
    lo = max(0.0, -mu[0])
    shifted = mu + lo
    ok = shifted > tiny
    coef = np.where(ok, c / np.where(ok, shifted, 1.0), 0.0)
    degenerate = np.all(np.abs(c[~ok]) <= 1e-12 * abs(g1))
    if degenerate and np.linalg.norm(coef) <= radius:
        if lo == 0.0:
            return V @ coef, 0.0
        # hard case: pad with the lowest eigenvector up to the boundary
        tau = np.sqrt(radius**2 - coef @ coef)
        return V @ coef + tau * V[:, 0], lo

    def phi(lam):
        return np.linalg.norm(c / (mu + lam)) - radius

    left = lo if np.all(ok) else lo + tiny
    hi = lo + np.linalg.norm(c) / radius + 1.0
    while phi(hi) > 0:
        hi *= 2.0
    lam = brentq(phi, left, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    h = V @ (c / (mu + lam))
    # land exactly on the sphere
    h *= radius / np.linalg.norm(h)
    return h, lam


def solve_direction(apply_G: Callable, d, beta: float, radius_sq: float = 0.01,
                    tol: float = 1e-8, max_iter: int = None) -> TRResult:
    """Minimise θᵀGθ - β dᵀθ over the ball θᵀθ <= radius_sq.

    ``apply_G`` is any callable v -> G v with G symmetric PSD (a
    :class:`~geonet.metric.MetricOperator` works).  Iteration stops when the
    Krylov-space solution satisfies the full optimality condition to relative
    accuracy ``tol``, on Lanczos breakdown, or after ``max_iter`` products.
    """
    d = np.asarray(d, dtype=np.float64)
    dnorm = _safe_norm(d)
    if dnorm == 0.0:
        raise ValueError("solve_direction called with a zero target direction")
    if beta <= 0 or radius_sq <= 0:
        raise ValueError("beta and radius_sq must be positive")
    n = d.size
    radius = np.sqrt(radius_sq)
    max_iter = n if max_iter is None else min(max_iter, n)

    # standard form: gradient g = -βd, Hessian H = 2G
    gnorm = beta * dnorm
    Q = np.empty((max_iter, n))
    q = d / dnorm               # = -g/‖g‖; the sign is absorbed into the small solve below
    alphas, offs = [], []
    h = None
    lam = 0.0
    resid = np.inf
    k = 0
    b_next = 0.0
    while k < max_iter:
        Q[k] = q
        Hq = 2.0 * apply_G(q)
        a = q @ Hq
        Hq -= a * q
        if k:
            Hq -= offs[-1] * Q[k - 1]
        # full reorthogonalisation, twice is enough
        for _ in range(2):
            Hq -= Q[:k + 1].T @ (Q[:k + 1] @ Hq)
        alphas.append(a)
        b_next = np.linalg.norm(Hq)
        k += 1
        h, lam = _small_tr(np.array(alphas), np.array(offs), -gnorm, radius)
        resid = b_next * abs(h[-1]) / gnorm
        if resid <= tol or b_next <= 1e-14 * max(1.0, abs(a)):
            break
        offs.append(b_next)
        q = Hq / b_next
    theta = Q[:k].T @ h
    if np.linalg.norm(theta) > radius:
        theta *= radius / np.linalg.norm(theta)
    obj = tr_objective(apply_G, theta, d, beta)

    # never worse than the clipped straight-line step
    line = 0.5 * beta * d
    ln = _safe_norm(line)
    if ln > radius:
        line *= radius / ln
    line_obj = tr_objective(apply_G, line, d, beta)
    if line_obj < obj:
        theta, obj = line, line_obj
    return TRResult(theta=theta, objective=obj, lam=lam, iterations=k,
                    on_boundary=bool(np.isclose(np.linalg.norm(theta), radius, rtol=1e-10)),
                    residual=float(resid))
