"""Independent dense reference computations for tiny problems.

Nothing here shares code with the matrix-free paths it is used to check:
Jacobians come from finite differences of ``forward`` or from basis-vector
sweeps, and the trust-region reference works on an explicit eigendecomposition.
"""
from __future__ import annotations

import numpy as np

from .nn import ArchSpec, forward, softmax


def reference_forward(arch: ArchSpec, w, x) -> np.ndarray:
    """Layer algebra written out with explicit loops over neurons."""
    w = np.asarray(w, dtype=np.float64)
    a = [float(v) for v in x]
    pos = 0
    for l in range(arch.n_layers):
        n_in, n_out = arch.layer_dims[l], arch.layer_dims[l + 1]
        Wflat = w[pos:pos + n_in * n_out]
        b = w[pos + n_in * n_out:pos + n_in * n_out + n_out]
        pos += n_in * n_out + n_out
        z = []
        for j in range(n_out):
            s = b[j]
            for i in range(n_in):
                s += Wflat[j * n_in + i] * a[i]
            z.append(s)
        name = arch.activations[l]
        if name == "relu":
            a = [max(v, 0.0) for v in z]
        elif name == "tanh":
            a = [float(np.tanh(v)) for v in z]
        else:
            a = z
    return np.array(a)


def fd_jacobian(arch: ArchSpec, w, x, h: float = 1e-5, output_mode: str = "logits") -> np.ndarray:
    """Central-difference Jacobian of the network output at a single input, (m, n)."""
    w = np.asarray(w, dtype=np.float64)

    def f(ww):
        out = forward(arch, ww, x)
        return softmax(out) if output_mode == "softmax" else out

    J = np.empty((arch.n_outputs, arch.n_params))
    for j in range(arch.n_params):
        e = np.zeros_like(w)
        e[j] = h
        J[:, j] = (f(w + e) - f(w - e)) / (2 * h)
    return J


def fd_directional(fun, w, v, h: float = 1e-5):
    return (fun(w + h * v) - fun(w - h * v)) / (2 * h)


def fd_gradient(fun, w, h: float = 1e-5) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    g = np.empty_like(w)
    for j in range(w.size):
        e = np.zeros_like(w)
        e[j] = h
        g[j] = (fun(w + e) - fun(w - e)) / (2 * h)
    return g


def dense_metric_from_jacobians(jacobians) -> np.ndarray:
    """(1/N) Σ_i J_iᵀ J_i from explicit per-sample Jacobians."""
    G = sum(J.T @ J for J in jacobians)
    return G / len(jacobians)


def dense_tr_solve(G: np.ndarray, d, beta: float, radius_sq: float = 0.01,
                   tol: float = 1e-15) -> np.ndarray:
    """Exact minimiser of θᵀGθ - β dᵀθ over θᵀθ <= radius_sq, G symmetric PSD.

    Stationarity gives (G + λI)θ = (β/2)d with λ >= 0.  λ is found by
    bisection on ‖θ(λ)‖ = r in the eigenbasis of G.
    """
    sig, U = np.linalg.eigh(G)
    sig = np.maximum(sig, 0.0)
    rhs = U.T @ (0.5 * beta * np.asarray(d, dtype=np.float64))
    r = np.sqrt(radius_sq)
    zero = sig <= 1e-12 * max(1.0, sig[-1])
    if np.all(np.abs(rhs[zero]) <= 1e-12 * max(1.0, np.abs(rhs).max())):
        inner = np.where(zero, 0.0, rhs / np.where(zero, 1.0, sig))
        if np.linalg.norm(inner) <= r:
            return U @ inner

    def norm_at(lam):
        return np.linalg.norm(rhs / (sig + lam))

    lo, hi = 0.0, np.linalg.norm(rhs) / r
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if norm_at(mid) > r:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(hi, 1e-300):
            break
    lam = hi
    theta = U @ (rhs / (sig + lam))
    return theta * min(1.0, r / np.linalg.norm(theta))
