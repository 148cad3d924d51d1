"""Dense-oracle self checks, shared by the CLI ``oracle-check`` command and the test suite.

Every check returns a :class:`CheckResult`; nothing here raises on a failed
comparison so a harness can print the whole table.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .christoffel import christoffel_from_metric, integrate_geodesic_ode
from .geodesic import GeoConfig, geo
from .metric import MetricOperator, constant_speed_resample, dense_metric, path_energy, quad_form
from .nn import ArchSpec, Batch, forward, init_network, jvp, loss_and_accuracy, loss_gradient, vjp
from .oracles import (dense_metric_from_jacobians, dense_tr_solve, fd_directional, fd_gradient,
                      fd_jacobian)
from .trust_region import solve_direction, tr_objective

# 1-1 tanh network (w, b) on three inputs; the metric is curved in both coordinates
TOY_ARCH = ArchSpec((1, 1), ("tanh",))
TOY_X = np.array([[-1.0], [0.5], [1.5]])
TOY_CASES = (((0.3, -0.2), (0.3, 0.2)), ((0.5, 0.0), (0.4, -0.4)), ((1.0, 0.5), (-1.0, 0.3)))


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float          # worst observed error / ratio
    tolerance: float
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:<28} worst={self.value:.3e}  tol={self.tolerance:.1e}"
                f"  ({self.seconds:.1f}s) {self.detail}")


def _rel(a, b):
    return float(np.linalg.norm(np.asarray(a) - b) / max(np.linalg.norm(b), 1e-300))


def random_tanh_net(rng, max_params=200):
    while True:
        dims = [int(rng.integers(1, 7)) for _ in range(int(rng.integers(2, 5)))]
        arch = ArchSpec.mlp(dims, hidden="tanh", output=str(rng.choice(["tanh", "identity"])))
        if arch.n_params <= max_params:
            break
    w = rng.normal(scale=0.8, size=arch.n_params)
    X = rng.normal(size=(int(rng.integers(1, 6)), arch.n_inputs))
    y = rng.integers(0, arch.n_outputs, size=X.shape[0])
    return arch, w, Batch(X, y)


def mlp_tiny(seed: int = 11):
    """4-3-2 tanh network with perturbed initial weights and a 5-sample batch."""
    arch = ArchSpec.mlp([4, 3, 2], hidden="tanh", output="identity")
    rng = np.random.default_rng(seed)
    w = init_network(arch, 3) + 0.3 * rng.normal(size=arch.n_params)
    return arch, w, Batch(rng.normal(size=(5, 4)), np.array([0, 1, 1, 0, 1]))


def check_derivatives(n_nets: int = 100, seed: int = 0) -> CheckResult:
    """jvp / vjp / loss gradient against central differences; adjoint identity."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_fd, worst_adj = 0.0, 0.0
    for _ in range(n_nets):
        arch, w, batch = random_tanh_net(rng)
        x = batch.inputs[0]
        v = rng.normal(size=arch.n_params)
        u = rng.normal(size=arch.n_outputs)
        Jv = jvp(arch, w, x, v)
        J = fd_jacobian(arch, w, x)
        g = loss_gradient(arch, w, batch)
        g_fd = fd_gradient(lambda ww: loss_and_accuracy(arch, ww, batch)[0], w)
        worst_fd = max(worst_fd,
                       _rel(Jv, fd_directional(lambda ww: forward(arch, ww, x), w, v)),
                       _rel(vjp(arch, w, x, u), J.T @ u),
                       _rel(g, g_fd))
        lhs, rhs = u @ Jv, vjp(arch, w, x, u) @ v
        scale = max(abs(lhs), np.linalg.norm(u) * np.linalg.norm(Jv), 1e-300)
        worst_adj = max(worst_adj, abs(lhs - rhs) / scale)
    ok = worst_fd <= 1e-5 and worst_adj <= 1e-12
    return CheckResult("derivatives (fd + adjoint)", ok, worst_fd, 1e-5, time.perf_counter() - t0,
                       f"adjoint={worst_adj:.1e}")


def check_metric(n_probes: int = 1000, seed: int = 0) -> CheckResult:
    """Matrix-free metric products against dense per-sample Jacobians; PSD probes."""
    t0 = time.perf_counter()
    arch, w, batch = mlp_tiny()
    jac = [np.stack([jvp(arch, w, x, e) for e in np.eye(arch.n_params)], axis=1)
           for x in batch.inputs]
    G = dense_metric_from_jacobians(jac)
    op = MetricOperator(arch, w, batch)
    rng = np.random.default_rng(seed)
    worst = max(_rel(op.apply(v), G @ v) for v in rng.normal(size=(20, arch.n_params)))
    worst = max(worst, _rel(dense_metric(op), G))
    min_q = np.inf
    for _ in range(n_probes):
        a, ww, b = random_tanh_net(rng, 120)
        min_q = min(min_q, quad_form(MetricOperator(a, ww, b), rng.normal(size=a.n_params)))
    ok = worst <= 1e-10 and min_q >= -1e-12
    return CheckResult("metric (dense + PSD)", ok, worst, 1e-10, time.perf_counter() - t0,
                       f"min quad form={min_q:.1e}")


def check_trust_region(n_instances: int = 50, seed: int = 0) -> CheckResult:
    """solve_direction against eigendecomposition + λ-bisection, including null-space d."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst, feasible = 0.0, True
    for i in range(n_instances):
        n = int(rng.integers(2, 40))
        rank = int(rng.integers(1, n + 1))
        A = rng.normal(size=(n, rank)) * rng.uniform(0.01, 3.0)
        G = A @ A.T
        if i % 5 == 0 and rank < n:
            d = np.linalg.svd(A)[0][:, rank:] @ rng.normal(size=n - rank)
        else:
            d = rng.normal(size=n) * rng.uniform(0.01, 10)
        beta = float(rng.choice([0.1, 1.0, 5.0, 50.0]))
        res = solve_direction(lambda v: G @ v, d, beta)
        ref = dense_tr_solve(G, d, beta)
        worst = max(worst, abs(res.objective - tr_objective(lambda v: G @ v, ref, d, beta)))
        feasible &= bool(res.theta @ res.theta <= 0.01 + 1e-12)
    ok = worst <= 1e-6 and feasible
    return CheckResult("trust region vs dense", ok, worst, 1e-6, time.perf_counter() - t0,
                       "" if feasible else "infeasible step")


def check_christoffel() -> CheckResult:
    """f = (w1², w2): g = diag(4w1², 1), the only non-zero symbols are Γ¹₁₁ = 1/w1."""
    t0 = time.perf_counter()
    worst = 0.0
    for w1 in (0.5, 1.5, -2.0):
        got = christoffel_from_metric(lambda w: np.diag([4 * w[0] ** 2, 1.0]), np.array([w1, 0.3]))
        ref = np.zeros((2, 2, 2))
        ref[0, 0, 0] = 1 / w1
        worst = max(worst, float(np.max(np.abs(got.gamma - ref))))
    return CheckResult("christoffel analytic toy", worst <= 1e-4, worst, 1e-4,
                       time.perf_counter() - t0)


def geodesic_energy_comparison(w0, v0, ode_steps: int = 100, eta: float = 0.002,
                               beta: float = 5.0, n_resample: int = 101) -> dict:
    """Walk between the endpoints of an ODE geodesic on the curved 2-parameter toy.

    Energy depends on how the curve is parametrised, so the walk's polyline
    is re-sampled at constant metric speed before its energy is compared
    with the (constant-speed) ODE solution.
    """
    ode = integrate_geodesic_ode(TOY_ARCH, np.array(w0, float), np.array(v0, float), TOY_X, ode_steps)
    cfg = GeoConfig(beta=beta, eta=eta, max_steps=20_000, metric_batch=len(TOY_X),
                    frozen_metric=True, osc_window=200)
    tr = geo(TOY_ARCH, ode[0], TOY_X, ode[-1], cfg)
    poly = tr.checkpoints
    e_ode = path_energy(TOY_ARCH, ode, TOY_X)
    e_raw = path_energy(TOY_ARCH, poly, TOY_X)
    e_geo = path_energy(TOY_ARCH, constant_speed_resample(TOY_ARCH, poly, TOY_X, n_resample), TOY_X)
    line = [ode[0] + t * (ode[-1] - ode[0]) for t in np.linspace(0, 1, n_resample)]
    dev = max(np.min(np.linalg.norm(np.array(poly) - p, axis=1)) for p in ode)
    return {"energy_ode": e_ode, "energy_geo": e_geo, "energy_geo_raw": e_raw,
            "energy_line": path_energy(TOY_ARCH, line, TOY_X), "ratio": e_geo / e_ode,
            "stop_reason": tr.stop_reason, "steps": tr.n_steps, "max_deviation": dev}


def check_geodesic_energy(tol: float = 0.10) -> CheckResult:
    t0 = time.perf_counter()
    ratios = [geodesic_energy_comparison(w0, v0)["ratio"] for w0, v0 in TOY_CASES]
    worst = max(abs(r - 1) for r in ratios)
    return CheckResult("geo energy vs ODE", worst <= tol, worst, tol, time.perf_counter() - t0,
                       "ratios=" + ",".join(f"{r:.3f}" for r in ratios))


def run_checks(level: str = "all") -> list:
    if level not in ("quick", "all"):
        raise ValueError(f"unknown level {level!r}")
    if level == "quick":
        return [check_derivatives(20), check_metric(100), check_trust_region(10), check_christoffel()]
    return [check_derivatives(), check_metric(), check_trust_region(), check_christoffel(),
            check_geodesic_energy()]
