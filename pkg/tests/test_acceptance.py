"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured numbers
before asserting, so ``pytest -v -s`` (or the captured output of a failing
run) doubles as the acceptance report.  Criteria 5-8 need the MNIST IDX
files and take minutes each.
"""
import time

import pytest

from conftest import mnist_path, requires_mnist
from geonet import checks
from geonet.cli import run
from geonet.experiments import (LENET, MnistSetup, dense_reference, run_continual, run_modes,
                                run_sparsify, run_structured)


def report(capsys, number, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] acceptance {number}: {name} | {detail}")
    assert ok, detail


def _check(capsys, number, result, budget):
    ok = result.passed and result.seconds < budget
    report(capsys, number, result.name, ok,
           f"worst={result.value:.2e} tol={result.tolerance:.0e} {result.detail} "
           f"time={result.seconds:.1f}s (budget {budget:.0f}s)")


def test_1_derivative_oracles(capsys):
    _check(capsys, 1, checks.check_derivatives(100), 30)


def test_2_metric_oracle(capsys):
    _check(capsys, 2, checks.check_metric(1000), 30)


def test_3_trust_region_oracle(capsys):
    _check(capsys, 3, checks.check_trust_region(50), 60)


def test_4_geodesic_ode_oracle(capsys):
    t0 = time.perf_counter()
    chris = checks.check_christoffel()
    energy = checks.check_geodesic_energy(tol=0.10)
    seconds = time.perf_counter() - t0
    ok = chris.passed and energy.passed and seconds < 120
    report(capsys, 4, "christoffel + geodesic energy", ok,
           f"christoffel err={chris.value:.1e} (tol 1e-4); energy |ratio-1|={energy.value:.3f} "
           f"(tol 0.10) {energy.detail}; time={seconds:.1f}s")


# -- MNIST experiments ---------------------------------------------------------------

@pytest.fixture(scope="module")
def mnist():
    return MnistSetup(path=str(mnist_path())).load()


@pytest.fixture(scope="module")
def lenet(mnist):
    return dense_reference(mnist, MnistSetup().train, LENET)


@requires_mnist
def test_5_sparsify_lenet_p90(capsys, mnist, lenet):
    arch, w, dense = lenet
    r = run_sparsify(mnist, arch, w, p=90.0)
    ok = (dense >= 0.96 and r["final_accuracy"] >= dense - 0.02
          and r["min_accuracy"] >= dense - 0.03 and r["sparsity"] >= 0.90)
    report(capsys, 5, "sparsify LeNet-300-100 to p=90", ok,
           f"dense={dense:.4f} final={r['final_accuracy']:.4f} path_min={r['min_accuracy']:.4f} "
           f"sparsity={r['sparsity']:.4f} steps={r['steps']} time={r['seconds']:.0f}s")


# half of the first hidden layer; baseline prunes one unit per stage with one retraining epoch
STRUCTURED = dict(layer=0, n_remove=150, ns=25)


@requires_mnist
def test_6_structured_efficiency(capsys, mnist, lenet):
    arch, w, _ = lenet
    r = run_structured(mnist, arch, w, retrain_epochs=1, **STRUCTURED)
    ratio = r["geo_data_epochs"] / r["baseline_epochs"]
    ok = r["geo_accuracy"] >= r["baseline_accuracy"] and ratio <= 0.5 and r["dead_units"] >= 150
    report(capsys, 6, "unit removal: geodesic vs prune-finetune", ok,
           f"geo={r['geo_accuracy']:.4f} baseline={r['baseline_accuracy']:.4f} "
           f"one-shot={r['one_shot_accuracy']:.4f} epochs geo={r['geo_data_epochs']:.2f} "
           f"(compute {r['geo_compute_epochs']:.1f}) baseline={r['baseline_epochs']} "
           f"ratio={ratio:.3f}")


@requires_mnist
def test_7_continual_permuted(capsys, mnist):
    t0 = time.perf_counter()
    two = run_continual(mnist, 2)
    five = run_continual(mnist, 5)
    seconds = time.perf_counter() - t0
    margin = two["final_mean"] - two["linear_best_mean"]
    frac = five["final_mean"] / five["ceiling"]
    ok = margin >= 0.05 and frac >= 0.85 and seconds < 45 * 60
    report(capsys, 7, "continual learning on permuted MNIST", ok,
           f"k=2 endpoint mean={two['final_mean']:.4f} best linear={two['linear_best_mean']:.4f} "
           f"margin={margin:.4f}; k=5 endpoint mean={five['final_mean']:.4f} "
           f"ceiling={five['ceiling']:.4f} fraction={frac:.3f}; time={seconds:.0f}s")


@requires_mnist
def test_8_mode_connectivity(capsys, mnist):
    t0 = time.perf_counter()
    seeds = run_modes(mnist)
    perm = run_modes(mnist, permuted=True)
    seconds = time.perf_counter() - t0
    ok = (seeds["geo_min_with_stitch"] >= seeds["linear_min"] + 0.05
          and perm["geo_min_with_stitch"] > perm["linear_min"] and seconds < 20 * 60)
    report(capsys, 8, "mode connectivity", ok,
           f"seeds: geo min={seeds['geo_min_with_stitch']:.4f} linear min={seeds['linear_min']:.4f} "
           f"({seeds['stop_reason']}, gap {seeds['final_gap']:.2g}); permuted: geo min="
           f"{perm['geo_min_with_stitch']:.4f} linear min={perm['linear_min']:.4f}; time={seconds:.0f}s")


# -- reproducibility -----------------------------------------------------------------------

def _runs(root, data):
    """One small CLI run of every walk-producing command, written under ``root``."""
    common = [*data, "--seed", "3"]
    assert run(["train", "--arch", "784-32-10", "--epochs", "2", *common, "--out", str(root / "a")]) == 0
    assert run(["train", "--arch", "784-32-10", "--epochs", "2", *data, "--seed", "4",
                "--out", str(root / "b")]) == 0
    a, b = str(root / "a" / "final.geow"), str(root / "b" / "final.geow")
    assert run(["sparsify", "--from", a, "--p", "80", "--max-steps", "300", *common,
                "--out", str(root / "s")]) == 0
    assert run(["connect", "--from", a, "--to", b, "--max-steps", "150", *common,
                "--out", str(root / "c")]) == 0
    assert run(["continual", "--arch", "784-32-10", "--tasks", "2", "--epochs", "2",
                "--max-steps", "150", "--max-task-drop", "0.1", *common, "--out", str(root / "k")]) == 0
    return sorted(p.relative_to(root) for p in root.rglob("*.csv"))


@requires_mnist
def test_9_reproducible_traces(capsys, tmp_path):
    data = ["--data", str(mnist_path()), "--n-train", "1000", "--n-test", "300"]
    files = _runs(tmp_path / "r1", data)
    assert files == _runs(tmp_path / "r2", data)
    differ = [str(f) for f in files
              if (tmp_path / "r1" / f).read_bytes() != (tmp_path / "r2" / f).read_bytes()]
    ok = len(files) >= 5 and not differ
    report(capsys, 9, "byte-identical trace CSVs on repeat", ok,
           f"{len(files)} CSV files compared, {len(differ)} differ {differ}")
