import itertools

import numpy as np
import pytest

from geonet.applications import (AccuracyFloorError, CountingBatch, SparseTarget, UnitTarget,
                                 connect_modes, continual, geodesic_epochs, is_sparse,
                                 linear_path_eval, permute_hidden_units, project_sparse,
                                 prune_finetune_baseline, sparsify, unit_blocks)
from geonet.data import TaskDataset, make_synthetic
from geonet.geodesic import GeoConfig
from geonet.nn import ArchSpec, TrainOptions, forward, loss_and_accuracy, sgd_train


@pytest.fixture(scope="module")
def blobs():
    ds = make_synthetic("gaussians", 60, 3, seed=4, spread=0.8)
    arch = ArchSpec.mlp([2, 8, 3], hidden="tanh")
    w = sgd_train(arch, ds.train, TrainOptions(lr=0.05, epochs=30, batch_size=16, seed=0))
    return arch, w, ds


# -- projection ---------------------------------------------------------------

def test_projection_example():
    assert project_sparse([3, -1, 0.5, 2], 50).tolist() == [3, 0, 0, 2]


def test_projection_ties_keep_lower_index():
    assert project_sparse([1, -1, 1, 1], 50).tolist() == [1, -1, 0, 0]


@pytest.mark.parametrize("p", [0, 100, -5, 120])
def test_projection_range(p):
    with pytest.raises(ValueError):
        project_sparse([1.0, 2.0], p)


def test_projection_idempotent_and_non_expansive(rng):
    for _ in range(100):
        w = rng.normal(size=int(rng.integers(20, 60)))
        p = float(rng.uniform(1, 95))
        out = project_sparse(w, p)
        assert is_sparse(out, p)
        assert np.array_equal(project_sparse(out, p), out)
        assert np.linalg.norm(out) <= np.linalg.norm(w)
        assert np.count_nonzero(out) <= w.size * (1 - p / 100) + 1e-9


def test_projection_brute_force_length_6(rng):
    for _ in range(50):
        w = rng.normal(size=6)
        for p in (10, 34, 50, 67, 80):
            out = project_sparse(w, p)
            keep = np.count_nonzero(out)
            best = min(np.linalg.norm(w - np.where(np.isin(np.arange(6), S), w, 0.0))
                       for S in itertools.combinations(range(6), keep))
            assert np.linalg.norm(w - out) == pytest.approx(best, abs=1e-15)


# -- unit blocks -------------------------------------------------------------------

def test_unit_blocks_partition_the_unit_weights():
    arch = ArchSpec.parse("4-3-2")
    blocks = unit_blocks(arch, 0)
    assert len(blocks) == 3
    flat = np.concatenate(blocks)
    assert len(set(flat.tolist())) == len(flat) == 3 * (4 + 1 + 2)
    w = np.arange(arch.n_params, dtype=float) + 1
    (W1, b1), (W2, _) = arch.unflatten(w)
    assert sorted(w[blocks[1]].tolist()) == sorted(W1[1].tolist() + [b1[1]] + W2[:, 1].tolist())
    with pytest.raises(ValueError):
        unit_blocks(arch, 1)


def test_unit_target_project_removes_weakest_units():
    arch = ArchSpec.parse("4-3-2")
    t = UnitTarget(arch, 0, 2)
    w = np.ones(arch.n_params)
    w[t.blocks[1]] = 0.1
    w[t.blocks[2]] = 0.2
    out = t.project(w)
    assert t.n_dead(out) == 2 and t.contains(out)
    assert np.all(out[t.blocks[0]] == 1)
    # removing a unit leaves the function of the others untouched
    x = np.ones(4)
    (W1, b1), (W2, b2) = arch.unflatten(out)
    h = np.maximum(W1 @ x + b1, 0)
    np.testing.assert_allclose(forward(arch, out, x), W2[:, 0] * h[0] + b2)


# -- sparsify ----------------------------------------------------------------------

def test_sparsify_already_sparse_returns_immediately(blobs):
    arch, w, ds = blobs
    w0 = w.copy()
    w0[0] = 0.0
    tr = sparsify(arch, w0, ds, SparseTarget(1e-6), GeoConfig())
    assert tr.n_steps == 0 and tr.stop_reason == "arrived"
    assert np.array_equal(tr.final, w0)


def test_sparsify_exact_support_and_stable_targets(blobs):
    arch, w, ds = blobs
    target = SparseTarget(60, reproject_every=10)
    cfg = GeoConfig(eta=0.02, metric_batch=32, max_steps=2000)
    tr = sparsify(arch, w, ds, target, cfg)
    n = arch.n_params
    assert np.count_nonzero(tr.final) <= n - int(np.ceil(0.6 * n))
    assert tr.forced_snap == 0.0 and tr.stop_reason == "arrived"
    assert tr.records[-1]["sparsity"] >= 0.6
    # targets drawn at each reprojection: once a coordinate is zeroed it stays zeroed
    zero_sets = [frozenset(np.flatnonzero(target.project(c) == 0))
                 for s, c in zip(tr.checkpoint_steps, tr.checkpoints) if s % 10 == 0]
    assert zero_sets[-1] == frozenset(np.flatnonzero(tr.final == 0))
    stable = [a == b for a, b in zip(zero_sets, zero_sets[1:])]
    assert sum(stable) >= len(stable) - 2


def test_sparsify_budget_exhausted_forces_projection(blobs):
    arch, w, ds = blobs
    tr = sparsify(arch, w, ds, SparseTarget(80, 5), GeoConfig(eta=0.01, max_steps=3))
    assert tr.stop_reason == "max_steps"
    assert tr.forced_snap > 0 and is_sparse(tr.final, 80)
    assert np.isnan(tr.records[-1]["quad_form"])


def test_sparsify_accuracy_floor(blobs):
    arch, w, ds = blobs
    with pytest.raises(AccuracyFloorError):
        sparsify(arch, np.zeros(arch.n_params), ds, SparseTarget(50), GeoConfig(),
                 accuracy_floor=0.9)


def test_sparsify_unit_target_records_dead_units(blobs):
    arch, w, ds = blobs
    target = UnitTarget(arch, 0, 3, reproject_every=10)
    tr = sparsify(arch, w, ds, target, GeoConfig(eta=0.02, metric_batch=32, max_steps=2000))
    assert target.contains(tr.final)
    assert tr.records[-1]["dead_units"] >= 3
    assert geodesic_epochs(tr, len(ds.train)) == tr.metric_samples / len(ds.train)


# -- prune-finetune baseline ----------------------------------------------------------

def test_baseline_without_retraining_is_one_shot(blobs):
    arch, w, ds = blobs
    for stages in (1, 5):
        tr = prune_finetune_baseline(arch, w, ds, SparseTarget(70), TrainOptions(),
                                     retrain_epochs=0, n_stages=stages)
        assert np.array_equal(tr.final, project_sparse(w, 70))
        assert tr.total_epochs == 0


def test_baseline_epoch_bookkeeping_and_quality(blobs):
    arch, w, ds = blobs
    opts = TrainOptions(lr=0.05, batch_size=16, seed=3)
    tr = prune_finetune_baseline(arch, w, ds, SparseTarget(70), opts, retrain_epochs=2, n_stages=4)
    assert tr.total_epochs == 8
    assert [r["epochs"] for r in tr.records] == [0, 2, 4, 6, 8]
    assert is_sparse(tr.final, 70)
    one_shot = loss_and_accuracy(arch, project_sparse(w, 70), ds.test)[1]
    assert tr.records[-1]["accuracy"] >= one_shot
    ut = UnitTarget(arch, 0, 4)
    tr = prune_finetune_baseline(arch, w, ds, ut, opts, retrain_epochs=1)
    assert tr.total_epochs == 4 and ut.n_dead(tr.final) >= 4


# -- continual -----------------------------------------------------------------------

def shifted_task(ds, k, name):
    from geonet.nn import Batch
    rot = np.array([[np.cos(k), -np.sin(k)], [np.sin(k), np.cos(k)]])
    return TaskDataset(Batch(ds.train.inputs @ rot.T, ds.train.labels),
                       Batch(ds.test.inputs @ rot.T, ds.test.labels), name=name)


def test_continual_single_task_is_plain_training(blobs):
    arch, _, ds = blobs
    opts = TrainOptions(lr=0.05, epochs=5, batch_size=16, seed=2)
    res = continual(arch, [ds], GeoConfig(), opts)
    assert res.traces == []
    np.testing.assert_array_equal(res.w_final, sgd_train(arch, ds.train, opts))


def test_continual_identical_tasks_no_interference(blobs):
    arch, _, ds = blobs
    opts = TrainOptions(lr=0.05, epochs=20, batch_size=16, seed=2)
    res = continual(arch, [ds, ds], GeoConfig(eta=0.02, metric_batch=32, max_steps=400), opts)
    final_acc = loss_and_accuracy(arch, res.w_final, ds.test)[1]
    assert final_acc >= min(res.single_task) - 0.005
    assert len(res.stage_accuracies) == 2


def test_continual_metric_uses_only_current_task(blobs):
    arch, _, ds = blobs
    tasks = [shifted_task(ds, k, f"t{k}") for k in range(3)]
    trained = [sgd_train(arch, t.train, TrainOptions(epochs=5, batch_size=16, seed=k))
               for k, t in enumerate(tasks)]
    counters = []
    for t in tasks:
        c = CountingBatch(t.train)
        object.__setattr__(t, "train", c)
        counters.append(c)
    snaps = []
    continual(arch, tasks, GeoConfig(eta=0.05, max_steps=10, metric_batch=8), TrainOptions(),
              trained=trained, on_stage=lambda i, tr: snaps.append([c.reads for c in counters]))
    first = snaps[0]
    assert first[1] > first[0] == first[2]
    changed = [j for j in range(3) if snaps[1][j] != snaps[0][j]]
    assert changed == [2]


def test_continual_task_drop_budget(blobs):
    arch, _, ds = blobs
    tasks = [shifted_task(ds, k, f"t{k}") for k in (0, 2)]
    trained = [sgd_train(arch, t.train, TrainOptions(epochs=20, batch_size=16, seed=k))
               for k, t in enumerate(tasks)]
    start = loss_and_accuracy(arch, trained[1], tasks[1].train)[1]
    res = continual(arch, tasks, GeoConfig(eta=0.05, max_steps=2000, metric_batch=16),
                    TrainOptions(), trained=trained, max_task_drop=0.1, monitor_rows=10_000)
    tr = res.traces[0]
    mon = tr.column("monitor_accuracy")
    assert tr.stop_reason == "criterion"
    assert mon[-1] < start - 0.1 and np.all(mon[:-1] >= start - 0.1)
    # without the budget the same walk runs on to the previous network
    res = continual(arch, tasks, GeoConfig(eta=0.05, max_steps=2000, metric_batch=16),
                    TrainOptions(), trained=trained)
    assert res.traces[0].stop_reason == "arrived"
    assert "monitor_accuracy" not in res.traces[0].records[0]


def test_continual_rejects_mismatched_task(blobs):
    arch, _, ds = blobs
    bad = make_synthetic("gaussians", 10, 5, seed=0)
    with pytest.raises(ValueError):
        continual(arch, [ds, bad], GeoConfig(), TrainOptions())


# -- mode connectivity ------------------------------------------------------------------

def test_connect_same_network_single_point(blobs):
    arch, w, ds = blobs
    tr = connect_modes(arch, w, w, ds, GeoConfig())
    assert len(tr.checkpoints) == 1 and tr.stop_reason == "arrived"


def test_linear_path_endpoints_and_shared_evaluation(blobs):
    arch, w, ds = blobs
    w2 = sgd_train(arch, ds.train, TrainOptions(lr=0.05, epochs=30, batch_size=16, seed=9))
    lin = linear_path_eval(arch, w, w2, ds, n_points=25)
    assert len(lin.records) == 25
    for r, ww in ((lin.records[0], w), (lin.records[-1], w2)):
        loss, acc = loss_and_accuracy(arch, ww, ds.test)
        assert (r["loss"], r["accuracy"]) == (loss, acc)
    two = linear_path_eval(arch, w, w2, ds, n_points=2)
    assert len(two.checkpoints) == 2
    with pytest.raises(ValueError):
        linear_path_eval(arch, w, w2, ds, n_points=1)
    geo_tr = connect_modes(arch, w, w2, ds, GeoConfig(eta=0.05, max_steps=3))
    assert (geo_tr.records[0]["loss"], geo_tr.records[0]["accuracy"]) == \
        (lin.records[0]["loss"], lin.records[0]["accuracy"])
    with pytest.raises(ValueError):
        connect_modes(arch, w, w2[:-1], ds, GeoConfig())


def test_permute_hidden_units_preserves_function(blobs, rng):
    arch = ArchSpec.parse("3-5-4-2")
    w = rng.normal(size=arch.n_params)
    wp = permute_hidden_units(arch, w, seed=1)
    X = rng.normal(size=(10, 3))
    np.testing.assert_allclose(forward(arch, wp, X), forward(arch, w, X), rtol=1e-13, atol=1e-13)
    assert not np.array_equal(w, wp)
    assert sorted(w.tolist()) == sorted(wp.tolist())
