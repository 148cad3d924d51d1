import numpy as np
import pytest

from geonet.cli import run
from geonet.io import load_checkpoint, read_config, read_trace_csv

DATA = ["--data", "synthetic:gaussians:3", "--n-train", "240", "--n-test", "60"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    for seed in (0, 5):
        assert run(["train", "--arch", "2-12-3", "--hidden", "tanh", *DATA, "--epochs", "15",
                    "--seed", str(seed), "--out", str(root / f"t{seed}")]) == 0
    return root


def test_train_outputs(trained):
    d = trained / "t0"
    assert {p.name for p in d.iterdir()} >= {"config.txt", "manifest.txt", "metrics.csv", "final.geow"}
    arch, w = load_checkpoint(d / "final.geow")
    assert str(arch) == "2-12-3"
    man = read_config(d / "manifest.txt")
    assert man["seed"] == "0" and man["version"]
    assert read_config(d / "config.txt")["epochs"] == "15"


def test_sparsify_end_to_end(trained, tmp_path):
    out = tmp_path / "s"
    assert run(["sparsify", "--from", str(trained / "t0" / "final.geow"), "--p", "90", "--ns", "10",
                "--eta", "0.02", *DATA, "--out", str(out)]) == 0
    rows = read_trace_csv(out / "trace.csv")
    assert rows[-1]["sparsity"] >= 0.90
    _, w = load_checkpoint(out / "final.geow")
    assert np.mean(w == 0) >= 0.90


def test_multi_seed_marks_shortest(trained, tmp_path, capsys):
    out = tmp_path / "m"
    assert run(["sparsify", "--from", str(trained / "t0" / "final.geow"), "--p", "50", "--ns", "10",
                "--eta", "0.05", *DATA, "--seeds", "1,2,3", "--out", str(out)]) == 0
    lines = (out / "paths.csv").read_text().splitlines()
    assert lines[0] == "seed,path_energy,steps,final_accuracy,stop_reason,selected"
    rows = [l.split(",") for l in lines[1:]]
    energies = [float(r[1]) for r in rows]
    assert [int(r[-1]) for r in rows] == [int(e == min(energies)) for e in energies]
    assert "shortest" in capsys.readouterr().out
    assert all((out / f"seed_{s}" / "trace.csv").exists() for s in (1, 2, 3))


def test_connect_and_linear(trained, tmp_path):
    a, b = str(trained / "t0" / "final.geow"), str(trained / "t5" / "final.geow")
    assert run(["connect", "--from", a, "--to", b, *DATA, "--max-steps", "30",
                "--out", str(tmp_path / "c")]) == 0
    assert run(["eval-linear", "--from", a, "--to", b, *DATA, "--points", "7",
                "--out", str(tmp_path / "l")]) == 0
    assert len(read_trace_csv(tmp_path / "l" / "trace.csv")) == 7


def test_continual_writes_stage_table(tmp_path):
    out = tmp_path / "k"
    assert run(["continual", "--arch", "2-12-3", "--hidden", "tanh", *DATA, "--tasks", "3",
                "--epochs", "5", "--max-steps", "20", "--out", str(out)]) == 0
    header = (out / "stage_accuracies.csv").read_text().splitlines()[0]
    assert header == "stage,acc_task_1,acc_task_2,acc_task_3,mean_seen"
    trace_header = (out / "trace_stage3.csv").read_text().splitlines()[0].split(",")
    assert trace_header[6:9] == ["acc_task_1", "acc_task_2", "acc_task_3"]


def test_repeat_run_identical_bytes(trained, tmp_path):
    args = ["sparsify", "--from", str(trained / "t0" / "final.geow"), "--p", "70", "--ns", "10",
            *DATA, "--seed", "4"]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert (tmp_path / "a" / "final.geow").read_bytes() == (tmp_path / "b" / "final.geow").read_bytes()


def test_oracle_check_quick(capsys):
    assert run(["oracle-check", "--level", "quick"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "FAIL" not in out


@pytest.mark.parametrize("argv", [[], ["bogus"], ["train"], ["sparsify", "--from", "x", "--out", "y"],
                                  ["oracle-check", "--level", "most"]])
def test_usage_errors_exit_2(argv, tmp_path):
    assert run(argv) == 2


def test_runtime_failure_exit_1(tmp_path, capsys):
    assert run(["eval-linear", "--from", str(tmp_path / "none.geow"), "--to", "x",
                "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "No such file" in err[0]


def test_arch_mismatch_exit_1(trained, tmp_path, capsys):
    assert run(["train", "--arch", "2-5-3", *DATA, "--epochs", "1", "--out", str(tmp_path / "o")]) == 0
    assert run(["eval-linear", "--from", str(trained / "t0" / "final.geow"),
                "--to", str(tmp_path / "o" / "final.geow"), *DATA, "--out", str(tmp_path / "e")]) == 1
    assert "arch mismatch" in capsys.readouterr().err
