"""Command-line interface tests: exit codes, reproducibility, config echo."""
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from qcseis import cli, qsim, seisdata
from qcseis.selftest import run_selftest


def sha_tree(root: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.iterdir()) if p.is_file()}


def run_cli(args):
    return cli.main(args)


class TestGenData:
    def test_split_counts(self, tmp_path, capsys):
        code = run_cli(["gen-data", "--task", "denoise", "--out", str(tmp_path / "d"),
                        "--n", "100", "--height", "32", "--width", "32", "--seed", "5"])
        assert code == 0
        summary = json.loads(capsys.readouterr().out.strip())
        assert summary["counts"] == {"train": 80, "val": 10, "test": 10}

    def test_same_seed_identical_sha(self, tmp_path, capsys):
        for sub in ("a", "b"):
            assert run_cli(["gen-data", "--task", "interpolation_regular",
                            "--out", str(tmp_path / sub), "--n", "10",
                            "--height", "32", "--width", "32", "--seed", "9"]) == 0
        assert sha_tree(tmp_path / "a") == sha_tree(tmp_path / "b")

    def test_small_dims_rejected(self, tmp_path):
        assert run_cli(["gen-data", "--task", "denoise", "--out", str(tmp_path / "x"),
                        "--n", "10", "--height", "7", "--width", "32"]) == cli.EXIT_CONFIG

    def test_env_seed_override(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("QCSEIS_SEED", "77")
        run_cli(["gen-data", "--task", "denoise", "--out", str(tmp_path / "a"),
                 "--n", "10", "--height", "32", "--width", "32", "--seed", "1"])
        monkeypatch.setenv("QCSEIS_SEED", "77")
        run_cli(["gen-data", "--task", "denoise", "--out", str(tmp_path / "b"),
                 "--n", "10", "--height", "32", "--width", "32", "--seed", "2"])
        assert sha_tree(tmp_path / "a") == sha_tree(tmp_path / "b")


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    assert cli.main(["gen-data", "--task", "interpolation_random", "--out", str(root),
                     "--n", "20", "--height", "32", "--width", "32", "--seed", "3"]) == 0
    return root


def train_config(data_dir, out_dir, epochs=2, quantum=True):
    return {
        "data": {"dir": str(data_dir), "task": "interpolation_random"},
        "model": {"family": "qcgan", "quantum": quantum, "blocks": 2, "base_channels": 8},
        "train": {"epochs": epochs, "batch_size": 8, "lr": 1e-4, "seed": 1,
                  "checkpoint_every": 1, "out_dir": str(out_dir)},
    }


class TestTrainCommand:
    def test_smoke_run_emits_artifacts(self, small_dataset, tmp_path, capsys):
        config = tmp_path / "run.json"
        out_dir = tmp_path / "run"
        config.write_text(json.dumps(train_config(small_dataset, out_dir)))
        assert run_cli(["train", "--config", str(config), "--workers", "1"]) == 0
        summary = json.loads(capsys.readouterr().out.strip())
        assert Path(summary["history"]).exists()
        assert Path(summary["last_checkpoint"]).exists()
        resolved = json.loads((out_dir / "resolved_config.json").read_text())
        assert resolved["train"]["epochs"] == 2
        assert resolved["model"]["quantum_fraction"] == 0.25  # defaults materialized
        history = (out_dir / "history.csv").read_text().splitlines()
        assert len(history) == 1 + 2 * 2  # header + (train, val) per epoch

    def test_unknown_config_key_rejected(self, small_dataset, tmp_path):
        doc = train_config(small_dataset, tmp_path / "o")
        doc["train"]["learning_rate"] = 1e-3
        config = tmp_path / "bad.json"
        config.write_text(json.dumps(doc))
        assert run_cli(["train", "--config", str(config)]) == cli.EXIT_CONFIG

    def test_missing_dataset_rejected(self, tmp_path):
        config = tmp_path / "no_data.json"
        config.write_text(json.dumps(train_config(tmp_path / "nowhere", tmp_path / "o")))
        assert run_cli(["train", "--config", str(config)]) == cli.EXIT_CONFIG

    def test_resume_continues_epochs(self, small_dataset, tmp_path, capsys):
        config = tmp_path / "short.json"
        out_dir = tmp_path / "short"
        config.write_text(json.dumps(train_config(small_dataset, out_dir, epochs=1)))
        assert run_cli(["train", "--config", str(config), "--workers", "1"]) == 0
        capsys.readouterr()
        config2 = tmp_path / "longer.json"
        config2.write_text(json.dumps(train_config(small_dataset, out_dir, epochs=2)))
        assert run_cli(["train", "--config", str(config2), "--workers", "1",
                        "--resume", str(out_dir / "last.qckp")]) == 0
        capsys.readouterr()
        history = (out_dir / "history.csv").read_text().splitlines()
        epochs_logged = {row.split(",")[0] for row in history[1:]}
        assert epochs_logged == {"1", "2"}

    def test_quantum_twin_configs_differ_by_one_flag(self, small_dataset, tmp_path, capsys):
        for quantum in (True, False):
            config = tmp_path / f"twin_{quantum}.json"
            config.write_text(json.dumps(
                train_config(small_dataset, tmp_path / f"twin_{quantum}",
                             epochs=1, quantum=quantum)))
            assert run_cli(["train", "--config", str(config), "--workers", "1"]) == 0
            capsys.readouterr()

    def test_quantum_checkpoint_rejected_for_classical_resume(self, small_dataset, tmp_path, capsys):
        quantum_out = tmp_path / "twin_True"
        if not (quantum_out / "last.qckp").exists():
            config = tmp_path / "q.json"
            config.write_text(json.dumps(train_config(small_dataset, quantum_out, epochs=1)))
            assert run_cli(["train", "--config", str(config), "--workers", "1"]) == 0
            capsys.readouterr()
        config = tmp_path / "c.json"
        config.write_text(json.dumps(
            train_config(small_dataset, tmp_path / "c_out", epochs=1, quantum=False)))
        code = run_cli(["train", "--config", str(config), "--workers", "1",
                        "--resume", str(quantum_out / "last.qckp")])
        assert code == cli.EXIT_MISMATCH


@pytest.fixture(scope="module")
def trained(small_dataset, tmp_path_factory):
    out_dir = tmp_path_factory.mktemp("trained")
    config = out_dir / "cfg.json"
    config.write_text(json.dumps(train_config(small_dataset, out_dir / "run", epochs=1)))
    assert cli.main(["train", "--config", str(config), "--workers", "1"]) == 0
    return out_dir / "run" / "last.qckp"


class TestEvalCommand:
    def test_report_rows(self, trained, small_dataset, tmp_path, capsys):
        report = tmp_path / "report.csv"
        code = run_cli(["eval", "--checkpoint", str(trained), "--data", str(small_dataset),
                        "--report", str(report)])
        assert code == 0
        lines = report.read_text().strip().splitlines()
        n_test = len(seisdata.load_split(small_dataset, "test"))
        assert lines[0] == "sample_id,mae,rmse,psnr_db,ssim"
        assert len(lines) == 1 + n_test + 1

    def test_spectra_dumps(self, trained, small_dataset, tmp_path, capsys):
        report = tmp_path / "report2.csv"
        spectra = tmp_path / "spectra"
        code = run_cli(["eval", "--checkpoint", str(trained), "--data", str(small_dataset),
                        "--report", str(report), "--spectra-dir", str(spectra)])
        assert code == 0
        n_test = len(seisdata.load_split(small_dataset, "test"))
        assert len(list(spectra.glob("amp_spectrum_*.csv"))) == n_test
        assert len(list(spectra.glob("fk_pred_*.csv"))) == n_test

    def test_task_mismatch_exit_code(self, trained, tmp_path, capsys):
        other = tmp_path / "lfe_data"
        assert cli.main(["gen-data", "--task", "lfe", "--out", str(other), "--n", "10",
                         "--height", "32", "--width", "32", "--seed", "1"]) == 0
        capsys.readouterr()
        code = run_cli(["eval", "--checkpoint", str(trained), "--data", str(other),
                        "--report", str(tmp_path / "r.csv")])
        assert code == cli.EXIT_MISMATCH


class TestSelftestCommand:
    def test_fresh_build_passes(self, capsys):
        assert run_cli(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "[PASS] qsim_norm_preservation" in out
        # both readings of the quality-ratio convention are reported side by side
        assert "20*log10" in out and "10*log10" in out

    def test_injected_fault_detected(self, monkeypatch):
        # perturb one entry of the y-rotation matrix: the norm/unitarity
        # checks must flag it (raised or measured, either way a FAIL)
        def crooked(theta):
            half = 0.5 * float(theta)
            return float(np.cos(half)) + 1e-6, float(np.sin(half))

        monkeypatch.setattr(qsim, "_ry_entries", crooked)
        results = {r.name: r for r in run_selftest(include_grad_checks=False)}
        assert not results["qsim_norm_preservation"].passed

    def test_selftest_api_reports_failure(self, monkeypatch):
        def crooked(theta):
            half = 0.5 * float(theta)
            return float(np.cos(half)), float(np.sin(half)) * (1 + 2e-7)

        monkeypatch.setattr(qsim, "_ry_entries", crooked)
        results = run_selftest(include_grad_checks=False)
        failed = [r.name for r in results if not r.passed]
        assert failed and all(name.startswith(("qsim", "parameter_shift", "qlayer"))
                              for name in failed)
