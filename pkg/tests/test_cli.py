"""End-to-end command-line pipeline: synth, train, attribute, loo, compare."""

import json

import numpy as np
import pytest

from vifkit.cli import main, read_checkpoint, write_checkpoint


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def stderr_payload(err):
    return json.loads(err.strip().splitlines()[-1])


@pytest.fixture
def cox_run(tmp_path):
    out = tmp_path / "run"
    cfg = {
        "scenario": "cox",
        "seed": 7,
        "out": str(out),
        "synth": {"n": 60, "d": 3, "censor_rate": 0.2, "n_test": 6},
        "train": {"optimizer": "newton", "epochs": 50},
    }
    cfg_path = tmp_path / "cox.json"
    cfg_path.write_text(json.dumps(cfg))
    return cfg, cfg_path, out


class TestPipeline:
    def test_full_cox_pipeline(self, capsys, cox_run):
        cfg, cfg_path, out = cox_run
        for cmd in ("synth", "train", "attribute", "loo"):
            code, _, err = run(capsys, cmd, "--config", str(cfg_path))
            assert code == 0, f"{cmd} failed: {err}"
        code, _, _ = run(capsys, "compare", "--config", str(cfg_path))
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["pearson_r"] > 0.9
        assert summary["n_pairs"] == 60 * 6
        assert summary["improvement_ratio"] > 1.0
        assert summary["config_hash"]
        # merged influence table now carries both columns
        header, first = (out / "influences.csv").read_text().splitlines()[:2]
        assert header == "object_id,test_id,vif,loo"
        assert first.count(",") == 3 and not first.endswith(",")

    def test_attribute_outputs_byte_identical(self, capsys, cox_run):
        cfg, cfg_path, out = cox_run
        run(capsys, "synth", "--config", str(cfg_path))
        run(capsys, "train", "--config", str(cfg_path))
        assert run(capsys, "attribute", "--config", str(cfg_path))[0] == 0
        first = (out / "influences.csv").read_bytes()
        assert run(capsys, "attribute", "--config", str(cfg_path))[0] == 0
        assert (out / "influences.csv").read_bytes() == first

    def test_loo_jobs_do_not_change_bytes(self, capsys, cox_run):
        cfg, cfg_path, out = cox_run
        run(capsys, "synth", "--config", str(cfg_path))
        run(capsys, "train", "--config", str(cfg_path))
        assert run(capsys, "loo", "--config", str(cfg_path), "--jobs", "1")[0] == 0
        seq = (out / "loo.csv").read_bytes()
        assert run(capsys, "loo", "--config", str(cfg_path), "--jobs", "3")[0] == 0
        assert (out / "loo.csv").read_bytes() == seq

    def test_cg_solver_flag(self, capsys, cox_run):
        cfg, cfg_path, out = cox_run
        run(capsys, "synth", "--config", str(cfg_path))
        run(capsys, "train", "--config", str(cfg_path))
        code, _, err = run(capsys, "attribute", "--config", str(cfg_path),
                           "--solver", "cg")
        assert code == 0, err
        meta = json.loads((out / "attribute_meta.json").read_text())
        assert meta["config"]["solver"]["strategy"] == "cg"


class TestGuards:
    def test_checkpoint_hash_mismatch_refused(self, capsys, cox_run, tmp_path):
        cfg, cfg_path, out = cox_run
        run(capsys, "synth", "--config", str(cfg_path))
        run(capsys, "train", "--config", str(cfg_path))
        drifted = dict(cfg, seed=8)
        drifted_path = tmp_path / "drifted.json"
        drifted_path.write_text(json.dumps(drifted))
        code, _, err = run(capsys, "attribute", "--config", str(drifted_path))
        assert code == 1
        payload = stderr_payload(err)
        assert payload["exit_code"] == 1
        assert "hash" in payload["message"]

    def test_compare_hash_mismatch_needs_force(self, capsys, cox_run):
        cfg, cfg_path, out = cox_run
        for cmd in ("synth", "train", "attribute", "loo"):
            run(capsys, cmd, "--config", str(cfg_path))
        meta_path = out / "loo_meta.json"
        meta = json.loads(meta_path.read_text())
        meta["config_hash"] = "0" * 64
        meta_path.write_text(json.dumps(meta))
        code, _, err = run(capsys, "compare", "--config", str(cfg_path))
        assert code == 1
        assert "--force" in stderr_payload(err)["message"]
        code, _, _ = run(capsys, "compare", "--config", str(cfg_path), "--force")
        assert code == 0
        assert (out / "summary.json").exists()

    def test_loo_without_checkpoint_is_data_error(self, capsys, cox_run):
        cfg, cfg_path, out = cox_run
        run(capsys, "synth", "--config", str(cfg_path))
        code, _, err = run(capsys, "loo", "--config", str(cfg_path))
        assert code == 2
        assert stderr_payload(err)["error"] == "DataError"


class TestExitCodes:
    def test_missing_config_file_is_config_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "train", "--config", str(tmp_path / "nope.json"))
        assert code == 1
        assert stderr_payload(err)["error"] == "ConfigError"

    def test_missing_seed_is_config_error(self, capsys, tmp_path):
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({
            "scenario": "cox", "out": str(tmp_path / "o"),
            "synth": {"n": 10, "d": 2, "censor_rate": 0.0, "n_test": 2},
        }))
        code, _, err = run(capsys, "synth", "--config", str(cfg_path))
        assert code == 1
        assert "seed" in stderr_payload(err)["message"]

    def test_corrupt_data_is_data_error(self, capsys, cox_run):
        cfg, cfg_path, out = cox_run
        run(capsys, "synth", "--config", str(cfg_path))
        (out / "survival.csv").write_text("y,delta,x1\n1.0,1,oops\n")
        code, _, err = run(capsys, "train", "--config", str(cfg_path))
        assert code == 2
        assert stderr_payload(err)["error"] == "DataError"

    def test_degenerate_problem_is_numerical_error(self, capsys, tmp_path):
        # duplicated feature column: singular Hessian, nonzero gradient
        out = tmp_path / "run"
        out.mkdir()
        rng = np.random.default_rng(4)
        rows = ["y,delta,x1,x2"]
        for i in range(12):
            x = rng.standard_normal()
            rows.append(f"{float(i + 1)!r},1,{x!r},{x!r}")
        (out / "survival.csv").write_text("\n".join(rows) + "\n")
        (out / "survival_test.csv").write_text("y,delta,x1,x2\n99.0,1,0.5,0.5\n")
        cfg_path = tmp_path / "c.json"
        cfg_path.write_text(json.dumps({
            "scenario": "cox", "seed": 1, "out": str(out),
            "train": {"optimizer": "newton", "epochs": 10},
        }))
        # training tolerates the singular Hessian via escalating damping
        assert run(capsys, "train", "--config", str(cfg_path))[0] == 0
        # the undamped explicit solve cannot
        code, _, err = run(capsys, "attribute", "--config", str(cfg_path))
        assert code == 3
        payload = stderr_payload(err)
        assert payload["exit_code"] == 3
        assert payload["error"] == "SingularMatrixError"

    def test_usage_error_is_exit_one(self, capsys):
        code, _, err = run(capsys, "explode")
        assert code == 1

    def test_bad_log_level_rejected(self, capsys, monkeypatch, cox_run):
        _, cfg_path, _ = cox_run
        monkeypatch.setenv("VIF_LOG", "chatty")
        code, _, err = run(capsys, "synth", "--config", str(cfg_path))
        assert code == 1
        assert "VIF_LOG" in stderr_payload(err)["message"]


class TestCheckpointFormat:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "model.ckpt"
        theta = np.random.default_rng(0).standard_normal(17)
        extra = {
            "config_hash": "f" * 64,
            "diagnostics": {"grad_norm": 1e-9, "converged": True},
        }
        write_checkpoint(str(path), theta, {"theta": (0, 17)}, extra)
        loaded_theta, header = read_checkpoint(str(path))
        assert header["format"] == "vif-checkpoint-v1"
        assert header["config_hash"] == "f" * 64
        assert header["layout"] == {"theta": [0, 17]}
        np.testing.assert_array_equal(loaded_theta, theta)

    def test_train_writes_readable_checkpoint(self, capsys, cox_run):
        cfg, cfg_path, out = cox_run
        run(capsys, "synth", "--config", str(cfg_path))
        assert run(capsys, "train", "--config", str(cfg_path))[0] == 0
        theta, header = read_checkpoint(str(out / "checkpoint.bin"))
        assert header["dim"] == 3 == theta.shape[0]
        assert header["converged"] is True
        assert header["grad_norm"] < 1e-6


class TestCheck:
    def test_check_reports_small_errors(self, capsys, cox_run):
        cfg, cfg_path, out = cox_run
        run(capsys, "synth", "--config", str(cfg_path))
        code, stdout, _ = run(capsys, "check", "--config", str(cfg_path),
                              "--trials", "3")
        assert code == 0
        report = json.loads(stdout)
        assert report["grad_ok"] and report["hess_ok"]
        assert report["max_grad_error"] <= 1e-4
        assert len(report["trials"]) == 3
        saved = json.loads((out / "check_report.json").read_text())
        assert saved["max_hess_error"] == report["max_hess_error"]
