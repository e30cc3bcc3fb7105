import json
from pathlib import Path

import numpy as np
import pytest

import collapse_lab as cl
from collapse_lab.cli import cli_run
from collapse_lab.config import from_dict
from collapse_lab.errors import PersistError
from collapse_lab.integrator import run_trajectory
from collapse_lab.persist import (
    build_manifest,
    load_manifest,
    load_trajectory_csv,
    persist_run,
)
from collapse_lab.scenarios import builtin_scenario, realize


def small_qnd_config():
    d = builtin_scenario("qnd-two-level").to_dict()
    d["plan"]["n_steps"] = 400
    d["plan"]["record_every"] = 50
    return from_dict(d)


class TestPersist:
    def test_round_trip_series(self, tmp_path):
        cfg = small_qnd_config()
        sc = realize(cfg)
        rec = run_trajectory(sc, seed=9)
        manifest = build_manifest(cfg, [9], "trajectory")
        paths = persist_run([rec], manifest, tmp_path / "run")
        stored = load_trajectory_csv(
            paths["trajectory_seed9.csv"], manifest.trajectories[0]
        )
        assert np.allclose(stored.times, rec.times)
        assert np.allclose(stored.observables["sz"], rec.observables["sz"])
        assert np.allclose(stored.branch_weights["up"], rec.branch_weights["up"])
        assert np.allclose(stored.entropy_series["spin"], rec.entropy_series["spin"])
        assert stored.collapsed_branch == rec.collapsed_branch

    def test_idempotent_rewrite(self, tmp_path):
        cfg = small_qnd_config()
        sc = realize(cfg)
        rec = run_trajectory(sc, seed=9)
        out = tmp_path / "run"
        m1 = build_manifest(cfg, [9], "trajectory")
        persist_run([rec], m1, out)
        mtime = (out / "manifest.json").stat().st_mtime_ns
        m2 = build_manifest(cfg, [9], "trajectory")
        persist_run([rec], m2, out)  # no-op
        assert (out / "manifest.json").stat().st_mtime_ns == mtime

    def test_conflicting_manifest_refused(self, tmp_path):
        cfg = small_qnd_config()
        sc = realize(cfg)
        rec = run_trajectory(sc, seed=9)
        out = tmp_path / "run"
        persist_run([rec], build_manifest(cfg, [9], "trajectory"), out)
        rec2 = run_trajectory(sc, seed=10)
        with pytest.raises(PersistError):
            persist_run([rec2], build_manifest(cfg, [10], "trajectory"), out)

    def test_corrupt_manifest_not_overwritten(self, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        (out / "manifest.json").write_text("{broken")
        cfg = small_qnd_config()
        rec = run_trajectory(realize(cfg), seed=9)
        with pytest.raises(PersistError):
            persist_run([rec], build_manifest(cfg, [9], "trajectory"), out)

    def test_manifest_round_trip(self, tmp_path):
        cfg = small_qnd_config()
        rec = run_trajectory(realize(cfg), seed=9)
        out = tmp_path / "run"
        persist_run([rec], build_manifest(cfg, [9], "trajectory"), out)
        manifest = load_manifest(out)
        assert manifest.config_hash == cl.config_hash(cfg)
        rebuilt = from_dict(manifest.config)
        assert cl.config_hash(rebuilt) == manifest.config_hash


class TestCli:
    def write_config(self, tmp_path) -> Path:
        cfg = small_qnd_config()
        path = tmp_path / "qnd.json"
        path.write_text(cl.serialize(cfg))
        return path

    def test_run_byte_identical(self, tmp_path):
        cfg_path = self.write_config(tmp_path)
        code1 = cli_run(["run", "--config", str(cfg_path), "--seed", "7",
                         "--out-dir", str(tmp_path / "a"), "--quiet"])
        code2 = cli_run(["run", "--config", str(cfg_path), "--seed", "7",
                         "--out-dir", str(tmp_path / "b"), "--quiet"])
        assert code1 == 0 and code2 == 0
        b1 = (tmp_path / "a" / "trajectory_seed7.csv").read_bytes()
        b2 = (tmp_path / "b" / "trajectory_seed7.csv").read_bytes()
        assert b1 == b2

    def test_run_builtin_by_name(self, tmp_path):
        code = cli_run(["run", "--config", "beamsplitter",
                        "--out-dir", str(tmp_path / "bs"), "--quiet"])
        assert code == 0
        assert (tmp_path / "bs" / "manifest.json").exists()

    def test_validation_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        payload = json.loads(self.write_config(tmp_path).read_text())
        payload["space"]["subsystems"][0]["massess"] = 1.0
        bad.write_text(json.dumps(payload))
        code = cli_run(["run", "--config", str(bad), "--quiet"])
        assert code == 1

    def test_unknown_flag_exit_code(self):
        assert cli_run(["run", "--nonsense"]) == 1

    def test_numerical_error_exit_code(self, tmp_path):
        d = builtin_scenario("qnd-two-level").to_dict()
        d["plan"].update({"dt": 1.0, "n_steps": 10, "record_every": 1})
        path = tmp_path / "unstable.json"
        path.write_text(cl.serialize(from_dict(d)))
        code = cli_run(["run", "--config", str(path),
                        "--out-dir", str(tmp_path / "u"), "--quiet"])
        assert code == 2

    def test_entropy_subcommand(self, capsys):
        assert cli_run(["entropy", "--delta", "0.01"]) == 0
        out = capsys.readouterr().out
        assert "0.03148" in out and "0.03149" in out

    def test_analyze_subcommand(self, capsys):
        code = cli_run(["analyze", "--a", "1", "--t", "1", "--x-f", "1"])
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["point"]["closed"]["re"] == pytest.approx(0.2)
        assert payload["point"]["closed"]["im"] == pytest.approx(0.4)
        assert payload["point"]["relative_deviation"] < 1e-3

    def test_analyze_sweep_csv(self, tmp_path):
        code = cli_run(["analyze", "--a", "1", "--t", "1",
                        "--sweep-xf", "0.5", "2.0", "4",
                        "--out-dir", str(tmp_path), "--quiet"])
        assert code == 0
        lines = (tmp_path / "momentum_sweep.csv").read_text().strip().split("\n")
        assert lines[0].startswith("x_f,closed_re")
        assert len(lines) == 5

    def test_scenario_list(self, capsys):
        assert cli_run(["scenario", "list"]) == 0
        out = capsys.readouterr().out
        assert "qnd-two-level" in out and "beamsplitter" in out

    def test_scenario_show_round_trips(self, capsys, tmp_path):
        assert cli_run(["scenario", "show", "qnd-two-level"]) == 0
        text = capsys.readouterr().out
        path = tmp_path / "shown.json"
        path.write_text(text)
        cfg = cl.load_config(path)
        assert cfg.name == "qnd-two-level"

    def test_ensemble_and_audit_flow(self, tmp_path, capsys):
        cfg_path = self.write_config(tmp_path)
        out = tmp_path / "ens"
        code = cli_run(["ensemble", "--config", str(cfg_path), "--n-traj", "20",
                        "--seed", "50", "--out-dir", str(out),
                        "--keep-trajectories", "--quiet"])
        assert code == 0
        assert (out / "ensemble.json").exists()
        code = cli_run(["audit", "--run-dir", str(out)])
        assert code == 0
        report = json.loads((out / "audit.json").read_text())
        assert report["passed"] is True

    def test_audit_refusal_exit_three(self, tmp_path):
        d = builtin_scenario("qnd-two-level").to_dict()
        d["plan"]["n_steps"] = 200
        d["plan"]["record_every"] = 50
        d["operators"]["terms"].append(
            {"type": "external_potential", "subsystem": "pointer",
             "samples": [0.0, 0.1]}
        )
        cfg = from_dict(d)
        path = tmp_path / "ext.json"
        path.write_text(cl.serialize(cfg))
        out = tmp_path / "extrun"
        assert cli_run(["run", "--config", str(path), "--out-dir", str(out),
                        "--quiet"]) == 0
        assert cli_run(["audit", "--run-dir", str(out), "--quiet"]) == 3

    @pytest.mark.parametrize("name", [
        "qnd-two-level", "beamsplitter", "two-particle-collision",
        "stern-gerlach", "free-packet",
    ])
    def test_every_builtin_runs_default_plan_to_manifest(self, tmp_path, name):
        out = tmp_path / name
        code = cli_run(["run", "--config", name, "--out-dir", str(out), "--quiet"])
        assert code == 0
        manifest = load_manifest(out)
        assert manifest.kind == "trajectory"
        stored = load_trajectory_csv(
            out / manifest.trajectories[0]["file"], manifest.trajectories[0]
        )
        assert len(stored.times) >= 2

    def test_json_format_run(self, tmp_path):
        cfg_path = self.write_config(tmp_path)
        out = tmp_path / "jsonrun"
        code = cli_run(["run", "--config", str(cfg_path), "--seed", "3",
                        "--format", "json", "--out-dir", str(out), "--quiet"])
        assert code == 0
        payload = json.loads((out / "trajectory_seed3.json").read_text())
        assert "observables" in payload and "sz" in payload["observables"]
