import json
import subprocess
import sys

import pytest

from parawave.cli import DEFAULTS, ConfigError, config_hash, header_line, load_config, main


def write_cfg(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(kw))
    return str(p)


class TestConfig:
    def test_defaults_without_file(self):
        cfg = load_config(None)
        assert set(cfg) == set(DEFAULTS)
        assert cfg["physics.kappa"] == 1.0 and cfg["lifespan.eps_list"] == [0.1, 0.05, 0.025]

    def test_overlay_and_int_to_float(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path, **{"physics.kappa": 2, "grid.n_max": 16}))
        assert cfg["physics.kappa"] == 2.0 and isinstance(cfg["physics.kappa"], float)
        assert cfg["grid.n_max"] == 16

    @pytest.mark.parametrize("raw", [{"physics.kapa": 1.0}, {"grid.n_max": 1.5},
                                     {"sim.dealias": 1}, {"lifespan.eps_list": []},
                                     {"sim.scheme": 3}])
    def test_rejects_bad_entries(self, tmp_path, raw):
        with pytest.raises(ConfigError):
            load_config(write_cfg(tmp_path, **raw))

    def test_missing_and_malformed_files(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "nope.json"))
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(str(bad))
        bad.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config(str(bad))

    def test_hash_depends_on_values_only(self):
        a = load_config(None)
        b = dict(reversed(list(a.items())))
        assert config_hash(a) == config_hash(b)
        b["seed"] = 1
        assert config_hash(a) != config_hash(b)

    def test_header_fields(self):
        cfg = load_config(None)
        h = header_line("blocks", cfg)
        assert h.startswith("# command=blocks ")
        for part in (f"config_sha256={config_hash(cfg)}", "kappa=1", "n_max=32", "seed=0",
                     "git="):
            assert part in h


class TestExitCodes:
    def test_unknown_key_exits_2_with_error_json(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["resonance-scan", "--config", write_cfg(tmp_path, bogus=1), "--out", str(out)])
        assert code == 2
        err = json.loads((out / "error.json").read_text())
        assert err["code"] == "config" and "bogus" in err["message"]
        assert json.loads(capsys.readouterr().err.strip()) == err

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["blocks", "--config", str(tmp_path / "x.json"), "--out", str(tmp_path)]) == 2

    def test_library_validation_exits_2(self, tmp_path):
        cfg = write_cfg(tmp_path, **{"physics.kappa": -1.0, "scan.K": 3})
        assert main(["resonance-scan", "--config", cfg, "--out", str(tmp_path / "o")]) == 2

    def test_bad_jobs_exits_2(self, tmp_path):
        assert main(["resonance-scan", "--jobs", "0", "--out", str(tmp_path)]) == 2

    def test_numerical_failure_exits_3(self, tmp_path):
        cfg = write_cfg(tmp_path, **{"grid.n_max": 16, "sim.scheme": "rk4", "sim.dt": 0.5,
                                     "sim.t_end": 2.0, "sim.snapshot_every": 1})
        out = tmp_path / "out"
        assert main(["simulate", "--config", cfg, "--out", str(out)]) == 3
        err = json.loads((out / "error.json").read_text())
        assert err["code"] == "instability"
        assert (out / "run.csv").exists()

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2


class TestCommands:
    def test_resonance_scan_artifacts(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, **{"scan.K": 10, "physics.kappa": 0.7})
        out = tmp_path / "out"
        assert main(["resonance-scan", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "resonance-scan.csv").read_text().splitlines()
        assert lines[0].startswith("# command=resonance-scan ")
        assert lines[1] == "kappa,K,empirical_c,j1,j2,k1,k2,s1,s2,divisor"
        row = lines[2].split(",")
        assert float(row[0]) == 0.7 and int(row[1]) == 10 and float(row[2]) > 0
        assert "empirical_c=" in capsys.readouterr().out

    def test_resonance_scan_reports_exact_resonance_at_unit_kappa(self, tmp_path):
        # with g = kappa = 1, 2 Lambda(5) = Lambda(8): 4 (5 + 125) = 8 + 512
        cfg = write_cfg(tmp_path, **{"scan.K": 10, "physics.kappa": 1.0})
        assert main(["resonance-scan", "--config", cfg, "--out", str(tmp_path)]) == 0
        rows = [l.split(",") for l in (tmp_path / "resonance-scan.csv").read_text().splitlines()[2:]]
        assert float(rows[0][2]) == 0.0 and len(rows) > 1
        j1, j2, k1, k2 = (int(v) for v in rows[0][3:7])
        assert {j1 * j1 + j2 * j2, k1 * k1 + k2 * k2} <= {25, 64}

    def test_outputs_reproducible(self, tmp_path):
        cfg = write_cfg(tmp_path, **{"scan.K": 6, "physics.kappa": 0.8})
        texts = []
        for name in ("a", "b"):
            assert main(["resonance-scan", "--config", cfg, "--out", str(tmp_path / name)]) == 0
            texts.append((tmp_path / name / "resonance-scan.csv").read_text())
        assert texts[0] == texts[1]

    def test_dno_verify_passes(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, **{"grid.n_max": 16})
        assert main(["dno-verify", "--config", cfg, "--out", str(tmp_path)]) == 0
        stdout = capsys.readouterr().out
        assert "flat_defect<=1e-10 PASS" in stdout
        assert "analytic_rel_error<=1e-6 PASS" in stdout

    def test_kappa_scan_rows(self, tmp_path):
        cfg = write_cfg(tmp_path, **{"scan.K": 4, "scan.kappa_count": 3})
        assert main(["kappa-scan", "--config", cfg, "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "kappa-scan.csv").read_text().splitlines()
        assert len(lines) == 2 + 3
        assert [float(l.split(",")[0]) for l in lines[2:]] == [0.5, 1.0, 1.5]

    def test_blocks_export_has_header(self, tmp_path):
        cfg = write_cfg(tmp_path, **{"blocks.radius": 12})
        assert main(["blocks", "--config", cfg, "--out", str(tmp_path)]) == 0
        assert (tmp_path / "blocks.txt").read_text().startswith("# command=blocks ")

    def test_simulate_short_run(self, tmp_path):
        cfg = write_cfg(tmp_path, **{"grid.n_max": 16, "sim.t_end": 0.05, "sim.dt": 0.01,
                                     "sim.snapshot_every": 5})
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "run.csv").read_text().splitlines()
        assert lines[0].startswith("# command=simulate ") and len(lines) == 2 + 2
        assert "hamiltonian_rel_drift=" in (tmp_path / "simulate.txt").read_text()


def test_console_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, **{"scan.K": 3})
    proc = subprocess.run([sys.executable, "-m", "parawave.cli", "resonance-scan", "--config", cfg,
                           "--out", str(tmp_path)], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("empirical_c=")
