import subprocess
import sys

import pytest
import yaml

from mrtherm.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, main
from mrtherm.io import read_array, read_pattern

from conftest import tiny_experiment


def write_config(tmp_path, **kw):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(tiny_experiment(**kw)))
    return path


class TestCommands:
    def test_sweep_then_report(self, tmp_path, capsys):
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", str(write_config(tmp_path)), "--out", str(out)]) == EXIT_OK
        assert (out / "report.csv").exists() and (out / "timings.csv").exists()
        capsys.readouterr()
        assert main(["report", str(out)]) == EXIT_OK
        table = capsys.readouterr().out
        assert "maxvar" in table and "rectilinear" in table

    def test_report_via_out_flag(self, tmp_path):
        out = tmp_path / "s"
        main(["sweep", "--config", str(write_config(tmp_path)), "--out", str(out), "--methods", "maxvar",
              "--lines", "0,4"])
        assert main(["report", "--out", str(out)]) == EXIT_OK

    def test_run_dumps_fields(self, tmp_path):
        out = tmp_path / "run"
        assert main(["run", "--config", str(write_config(tmp_path)), "--out", str(out), "--methods",
                     "maxvar,rectilinear", "--lines", "0,4"]) == EXIT_OK
        truth, meta = read_array(out / "truth.f64")
        assert truth.shape == (16, 16) and meta["units"] == "degC"
        assert (out / "pattern_maxvar_4.csv").exists() and (out / "posterior_rectilinear_4.csv").exists()
        assert (out / "ensemble.csv").exists()

    def test_pattern(self, tmp_path):
        out = tmp_path / "pat"
        assert main(["pattern", "--config", str(write_config(tmp_path)), "--out", str(out), "--methods",
                     "maxvar", "--lines", "4"]) == EXIT_OK
        assert len(read_pattern(out / "maxvar_4.csv")) == 4

    def test_forward(self, tmp_path):
        out = tmp_path / "fwd"
        assert main(["forward", "--config", str(write_config(tmp_path)), "--out", str(out)]) == EXIT_OK
        k, meta = read_array(out / "kspace_noisy.f64")
        assert k.dtype == complex and meta["axis_roles"] == ["readout", "phase"]

    def test_seed_changes_noise(self, tmp_path):
        cfg = str(write_config(tmp_path))
        reports = []
        for seed in ("1", "2"):
            out = tmp_path / seed
            main(["sweep", "--config", cfg, "--out", str(out), "--seed", seed, "--methods", "maxvar", "--lines", "4"])
            reports.append((out / "report.csv").read_bytes())
        assert reports[0] != reports[1]


class TestExitCodes:
    def test_missing_config(self, tmp_path, capsys):
        assert main(["sweep", "--config", str(tmp_path / "none.yaml")]) == EXIT_INVALID
        assert "not found" in capsys.readouterr().err

    def test_nothing_selected(self):
        assert main(["sweep"]) == EXIT_INVALID

    def test_unknown_method(self, tmp_path):
        assert main(["sweep", "--config", str(write_config(tmp_path)), "--methods", "spiral"]) == EXIT_INVALID

    def test_unknown_preset(self):
        assert main(["sweep", "--preset", "lung"]) == EXIT_INVALID

    def test_bad_threads(self, tmp_path):
        assert main(["sweep", "--config", str(write_config(tmp_path)), "--threads", "0"]) == EXIT_INVALID

    def test_missing_report(self, tmp_path):
        assert main(["report", str(tmp_path)]) == EXIT_INVALID

    def test_divergence(self, tmp_path, capsys):
        raw = tiny_experiment()
        raw["phantom"]["laser"]["power"] = 1e9
        path = tmp_path / "hot.yaml"
        path.write_text(yaml.safe_dump(raw))
        assert main(["forward", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_NUMERICAL
        assert "numerical" in capsys.readouterr().err

    @pytest.mark.parametrize("seed", ["-1", str(2**64), "abc"])
    def test_seed_out_of_range(self, seed):
        with pytest.raises(SystemExit) as exc:
            main(["sweep", "--preset", "planar", "--seed", seed])
        assert exc.value.code == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mrtherm.cli", "report", str(tmp_path)], capture_output=True,
                          text=True)
    assert proc.returncode == EXIT_INVALID and "not found" in proc.stderr
