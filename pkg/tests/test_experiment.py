import json
import math

import numpy as np
import pytest
import yaml

from mrtherm import io
from mrtherm.errors import ConfigError, DomainError
from mrtherm.experiment import (REPORT_COLUMNS, ExperimentConfig, ExperimentRecord, build_setup, derive_seed,
                                export_report, make_pattern, read_report, report_csv, resolve_true_mu,
                                run_experiment, summarize)
from mrtherm.fusion import ParameterStats
from mrtherm.sampling import SamplingPattern, rectilinear_pattern

from conftest import tiny_experiment


@pytest.fixture(scope="module")
def setup():
    return build_setup(ExperimentConfig.from_mapping(tiny_experiment()))


@pytest.fixture(scope="module")
def result(setup):
    return run_experiment(setup.config, setup=setup)


class TestSeeds:
    def test_stable(self):
        assert derive_seed(0, 0, 0) == derive_seed(0, 0, 0)

    def test_roles_and_reps_differ(self):
        seeds = {derive_seed(7, role, rep) for role in range(3) for rep in range(4)}
        assert len(seeds) == 12


class TestConfig:
    def test_preset_overrides(self):
        cfg = ExperimentConfig.from_mapping({"preset": "planar", "seeds": 1, "lines": [0, 5]})
        assert cfg.seeds == 1 and cfg.lines == (0, 5)
        assert cfg.name == ExperimentConfig.preset("planar").name

    def test_missing_key(self):
        raw = tiny_experiment()
        del raw["protocol"]
        with pytest.raises(ConfigError, match="protocol"):
            ExperimentConfig.from_mapping(raw)

    def test_unknown_method(self):
        with pytest.raises(ConfigError, match="method"):
            ExperimentConfig.from_mapping(tiny_experiment(methods=["random"]))

    def test_noiseless_needs_model_snr(self):
        with pytest.raises(ConfigError, match="model_snr"):
            ExperimentConfig.from_mapping(tiny_experiment(snr="inf"))
        cfg = ExperimentConfig.from_mapping(tiny_experiment(snr="inf", model_snr=25))
        assert math.isinf(cfg.snr) and cfg.assumed_snr == 25.0

    def test_bad_snr(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping(tiny_experiment(snr=-3))

    def test_load_yaml_with_phantom_file(self, tmp_path):
        raw = tiny_experiment()
        (tmp_path / "phantom.yaml").write_text(yaml.safe_dump(raw.pop("phantom")))
        raw["phantom"] = "phantom.yaml"
        (tmp_path / "exp.yaml").write_text(yaml.safe_dump(raw))
        cfg = ExperimentConfig.load(tmp_path / "exp.yaml")
        assert cfg.phantom["grid"]["dims"] == [16, 16]

    def test_missing_phantom_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            ExperimentConfig.from_mapping(tiny_experiment(phantom="nope.yaml"), base_dir=tmp_path)

    def test_true_mu_sampled(self, setup):
        cfg = ExperimentConfig.from_mapping(tiny_experiment(true_mu="sample:4"))
        a, b = resolve_true_mu(cfg, setup.phantom), resolve_true_mu(cfg, setup.phantom)
        assert a.tobytes() == b.tobytes() and 100.0 <= a[0] <= 400.0

    @pytest.mark.parametrize("spec", ["draw:3", [1.0, 2.0], [-5.0]])
    def test_true_mu_invalid(self, setup, spec):
        cfg = ExperimentConfig.from_mapping(tiny_experiment(true_mu=spec))
        with pytest.raises(ConfigError, match="true_mu"):
            resolve_true_mu(cfg, setup.phantom)


class TestPipeline:
    def test_zero_lines_is_prior(self, result):
        for rec in result.records:
            if rec.lines == 0:
                assert rec.rmse == result.prior_error
                np.testing.assert_array_equal(rec.posterior.mean, result.prior.mean)

    def test_record_order(self, result):
        cfg = result.config
        keys = [(r.method, r.lines, r.seed) for r in result.records]
        assert keys == [(m, n, s) for m in cfg.methods for n in cfg.lines for s in range(cfg.seeds)]

    def test_measurements_help(self, result):
        assert result.mean_rmse("maxvar", 8) < result.prior_error

    def test_threads_do_not_change_results(self, setup, result):
        again = run_experiment(setup.config, threads=3, setup=setup)
        assert report_csv(again.records) == report_csv(result.records)

    def test_seed_count_follows_config(self, setup):
        cfg = setup.config.with_overrides(seeds=1, lines=(4,), methods=("maxvar",))
        res = run_experiment(cfg, setup=setup)
        assert [(r.lines, r.seed) for r in res.records] == [(4, 0)]

    def test_too_many_lines_is_tagged(self, setup):
        cfg = setup.config.with_overrides(seeds=1, lines=(999,), methods=("rectilinear",))
        rec = run_experiment(cfg, setup=setup).records[0]
        assert not rec.ok and rec.error.startswith("domain")
        row = report_csv([rec]).splitlines()[1].split(",")
        assert row[-1].startswith("domain") and row[4] == ""

    def test_poisson_shortfall_is_domain_error(self, setup):
        cfg = setup.config.with_overrides(poisson_r0=6.0, poisson_beta=0.0)
        with pytest.raises(DomainError, match="poisson"):
            make_pattern(run_experiment(cfg.with_overrides(lines=(0,), seeds=1), setup=setup), "poisson", 15)


class TestReporting:
    def test_columns(self, result):
        header = report_csv(result.records).splitlines()[0]
        assert tuple(header.split(",")) == REPORT_COLUMNS
        assert "wall_ms" not in header

    def test_export_is_deterministic(self, setup, tmp_path):
        a = export_report(run_experiment(setup.config, setup=setup), tmp_path / "a")
        b = export_report(run_experiment(setup.config, setup=setup), tmp_path / "b")
        assert a["report"].read_bytes() == b["report"].read_bytes()
        summary = json.loads(a["summary"].read_text())
        assert summary["experiment"] == "tiny" and summary["phase_encode_lines"] == 16

    def test_read_back(self, result, tmp_path):
        paths = export_report(result, tmp_path)
        rows = read_report(paths["report"])
        assert len(rows) == len(result.records)
        assert float(rows[0]["rmse"]) == result.records[0].rmse

    def test_empty_records(self, tmp_path):
        with pytest.raises(DomainError):
            report_csv([])
        with pytest.raises(DomainError):
            export_report([], tmp_path)

    def test_summary_counts_failures(self):
        recs = [ExperimentRecord("maxvar", 4, 0, 0.25, 1.0, 2.0, ParameterStats([1.0], [[1.0]])),
                ExperimentRecord("maxvar", 4, 1, error="numerical: boom")]
        group = summarize(recs)["groups"][0]
        assert group["cells"] == 2 and group["failed"] == 1 and group["rmse_mean"] == 1.0


class TestIo:
    @pytest.mark.parametrize("dtype", [float, complex])
    def test_array_round_trip(self, tmp_path, dtype):
        rng = np.random.default_rng(0)
        arr = rng.standard_normal((3, 4, 5)).astype(dtype)
        if dtype is complex:
            arr = arr + 1j * rng.standard_normal((3, 4, 5))
        path = io.write_array(tmp_path / "a.bin", arr, note="x")
        back, meta = io.read_array(path)
        assert back.tobytes() == arr.tobytes() and meta["note"] == "x"

    def test_raw_layout(self, tmp_path):
        path = io.write_array(tmp_path / "c.bin", np.array([1 + 2j, 3 + 4j]))
        np.testing.assert_array_equal(np.fromfile(path, dtype="<f8"), [1, 2, 3, 4])

    def test_pattern_round_trip(self, tmp_path):
        pat = SamplingPattern(2, (6, 5), ((3, 2), (0, 4)), "maxvar", 1.5)
        back = io.read_pattern(io.write_pattern(tmp_path / "p.csv", pat))
        assert back == SamplingPattern(2, (6, 5), ((3, 2), (0, 4)), "maxvar", 1.5)

    def test_pattern_missing_header(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("k0\n1\n")
        with pytest.raises(ConfigError):
            io.read_pattern(path)

    def test_pattern_header(self):
        text = io.pattern_to_csv(rectilinear_pattern(8, 2))
        assert text.splitlines()[:2] == ["# method: rectilinear", "# readout_axis: 0"]

    def test_tables(self, result, tmp_path):
        io.write_ensemble_summary(tmp_path / "e.csv", result.ensemble)
        lines = (tmp_path / "e.csv").read_text().splitlines()
        assert lines[0] == "node,mu0,weight" and len(lines) == 6
        post = next(r for r in result.records if r.method == "maxvar" and r.lines == 8).posterior
        io.write_posterior(tmp_path / "post.csv", result.prior, post, 8)
        row = (tmp_path / "post.csv").read_text().splitlines()[1].split(",")
        assert float(row[3]) == post.mean[0]


CONFIG_DIR = __import__("pathlib").Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIG_DIR.glob("*.yaml")))
def test_shipped_configs_load(name):
    cfg = ExperimentConfig.load(CONFIG_DIR / name)
    assert cfg.phantom and cfg.protocol and cfg.seeds >= 1
