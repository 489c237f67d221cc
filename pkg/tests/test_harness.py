import csv
import json
import math

import pytest

from lowertail.core.config import get_settings
from lowertail.core.exceptions import BudgetExceededError, ConfigError
from lowertail.schemas.experiments import ExperimentConfig
from lowertail.services.harness import (
    ap_demo,
    build_instance,
    load_config,
    run_experiment,
    sandwich_check,
    theorem_triangles_check,
    write_report,
)
from tests.conftest import FIXTURES

ROOT = FIXTURES.parent


@pytest.fixture
def small_config():
    return ExperimentConfig(
        instances=[{"kind": "ap", "k": 3, "n": 5}],
        p_grid=[0.4],
        eta_grid=[0.5],
        oracle="exact",
    )


class TestSandwich:
    def test_k4_triangles(self, k4_triangles):
        report = sandwich_check(k4_triangles, 0.5, 0.5, 0.3, instance_id="k4")
        assert report.log_prob_method == "exact"
        assert report.upper_holds
        assert report.upper_vacuous
        assert report.lower_holds is not False
        assert report.lower_vacuous
        assert report.tilt_method == "exact"
        assert report.tilt_holds
        assert report.tilt_log_lower_bound <= report.log_prob
        assert report.C_upper == pytest.approx(report.K_var / 0.18 + math.log(2 / 0.3))
        assert report.holds

    def test_degree_condition_fails_on_triangles(self, k4_triangles):
        report = sandwich_check(k4_triangles, 0.5, 0.5, 0.3)
        assert not report.degree_condition_holds
        assert not report.lower_applicable
        assert report.lower_holds is None
        assert report.lower_slack is None

    def test_precomputed_probability(self, k4_triangles):
        report = sandwich_check(k4_triangles, 0.5, 0.5, 0.3, log_prob=(-1.0, "mc"))
        assert report.log_prob == -1.0
        assert report.log_prob_method == "mc"
        assert report.tilt_holds is None

    def test_mc_oracle(self, k4_triangles):
        report = sandwich_check(k4_triangles, 0.5, 0.5, 0.3, oracle="mc", samples=20000, seed=2)
        assert report.log_prob_method == "mc"
        assert report.upper_holds


class TestAPDemo:
    def test_eta_grid(self):
        report = ap_demo(3, 8, 0.3, [0.25, 0.5], 0.3)
        assert report.audit.holds
        assert len(report.sandwiches) == 2
        assert report.sandwiches[0].instance_id == "ap3-n8"
        assert report.holds


class TestTriangles:
    def test_small_host(self):
        report = theorem_triangles_check(4)
        assert [row.t for row in report.rows] == [0, 1, 2, 3, 4]
        assert report.rows[0].log_prob == pytest.approx(math.log(41 / 64))
        assert report.rows[-1].log_prob == pytest.approx(0.0, abs=1e-12)
        assert all(row.vacuous for row in report.rows)
        assert report.holds

    def test_custom_grid(self):
        report = theorem_triangles_check(5, [0, 2])
        assert [row.t for row in report.rows] == [0, 2]
        assert report.holds

    def test_limit(self):
        with pytest.raises(BudgetExceededError):
            theorem_triangles_check(get_settings().TRIANGLES_MAX_N + 1)

    @pytest.mark.slow
    def test_largest_host(self):
        report = theorem_triangles_check(7)
        assert len(report.rows) == math.comb(7, 3) + 1
        assert report.holds


class TestExperiments:
    def test_fixture_config(self, monkeypatch):
        monkeypatch.chdir(ROOT)
        config = load_config("fixtures/experiment.json")
        rows = run_experiment(config)
        assert len(rows) == 3 * 2 * 3
        assert [row.instance_id for row in rows[:6]] == ["triangle-n4"] * 6
        assert all(row.error is None for row in rows)
        assert all(row.passed for row in rows)
        zero_rows = [row for row in rows if row.eta == 0.0]
        assert all(row.phi_zero_ok for row in zero_rows)
        assert all(row.mc_log_prob is not None for row in rows)

    def test_trivial_rows(self, small_config):
        config = small_config.model_copy(update={"eta_grid": [1.0]})
        (row,) = run_experiment(config)
        assert row.phi == 0.0
        assert row.status == "infeasibility_trivial"
        assert row.exact_log_prob is not None
        assert row.lower_certificate is None

    def test_exact_budget(self, monkeypatch, small_config):
        monkeypatch.setenv("EXACT_VERTEX_BUDGET", "4")
        get_settings.cache_clear()
        with pytest.raises(ConfigError):
            run_experiment(small_config)

    def test_build_instance(self, monkeypatch):
        monkeypatch.chdir(ROOT)
        config = load_config("fixtures/experiment.json")
        H = build_instance(config.instances[0])
        assert (H.num_vertices, H.num_edges) == (6, 4)


class TestConfig:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "missing.json"))

    def test_invalid_config(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"instances": [], "p_grid": [0.5], "eta_grid": [0.5]}))
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_both_grids(self, tmp_path):
        path = tmp_path / "bad.json"
        config = {
            "instances": [{"kind": "ap", "k": 3, "n": 5}],
            "p_grid": [0.5],
            "eta_grid": [0.5],
            "t_grid": [1.0],
        }
        path.write_text(json.dumps(config))
        with pytest.raises(ConfigError):
            load_config(str(path))


class TestReports:
    def test_csv_with_sidecar(self, tmp_path, small_config):
        rows = run_experiment(small_config)
        target = tmp_path / "reports" / "run.csv"
        write_report(rows, str(target))
        with open(target) as handle:
            records = list(csv.DictReader(handle))
        assert len(records) == 1
        assert records[0]["instance_id"] == "ap3-n5"
        assert "solution" not in records[0]
        sidecar = json.loads((tmp_path / "reports" / "run.csv.json").read_text())
        assert set(sidecar[0]["solution"]) == {"phi", "theta", "q", "status", "kkt_residual"}

    def test_json(self, tmp_path, small_config):
        rows = run_experiment(small_config)
        target = tmp_path / "run.json"
        write_report(rows, str(target), format="json")
        payload = json.loads(target.read_text())
        assert payload[0]["passed"] is True
        assert payload[0]["solution"]["status"] == rows[0].status
