import json
from pathlib import Path

import numpy as np
import pytest

from rubinfer.bench import cli
from rubinfer.bench.config import (SanityConfig, ScenarioConfig, load_config,
                                   with_seed_override)
from rubinfer.bench.plots import cumulative_svg, emit_plots, per_step_svg
from rubinfer.bench.records import BenchRecord, read_csv, write_csv
from rubinfer.bench.sanity import dense_system, median_times, run_sanity
from rubinfer.bench.scenario import (activation_radius, consistency_rate, cumulative_time,
                                     run_scenario)
from rubinfer.errors import ConfigError, ParseError
from rubinfer.factors import parse_factors
from rubinfer.sim import parse_truth_stream

DATA = Path(__file__).parent / "data"


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

def test_csv_round_trip():
    recs = [BenchRecord("s", 1, "ISAM", "total", 10, 6, 5, 2, 0, 0),
            BenchRecord("s", 1, "OTM", "rhs_update", 3, 6, 5, 0, 1, 2, 1.25e-13)]
    text = write_csv(recs)
    assert text.splitlines()[0].startswith("scenario,step,method,phase,time_ns")
    assert read_csv(text) == recs


@pytest.mark.parametrize("text", ["", "a,b\n",
                                  write_csv([]) + "s,1,ISAM,total,10\n",
                                  write_csv([]) + "s,x,ISAM,total,10,1,1,1,0,0,\n",
                                  write_csv([]) + "s,1,NOPE,total,10,1,1,1,0,0,\n"])
def test_csv_parse_errors(text):
    with pytest.raises(ParseError):
        read_csv(text)


def test_record_validation():
    with pytest.raises(ValueError):
        BenchRecord("s", 1, "ISAM", "total", -1, 1, 1, 1, 0, 0)


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["sanity", "sanity_smoke", "consistent", "inconsistent",
                                  "inconsistent_mixed", "smoke"])
def test_bundled_configs_load(name):
    cfg = load_config(name)
    assert cfg.name == name or name.startswith("sanity")


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config({"kind": "scenario", "stepz": 3})
    with pytest.raises(ConfigError):
        load_config({"kind": "other"})
    with pytest.raises(ConfigError):
        load_config({"kind": "scenario", "steps": 0})
    with pytest.raises(ConfigError):
        load_config({"kind": "sanity", "reps": 0})
    with pytest.raises(ConfigError):
        load_config({"kind": "scenario", "sensor_range": 20.0, "true_range": 10.0})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config("no_such_config")


def test_config_from_file_and_seed_override(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"kind": "scenario", "name": "x", "steps": 3,
                                "targets": [[1, 2]]}))
    cfg = load_config(path)
    assert isinstance(cfg, ScenarioConfig) and cfg.targets == ((1, 2),)
    assert with_seed_override(cfg, {"BENCH_SEED": "17"}).seed == 17
    assert with_seed_override(cfg, {}).seed == cfg.seed
    with pytest.raises(ConfigError):
        with_seed_override(cfg, {"BENCH_SEED": "abc"})


def test_activation_radius():
    cfg = ScenarioConfig(sensor_range=10.0, horizon=2, step_length=2.0, goal_radius=3.0)
    assert activation_radius(cfg) == 17.0


# ---------------------------------------------------------------------------
# sanity grid
# ---------------------------------------------------------------------------

def test_dense_system_shapes():
    a_prev, b_prev, motion, obs, b_motion, b_pred, b_obs = dense_system(
        10, 4, np.random.default_rng(0))
    assert a_prev.shape[1] == 10 and motion.shape == (3, 13) and obs.shape == (4, 13)
    assert len(b_obs) == len(b_pred) == 4 and len(b_motion) == 3
    assert np.linalg.matrix_rank(a_prev) == 10


def test_sanity_smoke_methods_agree():
    recs = run_sanity(load_config("sanity_smoke"))
    assert {r.method for r in recs} == {"STD", "ISAM", "OTM", "OTM_OO", "DU", "DU_OO"}
    assert max(r.max_est_diff_vs_baseline for r in recs) <= 1e-9
    scen = recs[0].scenario
    assert set(median_times(recs, scen)) == {"STD", "ISAM", "OTM", "OTM_OO", "DU", "DU_OO"}
    assert len(recs) == 4 * 6 * 2


def test_sanity_rejects_unknown_method():
    with pytest.raises(ConfigError):
        run_sanity(SanityConfig(methods=("FAST",)))


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def smoke():
    return run_scenario(load_config("smoke"))


def test_scenario_smoke_matches_baseline(smoke):
    assert max(smoke.max_diff.values()) < 1e-9
    methods = {r.method for r in smoke.records}
    assert methods == {"ISAM", "STD", "UD_OTM_OO", "OTM", "DU", "DU_OO"}
    steps = {r.step for r in smoke.records}
    assert steps == set(range(1, 11))
    assert consistency_rate(smoke.records) == 1.0
    assert cumulative_time(smoke.records, "ISAM") > 0


def test_scenario_is_deterministic(smoke):
    again = run_scenario(load_config("smoke"))
    strip = lambda rs: [(r.step, r.method, r.phase, r.n_state, r.n_new_factor_rows,  # noqa: E731
                         r.n_reeliminations, r.da_rmv, r.da_add) for r in rs]
    assert strip(again.records) == strip(smoke.records)
    assert again.truth == smoke.truth


def test_scenario_unknown_method():
    with pytest.raises(ConfigError):
        run_scenario(load_config("smoke"), methods=["FAST"])


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

def test_empty_records_give_axes_only():
    for svg in (cumulative_svg([]), per_step_svg([])):
        assert 'class="axes"' in svg and "<polyline" not in svg and 'class="bar"' not in svg


def test_plots_match_golden_files(tmp_path):
    paths = emit_plots(DATA / "fixture.csv", tmp_path)
    assert [p.name for p in paths] == ["cumulative.svg", "per_step.svg"]
    assert (tmp_path / "cumulative.svg").read_text() == (DATA / "golden_cumulative.svg").read_text()
    assert (tmp_path / "per_step.svg").read_text() == (DATA / "golden_per_step.svg").read_text()


def test_per_step_points_equal_steps(smoke):
    svg = per_step_svg(smoke.records)
    for m in ("ISAM", "UD_OTM_OO", "DU"):
        assert f'data-method="{m}" data-points="10"' in svg


def test_plots_bad_csv(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("nope\n")
    with pytest.raises(ParseError):
        emit_plots(bad, tmp_path)
    with pytest.raises(ParseError):
        emit_plots(tmp_path / "missing.csv", tmp_path)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def test_cli_sanity(tmp_path, capsys):
    assert cli.main(["sanity", "--config", "sanity_smoke", "--out", str(tmp_path)]) == 0
    assert read_csv((tmp_path / "sanity_smoke.csv").read_text())
    assert "ns=30/nf=2" in capsys.readouterr().out


def test_cli_scenario_and_plots(tmp_path, capsys):
    assert cli.main(["scenario", "--config", "smoke", "--out", str(tmp_path),
                     "--methods", "ISAM,UD_OTM_OO"]) == 0
    out = capsys.readouterr().out
    assert "ratio" in out and "DA consistency rate (UD_OTM_OO): 1.000" in out
    recs = read_csv((tmp_path / "smoke.csv").read_text())
    assert {r.method for r in recs} == {"ISAM", "UD_OTM_OO"}
    assert len(parse_truth_stream((tmp_path / "truth.jsonl").read_text())) == 10
    assert parse_factors((tmp_path / "factors.txt").read_text())
    assert len((tmp_path / "trajectory.csv").read_text().splitlines()) == 12
    assert cli.main(["plots", "--csv", str(tmp_path / "smoke.csv"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "per_step.svg").exists()


def test_cli_errors_exit_with_two(tmp_path, capsys):
    assert cli.main(["scenario", "--config", "sanity_smoke", "--out", str(tmp_path)]) == 2
    assert cli.main(["plots", "--csv", str(tmp_path / "missing.csv"), "--out",
                     str(tmp_path)]) == 2
    assert "bench" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main([])


def test_verify_helpers(tmp_path):
    assert cli.find_acceptance_suite(Path(__file__).parent).name == "test_acceptance.py"
    xml = tmp_path / "r.xml"
    xml.write_text('<testsuites><testsuite><testcase name="a"/>'
                   '<testcase name="b"><failure/></testcase>'
                   '<testcase name="c"><skipped/></testcase></testsuite></testsuites>')
    assert cli.verdicts(xml) == [("a", "PASS"), ("b", "FAIL"), ("c", "SKIP")]
