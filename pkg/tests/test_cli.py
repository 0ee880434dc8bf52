"""Tests for the command-line front end: config handling, exit codes,
the simulate/track/evaluate pipeline, and Monte-Carlo aggregation."""

import configparser

import numpy as np
import pytest

from flowtrack.cli import (DEFAULTS, load_config, main, ospa_series,
                           write_resolved_config)
from flowtrack.errors import ConfigError
from flowtrack.metrics import OspaParams
from flowtrack.sim import (read_estimates_csv, read_series_csv,
                           read_truth_csv, write_estimates_csv,
                           write_measurements_csv, write_truth_csv)


# ---------------------------------------------------------------------------
# configuration loading

def test_load_config_defaults_match_builtin_table():
    cfg = load_config(None)
    for section in ("scenario", "tracker", "run", "ospa"):
        assert cfg.section(section) == DEFAULTS[section]
    # the returned dicts are copies, not aliases of the defaults
    cfg.tracker["n_particles"] = 7
    assert DEFAULTS["tracker"]["n_particles"] == 100


def test_load_config_merges_file_over_defaults(tmp_path):
    ini = tmp_path / "settings.ini"
    ini.write_text("[scenario]\nn_steps = 25\nsigma_v = 1e-5\n"
                   "[tracker]\nproposal_mode = bootstrap\ngate_prob = 0.999\n"
                   "[run]\nseed = 42\n")
    cfg = load_config(str(ini))
    assert cfg.scenario["n_steps"] == 25
    assert cfg.scenario["sigma_v"] == pytest.approx(1e-5)
    assert cfg.scenario["n_objects"] == 8
    assert cfg.tracker["proposal_mode"] == "bootstrap"
    assert cfg.tracker["gate_prob"] == pytest.approx(0.999)
    assert cfg.run["seed"] == 42
    assert cfg.run["n_runs"] == 1


def test_load_config_gate_prob_accepts_none_words(tmp_path):
    for word in ("none", "off", ""):
        ini = tmp_path / f"gate_{word or 'blank'}.ini"
        ini.write_text(f"[tracker]\ngate_prob = {word}\n")
        assert load_config(str(ini)).tracker["gate_prob"] is None


@pytest.mark.parametrize("body,fragment", [
    ("[mystery]\nx = 1\n", "unknown config section"),
    ("[tracker]\nwarp_speed = 9\n", "unknown config key"),
    ("[scenario]\nn_steps = fast\n", "must be an integer"),
    ("[scenario]\nsigma_v = tiny\n", "must be a number"),
])
def test_load_config_rejects_bad_files(tmp_path, body, fragment):
    ini = tmp_path / "bad.ini"
    ini.write_text(body)
    with pytest.raises(ConfigError, match=fragment):
        load_config(str(ini))


def test_load_config_missing_file_is_config_error():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/no/such/file.ini")


def test_resolved_config_round_trips(tmp_path):
    cfg = load_config(None)
    cfg.scenario["n_steps"] = 30
    cfg.tracker["gate_prob"] = None
    out = tmp_path / "config_resolved.ini"
    write_resolved_config(cfg, out)
    again = load_config(str(out))
    assert again.scenario == cfg.scenario
    assert again.tracker == cfg.tracker
    parser = configparser.ConfigParser()
    parser.read(out)
    assert set(parser.sections()) == set(DEFAULTS)


# ---------------------------------------------------------------------------
# exit codes

def small_ini(tmp_path, **extra):
    """An INI for a 31-step two-object scenario that runs in seconds."""
    sections = {"scenario": {"n_steps": 31, "n_objects": 2},
                "tracker": {"n_particles": 40, "new_po_factor": 5},
                "run": {"seed": 3}}
    for section, body in extra.items():
        sections.setdefault(section, {}).update(body)
    lines = []
    for section, body in sections.items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in body.items())
    ini = tmp_path / "small.ini"
    ini.write_text("\n".join(lines) + "\n")
    return str(ini)


def test_exit_code_2_on_config_error(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[tracker]\nwarp_speed = 9\n")
    code = main(["simulate", "--config", str(ini),
                 "--out", str(tmp_path / "out")])
    assert code == 2
    assert "configuration error" in capsys.readouterr().err


def test_exit_code_2_on_invalid_tracker_settings(tmp_path, capsys):
    ini = tmp_path / "bad.ini"
    ini.write_text("[tracker]\nn_particles = 0\n")
    code = main(["track", "--config", str(ini), "--measurements",
                 str(tmp_path / "unused.csv"),
                 "--out", str(tmp_path / "est.csv")])
    assert code == 2
    assert "configuration error" in capsys.readouterr().err


def test_exit_code_3_on_missing_measurements(tmp_path, capsys):
    code = main(["track", "--config", small_ini(tmp_path),
                 "--measurements", str(tmp_path / "absent.csv"),
                 "--out", str(tmp_path / "est.csv")])
    assert code == 3
    assert "runtime error" in capsys.readouterr().err


def test_exit_code_3_names_bad_csv_line(tmp_path, capsys):
    bad = tmp_path / "meas.csv"
    header = "k,meas_index," + ",".join(f"z_{i}" for i in range(1, 13))
    bad.write_text(header + "\n"
                   "1,1,not_a_number,0,0,0,0,0,0,0,0,0,0,0\n")
    code = main(["track", "--config", small_ini(tmp_path),
                 "--measurements", str(bad),
                 "--out", str(tmp_path / "est.csv")])
    assert code == 3
    assert "line 2" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# simulate

def test_simulate_writes_outputs_and_is_deterministic(tmp_path):
    ini = small_ini(tmp_path)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["simulate", "--config", ini, "--out", str(out_a)]) == 0
    assert main(["simulate", "--config", ini, "--out", str(out_b)]) == 0
    for name in ("truth.csv", "measurements.csv", "config_resolved.ini"):
        assert (out_a / name).is_file()
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_simulate_default_scenario_covers_every_step(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--out", str(out), "--seed", "7"]) == 0
    truth = read_truth_csv(out / "truth.csv")
    assert {k for k, _obj, _state in truth} == set(range(1, 201))


def test_simulate_seed_flag_changes_the_draw(tmp_path):
    ini = small_ini(tmp_path)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["simulate", "--config", ini, "--out", str(out_a)]) == 0
    assert main(["simulate", "--config", ini, "--seed", "4",
                 "--out", str(out_b)]) == 0
    assert (out_a / "measurements.csv").read_bytes() != \
        (out_b / "measurements.csv").read_bytes()


# ---------------------------------------------------------------------------
# track

@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipeline")
    ini = small_ini(tmp)
    out = tmp / "sim"
    assert main(["simulate", "--config", ini, "--out", str(out)]) == 0
    return tmp, ini, out


def test_track_writes_declared_estimates(sim_dir, tmp_path):
    tmp, ini, out = sim_dir
    est = tmp_path / "estimates.csv"
    code = main(["track", "--config", ini,
                 "--measurements", str(out / "measurements.csv"),
                 "--out", str(est)])
    assert code == 0
    rows = read_estimates_csv(est)
    assert rows, "the two-object scene should produce estimates"
    for k, label, state, existence in rows:
        assert 1 <= k <= 31
        assert 0.5 < existence <= 1.0
        assert state.shape == (6,)
    assert (tmp_path / "config_resolved.ini").is_file()


def test_track_same_seed_is_byte_identical(sim_dir, tmp_path):
    tmp, ini, out = sim_dir
    est_a = tmp_path / "a.csv"
    est_b = tmp_path / "b.csv"
    for est in (est_a, est_b):
        assert main(["track", "--config", ini,
                     "--measurements", str(out / "measurements.csv"),
                     "--out", str(est)]) == 0
    assert est_a.read_bytes() == est_b.read_bytes()


def test_track_modes_differ(sim_dir, tmp_path):
    tmp, ini, out = sim_dir
    byte = {}
    for mode in ("flow", "bootstrap"):
        est = tmp_path / f"{mode}.csv"
        assert main(["track", "--config", ini, "--mode", mode,
                     "--measurements", str(out / "measurements.csv"),
                     "--out", str(est)]) == 0
        byte[mode] = est.read_bytes()
    assert byte["flow"] != byte["bootstrap"]


def test_track_empty_measurements_gives_header_only(tmp_path):
    ini = small_ini(tmp_path)
    meas = tmp_path / "empty.csv"
    write_measurements_csv(meas, [])
    est = tmp_path / "est.csv"
    assert main(["track", "--config", ini, "--measurements", str(meas),
                 "--out", str(est)]) == 0
    assert read_estimates_csv(est) == []
    assert est.read_text().count("\n") == 1


# ---------------------------------------------------------------------------
# evaluate

def test_evaluate_perfect_estimates_score_zero(tmp_path):
    truth = [(k, 0, np.array([10.0 * k, -3.0, -200.0, 1.0, 0.0, 0.0]))
             for k in range(1, 6)]
    rows = [(k, (1, 1), state.copy(), 0.9) for k, _obj, state in truth]
    write_truth_csv(tmp_path / "truth.csv", truth)
    write_estimates_csv(tmp_path / "est.csv", rows)
    out = tmp_path / "ospa.csv"
    assert main(["evaluate", "--estimates", str(tmp_path / "est.csv"),
                 "--truth", str(tmp_path / "truth.csv"),
                 "--out", str(out)]) == 0
    assert read_series_csv(out, "ospa") == pytest.approx(np.zeros(5))


def test_evaluate_missing_estimates_score_the_cutoff(tmp_path):
    truth = [(k, 0, np.array([10.0 * k, -3.0, -200.0, 1.0, 0.0, 0.0]))
             for k in range(1, 6)]
    write_truth_csv(tmp_path / "truth.csv", truth)
    write_estimates_csv(tmp_path / "est.csv", [])
    out = tmp_path / "ospa.csv"
    assert main(["evaluate", "--estimates", str(tmp_path / "est.csv"),
                 "--truth", str(tmp_path / "truth.csv"),
                 "--out", str(out)]) == 0
    assert read_series_csv(out, "ospa") == pytest.approx(np.full(5, 50.0))


def test_evaluate_single_object_offset_scores_the_offset(tmp_path):
    state = np.array([100.0, 0.0, -250.0, 0.0, 0.0, 0.0])
    shifted = state.copy()
    shifted[0] += 10.0
    write_truth_csv(tmp_path / "truth.csv", [(1, 0, state)])
    write_estimates_csv(tmp_path / "est.csv", [(1, (1, 1), shifted, 0.9)])
    out = tmp_path / "ospa.csv"
    assert main(["evaluate", "--estimates", str(tmp_path / "est.csv"),
                 "--truth", str(tmp_path / "truth.csv"),
                 "--out", str(out)]) == 0
    assert read_series_csv(out, "ospa") == pytest.approx([10.0])


def test_evaluate_rejects_estimates_past_the_truth_range(tmp_path, capsys):
    truth = [(k, 0, np.array([10.0 * k, -3.0, -200.0, 1.0, 0.0, 0.0]))
             for k in range(1, 4)]
    rows = [(7, (1, 1), np.zeros(6), 0.9)]
    write_truth_csv(tmp_path / "truth.csv", truth)
    write_estimates_csv(tmp_path / "est.csv", rows)
    assert main(["evaluate", "--estimates", str(tmp_path / "est.csv"),
                 "--truth", str(tmp_path / "truth.csv"),
                 "--out", str(tmp_path / "ospa.csv")]) == 3
    err = capsys.readouterr().err
    assert "step 7" in err and "step 3" in err


def test_ospa_series_velocity_is_ignored():
    truth = [(1, 0, np.array([1.0, 2.0, 3.0, 9.0, 9.0, 9.0]))]
    rows = [(1, (1, 1), np.array([1.0, 2.0, 3.0, -9.0, 0.0, 4.0]), 0.8)]
    series = ospa_series(truth, rows, OspaParams(cutoff=50.0, order=1.0), 1)
    assert series == pytest.approx([0.0])


# ---------------------------------------------------------------------------
# mc

def test_mc_single_run_matches_its_own_ospa(tmp_path):
    ini = small_ini(tmp_path)
    out = tmp_path / "mc"
    assert main(["mc", "--config", ini, "--runs", "1",
                 "--out", str(out)]) == 0
    agg = read_series_csv(out / "mospa_flow.csv", "mospa")
    one = read_series_csv(out / "runs" / "run_0000" / "ospa_flow.csv", "ospa")
    assert agg == pytest.approx(one)


def test_mc_two_modes_write_two_files_and_timing(tmp_path):
    ini = small_ini(tmp_path, run={"modes": "flow,bootstrap", "n_runs": 2})
    out = tmp_path / "mc"
    assert main(["mc", "--config", ini, "--out", str(out)]) == 0
    flow = read_series_csv(out / "mospa_flow.csv", "mospa")
    boot = read_series_csv(out / "mospa_bootstrap.csv", "mospa")
    assert flow.shape == boot.shape == (31,)
    timing = (out / "timing.csv").read_text().splitlines()
    assert timing[0] == "mode,mean_step_seconds,n_runs"
    assert [line.split(",")[0] for line in timing[1:]] == ["flow", "bootstrap"]
    assert all(float(line.split(",")[1]) > 0.0 for line in timing[1:])


def test_mc_parallel_jobs_match_serial_bytes(tmp_path):
    ini = small_ini(tmp_path)
    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    assert main(["mc", "--config", ini, "--runs", "2", "--jobs", "1",
                 "--out", str(serial)]) == 0
    assert main(["mc", "--config", ini, "--runs", "2", "--jobs", "2",
                 "--out", str(parallel)]) == 0
    assert (serial / "mospa_flow.csv").read_bytes() == \
        (parallel / "mospa_flow.csv").read_bytes()
    for run in ("run_0000", "run_0001"):
        a = serial / "runs" / run / "estimates_flow.csv"
        b = parallel / "runs" / run / "estimates_flow.csv"
        assert a.read_bytes() == b.read_bytes()


def test_mc_runs_use_distinct_measurement_draws(tmp_path):
    ini = small_ini(tmp_path)
    out = tmp_path / "mc"
    assert main(["mc", "--config", ini, "--runs", "2",
                 "--out", str(out)]) == 0
    a = (out / "runs" / "run_0000" / "measurements.csv").read_bytes()
    b = (out / "runs" / "run_0001" / "measurements.csv").read_bytes()
    assert a != b
