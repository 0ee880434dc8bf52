"""Command-line front end.

Subcommands: simulate (write truth and measurements for one run), track
(run the tracker on a measurement file), evaluate (per-step set distance
between estimates and truth), and mc (repeated simulate/track/evaluate
with aggregation).  Settings come from an INI file merged over built-in
defaults, with a few common flags overriding both; every command writes
the fully resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CsvFormatError, NumericalError
from .metrics import OspaParams, mospa, ospa
from .sim import (default_scenario, intersecting_scenario, read_estimates_csv,
                  read_measurements_csv, read_truth_csv, sim_rng, simulate,
                  write_estimates_csv, write_measurements_csv,
                  write_series_csv, write_truth_csv)
from .tracker import (PROPOSAL_BOOTSTRAP, PROPOSAL_FLOW, TrackerConfig,
                      run_tracker)

log = logging.getLogger(__name__)

DEFAULTS = {
    "scenario": {
        "n_steps": 200, "n_objects": 8,
        "roi_x_min": -500.0, "roi_x_max": 500.0,
        "roi_y_min": -500.0, "roi_y_max": 500.0,
        "roi_z_min": -500.0, "roi_z_max": 0.0,
        "array1_x": 250.0, "array1_y": 0.0, "array1_z": -10.0,
        "array2_x": 0.0, "array2_y": 250.0, "array2_z": -10.0,
        "arm": 10.0, "c": 1500.0, "sigma_v": 3e-6,
        "p_d": 0.9, "clutter_mean": 1.0, "mean_births": 0.011,
        "survival_prob": 0.999, "drive_var": 0.01, "dt": 1.0,
        "birth_vel_min": -10.0, "birth_vel_max": 10.0,
        "radius": 400.0, "depth": -250.0,
    },
    "tracker": {
        "n_particles": 100, "new_po_factor": 20,
        "detect_threshold": 0.5, "prune_threshold": 1e-4,
        "flow_steps": 120, "flow_first_step": 1e-11, "flow_ratio": 1.2,
        "flow_min_ess": 4.0, "flow_mass_band": 100.0,
        "gate_prob": None, "da_tol": 1e-6, "da_max_iters": 200,
        "proposal_mode": PROPOSAL_FLOW, "max_potential_objects": 200,
    },
    "run": {"seed": 1, "n_runs": 1, "jobs": 1, "modes": PROPOSAL_FLOW},
    "ospa": {"cutoff": 50.0, "order": 1.0},
}


@dataclass
class RunConfig:
    """Resolved settings of one invocation, grouped by INI section."""

    scenario: dict = field(default_factory=dict)
    tracker: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    ospa: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return getattr(self, name)


def load_config(path: str | None = None) -> RunConfig:
    """Defaults overlaid with the INI file at `path` (if any)."""
    cfg = RunConfig(**{name: dict(vals) for name, vals in DEFAULTS.items()})
    if path is None:
        return cfg
    if not Path(path).is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            cfg.section(section)[key] = _convert(section, key, raw)
    return cfg


def _convert(section: str, key: str, raw: str):
    default = DEFAULTS[section][key]
    raw = raw.strip()
    if key == "gate_prob":
        return None if raw.lower() in ("", "none", "off") else _to_float(section, key, raw)
    if isinstance(default, bool):
        raise ConfigError(f"unsupported key type for {section}.{key}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key} must be an integer, got {raw!r}") from exc
    if isinstance(default, float):
        return _to_float(section, key, raw)
    return raw


def _to_float(section: str, key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key} must be a number, got {raw!r}") from exc


def write_resolved_config(cfg: RunConfig, path) -> None:
    parser = configparser.ConfigParser()
    for name in DEFAULTS:
        parser[name] = {k: ("" if v is None else str(v))
                        for k, v in cfg.section(name).items()}
    with open(path, "w") as fh:
        parser.write(fh)


def build_scenario(cfg: RunConfig):
    s = cfg.scenario
    try:
        return intersecting_scenario(
            n_steps=s["n_steps"], n_objects=s["n_objects"],
            roi=((s["roi_x_min"], s["roi_x_max"]),
                 (s["roi_y_min"], s["roi_y_max"]),
                 (s["roi_z_min"], s["roi_z_max"])),
            array_centers=((s["array1_x"], s["array1_y"], s["array1_z"]),
                           (s["array2_x"], s["array2_y"], s["array2_z"])),
            arm=s["arm"], c=s["c"], sigma_v=s["sigma_v"], p_d=s["p_d"],
            clutter_mean=s["clutter_mean"], mean_births=s["mean_births"],
            survival_prob=s["survival_prob"], drive_var=s["drive_var"],
            dt=s["dt"], birth_vel=(s["birth_vel_min"], s["birth_vel_max"]),
            radius=s["radius"], depth=s["depth"], seed=cfg.run["seed"])
    except ValueError as exc:
        raise ConfigError(f"invalid scenario settings: {exc}") from exc


def build_tracker_config(cfg: RunConfig, mode: str | None = None) -> TrackerConfig:
    t = dict(cfg.tracker)
    if mode is not None:
        t["proposal_mode"] = mode
    try:
        return TrackerConfig(**t)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid tracker settings: {exc}") from exc


def build_ospa_params(cfg: RunConfig) -> OspaParams:
    try:
        return OspaParams(cutoff=cfg.ospa["cutoff"], order=cfg.ospa["order"])
    except ValueError as exc:
        raise ConfigError(f"invalid ospa settings: {exc}") from exc


def _check_seed(cfg: RunConfig) -> None:
    if cfg.run["seed"] < 0:
        raise ConfigError("seed must be nonnegative")
    if cfg.run["n_runs"] < 1:
        raise ConfigError("n_runs must be at least 1")
    if cfg.run["jobs"] < 1:
        raise ConfigError("jobs must be at least 1")


def _modes(cfg: RunConfig) -> list[str]:
    modes = [m.strip() for m in cfg.run["modes"].split(",") if m.strip()]
    if not modes:
        raise ConfigError("no tracker modes requested")
    for m in modes:
        if m not in (PROPOSAL_FLOW, PROPOSAL_BOOTSTRAP):
            raise ConfigError(f"unknown tracker mode {m!r}")
    return modes


def ospa_series(truth, estimate_rows, params: OspaParams,
                n_steps: int) -> np.ndarray:
    """Per-step set distance between estimated and true positions."""
    truth_by_k: dict[int, list] = {}
    for k, _obj, state in truth:
        truth_by_k.setdefault(k, []).append(np.asarray(state)[:3])
    est_by_k: dict[int, list] = {}
    for k, _label, state, _existence in estimate_rows:
        est_by_k.setdefault(k, []).append(np.asarray(state)[:3])
    return np.array([ospa(est_by_k.get(k, []), truth_by_k.get(k, []), params)
                     for k in range(1, n_steps + 1)])


def cmd_simulate(cfg: RunConfig, out_dir) -> None:
    """Write truth.csv and measurements.csv for one simulated run."""
    _check_seed(cfg)
    scenario = build_scenario(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth, frames = simulate(scenario, sim_rng(cfg.run["seed"], 0))
    write_truth_csv(out / "truth.csv", truth)
    write_measurements_csv(out / "measurements.csv", frames)
    write_resolved_config(cfg, out / "config_resolved.ini")
    log.info("wrote %d truth rows and %d frames to %s",
             len(truth), len(frames), out)


def cmd_track(cfg: RunConfig, measurements_path, out_path,
              mode: str | None = None) -> None:
    """Run the tracker over a measurement file and write estimates."""
    _check_seed(cfg)
    scenario = build_scenario(cfg)
    tcfg = build_tracker_config(cfg, mode)
    frames = read_measurements_csv(measurements_path,
                                   n_steps=cfg.scenario["n_steps"])
    output = run_tracker(frames, scenario.sensor, scenario.birth,
                         scenario.motion, tcfg, cfg.run["seed"])
    out_path = Path(out_path)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    write_estimates_csv(out_path, output.estimate_rows)
    write_resolved_config(cfg, out_path.parent / "config_resolved.ini")
    log.info("wrote %d estimate rows to %s", len(output.estimate_rows), out_path)


def cmd_evaluate(cfg: RunConfig, estimates_path, truth_path, out_path) -> None:
    """Write the per-step set distance between an estimate file and truth."""
    params = build_ospa_params(cfg)
    truth = read_truth_csv(truth_path)
    rows = read_estimates_csv(estimates_path)
    truth_max = max([k for k, _o, _s in truth], default=0)
    est_max = max([k for k, _l, _s, _e in rows], default=0)
    if est_max > truth_max:
        raise ValueError(
            f"estimates reach step {est_max} but the truth file ends at "
            f"step {truth_max}; the two files do not cover the same steps")
    n_steps = max(truth_max, est_max)
    series = ospa_series(truth, rows, params, n_steps)
    out_path = Path(out_path)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    write_series_csv(out_path, "ospa", series)
    write_resolved_config(cfg, out_path.parent / "config_resolved.ini")


def _mc_one_run(payload):
    """Simulate, track (every mode), and evaluate a single run."""
    cfg: RunConfig = payload["cfg"]
    run: int = payload["run"]
    run_dir = Path(payload["out_dir"]) / "runs" / f"run_{run:04d}"
    run_dir.mkdir(parents=True, exist_ok=True)
    scenario = build_scenario(cfg)
    params = build_ospa_params(cfg)
    seed = cfg.run["seed"]
    truth, frames = simulate(scenario, sim_rng(seed, run))
    write_truth_csv(run_dir / "truth.csv", truth)
    write_measurements_csv(run_dir / "measurements.csv", frames)
    out = {}
    for mode in payload["modes"]:
        tcfg = build_tracker_config(cfg, mode)
        result = run_tracker(frames, scenario.sensor, scenario.birth,
                             scenario.motion, tcfg, (seed, run))
        write_estimates_csv(run_dir / f"estimates_{mode}.csv",
                            result.estimate_rows)
        series = ospa_series(truth, result.estimate_rows, params,
                             scenario.n_steps)
        write_series_csv(run_dir / f"ospa_{mode}.csv", "ospa", series)
        out[mode] = (series, float(result.step_seconds.mean()))
    return run, out


def cmd_mc(cfg: RunConfig, out_dir) -> None:
    """Monte-Carlo sweep: aggregate per-step mean distance and timing."""
    _check_seed(cfg)
    build_scenario(cfg)
    build_ospa_params(cfg)
    modes = _modes(cfg)
    n_runs = cfg.run["n_runs"]
    jobs = cfg.run["jobs"]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payloads = [{"cfg": cfg, "run": r, "out_dir": str(out), "modes": modes}
                for r in range(n_runs)]
    if jobs == 1:
        results = [_mc_one_run(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_mc_one_run, payloads))
    results.sort(key=lambda pair: pair[0])
    for mode in modes:
        table = np.vstack([res[mode][0] for _r, res in results])
        write_series_csv(out / f"mospa_{mode}.csv", "mospa", mospa(table))
    with open(out / "timing.csv", "w", newline="\n") as fh:
        fh.write("mode,mean_step_seconds,n_runs\n")
        for mode in modes:
            mean_sec = float(np.mean([res[mode][1] for _r, res in results]))
            fh.write(f"{mode},{mean_sec:.17g},{n_runs}\n")
    write_resolved_config(cfg, out / "config_resolved.ini")
    log.info("aggregated %d runs into %s", n_runs, out)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowtrack",
        description="Multiobject TDOA tracking with particle-flow proposals")
    parser.add_argument("--verbose", action="store_true",
                        help="log progress information")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI settings file")
        p.add_argument("--seed", type=int, help="override run.seed")

    p_sim = sub.add_parser("simulate", help="write truth and measurements")
    common(p_sim)
    p_sim.add_argument("--out", default="sim_out", help="output directory")

    p_track = sub.add_parser("track", help="run the tracker on measurements")
    common(p_track)
    p_track.add_argument("--measurements", required=True)
    p_track.add_argument("--mode", choices=[PROPOSAL_FLOW, PROPOSAL_BOOTSTRAP],
                         help="override tracker.proposal_mode")
    p_track.add_argument("--particles", type=int,
                         help="override tracker.n_particles")
    p_track.add_argument("--out", default="estimates.csv",
                         help="estimates CSV path")

    p_eval = sub.add_parser("evaluate", help="score estimates against truth")
    common(p_eval)
    p_eval.add_argument("--estimates", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--out", default="ospa.csv", help="output CSV path")

    p_mc = sub.add_parser("mc", help="repeated simulate/track/evaluate")
    common(p_mc)
    p_mc.add_argument("--runs", type=int, help="override run.n_runs")
    p_mc.add_argument("--jobs", type=int, help="override run.jobs")
    p_mc.add_argument("--mode", help="comma-separated tracker modes")
    p_mc.add_argument("--particles", type=int,
                      help="override tracker.n_particles")
    p_mc.add_argument("--out", default="mc_out", help="output directory")
    return parser


def _apply_overrides(cfg: RunConfig, args) -> None:
    if getattr(args, "seed", None) is not None:
        cfg.run["seed"] = args.seed
    if getattr(args, "particles", None) is not None:
        if args.particles < 1:
            raise ConfigError("particle count must be at least 1")
        cfg.tracker["n_particles"] = args.particles
    if getattr(args, "runs", None) is not None:
        cfg.run["n_runs"] = args.runs
    if getattr(args, "jobs", None) is not None:
        cfg.run["jobs"] = args.jobs
    if args.command == "mc" and getattr(args, "mode", None):
        cfg.run["modes"] = args.mode


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        _apply_overrides(cfg, args)
        if args.command == "simulate":
            cmd_simulate(cfg, args.out)
        elif args.command == "track":
            cmd_track(cfg, args.measurements, args.out, args.mode)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.estimates, args.truth, args.out)
        elif args.command == "mc":
            cmd_mc(cfg, args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, CsvFormatError, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
