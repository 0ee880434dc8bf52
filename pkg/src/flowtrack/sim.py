"""Scenario definition, measurement simulation, and CSV input/output.

The stock scenario places objects on a circle around the region of
interest and aims them at its center, so the trajectories converge and
cross mid-run; each object is born on the circle, moves with noisy
constant-velocity dynamics, and disappears at its death step.  Two rigid
receiver arrays produce twelve TDOA components per detection.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import CsvFormatError
from .models import (BirthModel, CvMotionModel, MeasurementFrame, TdoaModel,
                     build_two_array_geometry)


@dataclass(frozen=True)
class ScenarioObject:
    """Birth step, death step (inclusive), and the state at birth."""

    birth: int
    death: int
    initial_state: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "initial_state",
                           np.asarray(self.initial_state, dtype=float))
        if not 1 <= self.birth < self.death:
            raise ValueError("need 1 <= birth < death")

    def alive(self, k: int) -> bool:
        return self.birth <= k <= self.death


@dataclass(frozen=True)
class Scenario:
    n_steps: int
    objects: tuple[ScenarioObject, ...]
    motion: CvMotionModel
    sensor: TdoaModel
    birth: BirthModel
    seed: int = 1

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        for obj in self.objects:
            if obj.death > self.n_steps:
                raise ValueError("object outlives the scenario")


def intersecting_scenario(n_steps: int = 200, n_objects: int = 8, *,
                          roi=((-500.0, 500.0), (-500.0, 500.0), (-500.0, 0.0)),
                          array_centers=((250.0, 0.0, -10.0), (0.0, 250.0, -10.0)),
                          arm: float = 10.0,
                          c: float = 1500.0, sigma_v: float = 3e-6,
                          p_d: float = 0.9, clutter_mean: float = 1.0,
                          mean_births: float = 0.011,
                          survival_prob: float = 0.999,
                          drive_var: float = 0.01, dt: float = 1.0,
                          birth_vel: tuple[float, float] = (-10.0, 10.0),
                          radius: float = 400.0, depth: float = -250.0,
                          seed: int = 1) -> Scenario:
    """Build a converging-trajectory scenario.

    Object j starts on a circle of the given radius at azimuth
    2 pi j / n_objects and constant depth, heading straight at the circle
    center with speed 400 / (100 - birth_step) clipped to [2, 8] m/s, so
    trajectories meet near the center around step 100.  The first object
    appears at step 1 and survives to the end; object j >= 1 appears at
    step 10 j and lives for n_steps - 10 n_objects steps.
    """
    if n_objects < 1:
        raise ValueError("need at least one object")
    roi = np.asarray(roi, dtype=float)
    center = np.array([0.0, 0.0, depth])
    lifetime = n_steps - 10 * n_objects
    if lifetime <= 10:
        raise ValueError("n_steps too small for this many objects")
    objects = []
    for j in range(n_objects):
        birth = 1 if j == 0 else 10 * j
        death = n_steps if j == 0 else birth + lifetime
        azimuth = 2.0 * np.pi * j / n_objects
        pos = center + radius * np.array([np.cos(azimuth), np.sin(azimuth), 0.0])
        speed = float(np.clip(400.0 / (100.0 - birth), 2.0, 8.0))
        heading = (center - pos) / np.linalg.norm(center - pos)
        objects.append(ScenarioObject(birth, death,
                                      np.concatenate([pos, speed * heading])))
    receivers, pairs = build_two_array_geometry(array_centers, arm=arm)
    sensor = TdoaModel(receivers=receivers, pairs=pairs, c=c, sigma_v=sigma_v,
                       p_d=p_d, clutter_mean=clutter_mean)
    motion = CvMotionModel(dt=dt, drive_var=drive_var, survival_prob=survival_prob)
    birth_model = BirthModel(mean_births=mean_births, position_box=roi,
                             velocity_box=np.array([birth_vel] * 3, dtype=float))
    return Scenario(n_steps=n_steps, objects=tuple(objects), motion=motion,
                    sensor=sensor, birth=birth_model, seed=seed)


def default_scenario(seed: int = 1) -> Scenario:
    """The stock 200-step, 8-object scenario."""
    return intersecting_scenario(seed=seed)


def simulate(scenario: Scenario, rng: np.random.Generator):
    """Generate ground truth and measurement frames for one run.

    Per step the draw order is fixed: motion noise for alive objects in
    index order, then one detection coin and (if detected) one noise
    vector per alive object in index order, then the Poisson clutter
    count, the clutter values, and finally a permutation that shuffles
    object and clutter measurements together.

    Returns (truth, frames) where truth is a list of
    (step, object_id, state) records and frames has one MeasurementFrame
    per step, possibly with zero measurements.
    """
    motion, sensor = scenario.motion, scenario.sensor
    states: dict[int, np.ndarray] = {}
    truth = []
    frames = []
    for k in range(1, scenario.n_steps + 1):
        for j, obj in enumerate(scenario.objects):
            if k == obj.birth:
                states[j] = obj.initial_state.copy()
            elif obj.alive(k):
                states[j] = motion.predict(states[j], rng)
            elif j in states:
                del states[j]
        for j in sorted(states):
            truth.append((k, j, states[j].copy()))
        zs = []
        for j in sorted(states):
            if rng.random() < sensor.p_d:
                noise = sensor.sigma_v * rng.normal(size=sensor.meas_dim)
                zs.append(sensor.h(states[j]) + noise)
        n_clutter = int(rng.poisson(sensor.clutter_mean))
        if n_clutter:
            zs.extend(sensor.sample_clutter(rng, n_clutter))
        if zs:
            z = np.asarray(zs)[rng.permutation(len(zs))]
        else:
            z = np.zeros((0, sensor.meas_dim))
        frames.append(MeasurementFrame(k=k, z=z))
    return truth, frames


def sim_rng(seed: int, run: int = 0) -> np.random.Generator:
    """Named random stream for simulation run `run` of a seeded experiment."""
    return np.random.default_rng(np.random.SeedSequence((seed, 0, run)))


# ---------------------------------------------------------------------------
# CSV input/output.  All floats are written with 17 significant digits so
# parsing recovers them exactly; files use LF line endings and one header row.

def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def _open_writer(path):
    return open(path, "w", newline="\n")


def write_truth_csv(path, truth) -> None:
    with _open_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "object_id", "x", "y", "z", "vx", "vy", "vz"])
        for k, obj_id, state in truth:
            w.writerow([int(k), int(obj_id)] + [_fmt(v) for v in state])


def read_truth_csv(path):
    truth = []
    for line_no, row in _iter_csv(path, ["k", "object_id", "x", "y", "z",
                                         "vx", "vy", "vz"]):
        k, obj_id = _parse_int(row[0], line_no), _parse_int(row[1], line_no)
        state = np.array([_parse_float(v, line_no) for v in row[2:]])
        truth.append((k, obj_id, state))
    return truth


def write_measurements_csv(path, frames) -> None:
    meas_dim = frames[0].z.shape[1] if frames else 0
    header = ["k", "meas_index"] + [f"z_{i}" for i in range(1, meas_dim + 1)]
    with _open_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for frame in frames:
            for m, z in enumerate(frame.z, start=1):
                w.writerow([frame.k, m] + [_fmt(v) for v in z])


def read_measurements_csv(path, n_steps: int | None = None):
    """Parse measurement frames; steps absent from the file come back empty.

    `n_steps` fixes the number of frames; by default the largest step
    index present is used (an empty file yields an empty list).
    """
    by_step: dict[int, list[np.ndarray]] = {}
    meas_dim = None
    for line_no, row in _iter_csv(path, None):
        if line_no == 1:
            if len(row) < 2 or row[0] != "k" or row[1] != "meas_index":
                raise CsvFormatError(f"line 1: unexpected header {row!r}")
            meas_dim = len(row) - 2
            expect = [f"z_{i}" for i in range(1, meas_dim + 1)]
            if row[2:] != expect:
                raise CsvFormatError(f"line 1: unexpected header {row!r}")
            continue
        if len(row) != meas_dim + 2:
            raise CsvFormatError(f"line {line_no}: expected {meas_dim + 2} fields")
        k = _parse_int(row[0], line_no)
        _parse_int(row[1], line_no)
        z = np.array([_parse_float(v, line_no) for v in row[2:]])
        by_step.setdefault(k, []).append(z)
    if meas_dim is None:
        raise CsvFormatError("line 1: missing header")
    if n_steps is None:
        n_steps = max(by_step) if by_step else 0
    elif by_step and max(by_step) > n_steps:
        raise CsvFormatError(f"file contains step {max(by_step)} > {n_steps}")
    frames = []
    for k in range(1, n_steps + 1):
        rows = by_step.get(k)
        z = np.asarray(rows) if rows else np.zeros((0, meas_dim))
        frames.append(MeasurementFrame(k=k, z=z))
    return frames


def write_estimates_csv(path, rows) -> None:
    """Rows are (k, label, state, existence) with label = (step, index)."""
    with _open_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "label_k", "label_m", "x", "y", "z",
                    "vx", "vy", "vz", "existence"])
        for k, label, state, existence in rows:
            w.writerow([int(k), int(label[0]), int(label[1])]
                       + [_fmt(v) for v in state] + [_fmt(existence)])


def read_estimates_csv(path):
    rows = []
    header = ["k", "label_k", "label_m", "x", "y", "z", "vx", "vy", "vz",
              "existence"]
    for line_no, row in _iter_csv(path, header):
        k = _parse_int(row[0], line_no)
        label = (_parse_int(row[1], line_no), _parse_int(row[2], line_no))
        state = np.array([_parse_float(v, line_no) for v in row[3:9]])
        rows.append((k, label, state, _parse_float(row[9], line_no)))
    return rows


def write_series_csv(path, name: str, values) -> None:
    """One (step, value) series, e.g. per-step distances."""
    with _open_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", name])
        for k, v in enumerate(np.asarray(values, dtype=float), start=1):
            w.writerow([k, _fmt(v)])


def read_series_csv(path, name: str) -> np.ndarray:
    values = []
    for line_no, row in _iter_csv(path, ["k", name]):
        k = _parse_int(row[0], line_no)
        if k != len(values) + 1:
            raise CsvFormatError(f"line {line_no}: expected step {len(values) + 1}")
        values.append(_parse_float(row[1], line_no))
    return np.asarray(values)


def _iter_csv(path, header):
    """Yield (line_no, row) for data rows; validate the header if given."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for line_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if header is not None:
                if line_no == 1:
                    if row != header:
                        raise CsvFormatError(f"line 1: expected header {header}")
                    continue
                if len(row) != len(header):
                    raise CsvFormatError(
                        f"line {line_no}: expected {len(header)} fields")
            yield line_no, row


def _parse_int(text: str, line_no: int) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise CsvFormatError(f"line {line_no}: bad integer {text!r}") from exc


def _parse_float(text: str, line_no: int) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise CsvFormatError(f"line {line_no}: bad number {text!r}") from exc
