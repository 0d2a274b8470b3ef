"""CSV export and re-import of a :class:`uwloc.sim.RoundLog`.

Floats are written with ``repr`` so identical runs give identical bytes.
Every file has a header row and one row per (time, robot); columns are
plain comma-separated values that gnuplot or a spreadsheet reads directly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import ContractViolation, UwlocError
from .protocol import REPLAY_HEADER, TRAJECTORY_HEADER
from .sim import RoundLog

CONTROL_HEADER = ["t", "robot", "nu1", "nu2", "nu3", "nu4", "zeta1", "zeta2", "zeta3", "zeta4", "saturated"]
STATES_HEADER = ["t", "robot", "x", "y", "z", "roll", "pitch", "yaw", "vx", "vy", "vz",
                 "droll", "dpitch", "dyaw", "depth_setpoint"]
GIMBAL_HEADER = ["t", "robot", "pan", "tilt"]
SUMMARY_HEADER = ["t", "max_error", "spread", "valid_count"]

FILES = ("trajectory.csv", "measurements.csv", "control.csv", "states.csv", "gimbal.csv", "summary.csv", "meta.json")


class LogNotFoundError(UwlocError, FileNotFoundError):
    pass


def _f(v) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def _time(v) -> str:
    return repr(round(float(v), 9))


def round_metrics(log: RoundLog) -> np.ndarray:
    """(R+1, 3): max error to the target, max pairwise spread, |S^t|."""
    out = np.full((log.estimates.shape[0], 3), np.nan)
    out[:, 2] = log.valid.sum(axis=1)
    for t, x in enumerate(log.estimates):
        x = x[np.all(np.isfinite(x), axis=1)]
        if len(x) == 0:
            continue
        if log.target is not None:
            out[t, 0] = np.linalg.norm(x - log.target, axis=1).max()
        out[t, 1] = np.linalg.norm(x[:, None] - x[None], axis=2).max()
    return out


def _writer(path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_log(out_dir, log: RoundLog, scenario_source: dict | None = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, R = log.n, log.rounds

    fh, w = _writer(out / "trajectory.csv")
    with fh:
        w.writerow(TRAJECTORY_HEADER)
        for t in range(R + 1):
            for i in range(n):
                w.writerow([t, i, *map(_f, log.estimates[t, i]), int(log.valid[t, i])])

    fh, w = _writer(out / "measurements.csv")
    with fh:
        w.writerow(REPLAY_HEADER)
        for t in range(R):
            for i in range(n):
                m = log.measurements[t, i]
                w.writerow([t, i, *map(_f, m), int(np.all(np.isfinite(m)))])

    fh, w = _writer(out / "control.csv")
    with fh:
        w.writerow(CONTROL_HEADER)
        for k, tk in enumerate(log.control_t):
            for i in range(n):
                w.writerow([_time(tk), i, *map(_f, log.nu[k, i]), *map(_f, log.zeta[k, i]), int(log.saturated[k, i])])

    fh, w = _writer(out / "states.csv")
    with fh:
        w.writerow(STATES_HEADER)
        for k, tk in enumerate(log.control_t):
            for i in range(n):
                w.writerow([_time(tk), i, *map(_f, log.body[k, i]), _f(log.setpoint[k, i])])

    fh, w = _writer(out / "gimbal.csv")
    with fh:
        w.writerow(GIMBAL_HEADER)
        for t in range(R):
            for i in range(n):
                w.writerow([t, i, *map(_f, log.gimbal[t, i])])

    fh, w = _writer(out / "summary.csv")
    with fh:
        w.writerow(SUMMARY_HEADER)
        for t, (err, spread, count) in enumerate(round_metrics(log)):
            w.writerow([t, _f(err), _f(spread), int(count)])

    meta = {
        "n": n,
        "rounds": R,
        "target": None if log.target is None else [float(v) for v in log.target],
        "tank_diagonal": log.tank_diagonal,
        "surface": log.surface,
        "round_period": log.round_period,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if scenario_source is not None:
        (out / "scenario.json").write_text(json.dumps(scenario_source, indent=2, sort_keys=True) + "\n")


def _rows(path, header):
    if not path.is_file():
        raise LogNotFoundError(f"missing log file {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head != header:
            raise ContractViolation(f"{path}: expected header {','.join(header)}")
        rows = list(reader)
    return rows


def _num(s):
    return float(s) if s != "" else np.nan


def _grid(rows, n, cols, start=2):
    arr = np.array([[_num(v) for v in r[start:start + cols]] for r in rows]).reshape(-1, n, cols)
    return arr


def read_log(log_dir) -> RoundLog:
    d = Path(log_dir)
    if not d.is_dir():
        raise LogNotFoundError(f"log directory {d} does not exist")
    if not (d / "meta.json").is_file():
        raise LogNotFoundError(f"{d} holds no run logs (meta.json missing)")
    meta = json.loads((d / "meta.json").read_text())
    n, R = meta["n"], meta["rounds"]

    traj = _rows(d / "trajectory.csv", TRAJECTORY_HEADER)
    meas = _rows(d / "measurements.csv", REPLAY_HEADER)
    ctrl = _rows(d / "control.csv", CONTROL_HEADER)
    states = _rows(d / "states.csv", STATES_HEADER)
    gim = _rows(d / "gimbal.csv", GIMBAL_HEADER)
    if len(traj) != (R + 1) * n or len(meas) != R * n or len(ctrl) != len(states) or len(ctrl) % max(n, 1):
        raise ContractViolation(f"{d}: log files disagree on their length")

    C = len(ctrl) // n if n else 0
    return RoundLog(
        n=n,
        target=None if meta["target"] is None else np.array(meta["target"]),
        tank_diagonal=meta["tank_diagonal"],
        estimates=_grid(traj, n, 3),
        valid=np.array([int(r[5]) for r in traj], dtype=bool).reshape(R + 1, n),
        measurements=_grid(meas, n, 3) if R else np.zeros((0, n, 3)),
        gimbal=_grid(gim, n, 2) if R else np.zeros((0, n, 2)),
        control_t=np.array([float(r[0]) for r in ctrl[::n]]) if C else np.zeros(0),
        nu=_grid(ctrl, n, 4) if C else np.zeros((0, n, 4)),
        zeta=_grid(ctrl, n, 4, 6) if C else np.zeros((0, n, 4)),
        saturated=np.array([int(r[10]) for r in ctrl], dtype=bool).reshape(C, n),
        body=_grid(states, n, 12) if C else np.zeros((0, n, 12)),
        setpoint=np.array([_num(r[14]) for r in states]).reshape(C, n),
        surface=meta["surface"],
        round_period=meta["round_period"],
    )
