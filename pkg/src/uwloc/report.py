"""Run metrics, threshold checks and figures computed from a RoundLog."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .logs import round_metrics
from .sim import RoundLog


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: object
    limit: object

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value} (limit {self.limit})"


def join_rounds(log: RoundLog) -> list:
    """First round each robot belongs to the valid set, or None."""
    out = []
    for i in range(log.n):
        hits = np.flatnonzero(log.valid[: log.rounds, i])
        out.append(int(hits[0]) if len(hits) else None)
    return out


def relative_errors(log: RoundLog) -> np.ndarray:
    """(R+1,) worst robot error over the tank diagonal; NaN until all robots hold an estimate."""
    if log.target is None:
        return np.full(log.estimates.shape[0], np.nan)
    err = np.linalg.norm(log.estimates - log.target, axis=2).max(axis=1)
    return err / log.tank_diagonal


def convergence_round(log: RoundLog, tolerance: float) -> Optional[int]:
    """First round where every robot's error is below ``tolerance`` (metres)."""
    rel = relative_errors(log) * log.tank_diagonal
    hits = np.flatnonzero(rel < tolerance)
    return int(hits[0]) if len(hits) else None


def _depth(log, robot):
    return log.surface - log.body[:, robot, 2]


def _attitude_deg(log, robot):
    return np.degrees(np.abs(log.body[:, robot, 3:5]).max(axis=1))


def recovery_time(log: RoundLog, robot: int = 0, after: float = 0.0, depth=None,
                  depth_band: float = 0.005, attitude_band_deg: float = 1.0, hold: float = 1.0) -> Optional[float]:
    """Delay from ``after`` until the robot is inside both bands and stays there ``hold`` seconds.

    Time is measured on the control-tick grid starting with the first tick
    after ``after``; a robot that never leaves the bands recovers in 0.
    """
    t = log.control_t
    if len(t) == 0:
        return None
    target = log.setpoint[:, robot] if depth is None else np.full(len(t), depth)
    ok = (np.abs(_depth(log, robot) - target) < depth_band) & (_attitude_deg(log, robot) < attitude_band_deg)
    dt = t[1] - t[0] if len(t) > 1 else log.round_period
    span = int(round(hold / dt))
    start = int(np.searchsorted(t, after + 1e-9))
    bad = np.concatenate([[0], np.cumsum(~ok)])
    for i in range(start, len(ok) - span + 1):
        if bad[i + span] == bad[i]:
            return 0.0 if i == start else round(float(t[i] - after), 9)
    return None


def steady_attitude_deg(log: RoundLog, robot: int = 0, window: float = 1.0) -> float:
    """Largest roll/pitch magnitude over the final ``window`` seconds."""
    t = log.control_t
    sel = t >= t[-1] - window + 1e-9
    return float(_attitude_deg(log, robot)[sel].max())


def settle_time(log: RoundLog, robot: int, after: float, depth: float, band: float) -> Optional[float]:
    """Time after ``after`` from which the depth stays inside the band to the end of the run."""
    t = log.control_t
    bad = np.flatnonzero((np.abs(_depth(log, robot) - depth) >= band) | (t < after))
    first = bad[-1] + 1 if len(bad) else 0
    if first >= len(t):
        return None
    return max(0.0, round(float(t[first] - after), 9))


def evaluate(log: RoundLog, acceptance: dict) -> list:
    checks = []
    loc = acceptance.get("localization")
    if loc:
        rel = relative_errors(log)
        at = min(loc.get("within_rounds", log.rounds), log.rounds)
        value = float(rel[at])
        checks.append(Check(f"relative error at round {at}", bool(value < loc["max_relative_error"]),
                            round(value, 6), loc["max_relative_error"]))
        joins = join_rounds(log)
        first = loc.get("first_viewer")
        if first is not None:
            checks.append(Check("first viewer", joins[first] == 0, joins, f"robot {first} at round 0"))
        if loc.get("staged_joins"):
            others = [j for i, j in enumerate(joins) if i != first]
            staged = all(j is not None and j > 0 for j in others)
            checks.append(Check("staged joins", staged, joins, "all others join after round 0"))
    rec = acceptance.get("recovery")
    if rec:
        r = recovery_time(log, rec.get("robot", 0), rec["after"], None, rec.get("depth_band", 0.005),
                          rec.get("attitude_band_deg", 1.0), rec.get("hold", 1.0))
        checks.append(Check("recovery time [s]", r is not None and r <= rec["max_time"],
                            None if r is None else round(r, 3), rec["max_time"]))
    st = acceptance.get("settle")
    if st:
        robot = st.get("robot", 0)
        s = settle_time(log, robot, st["after"], st["depth"], st.get("depth_band", 0.005))
        remaining = None if s is None else log.control_t[-1] - st["after"] - s
        ok = s is not None and remaining >= st.get("hold", 1.0) - 1e-9
        checks.append(Check("settle time [s]", ok, None if s is None else round(s, 3),
                            f"within {st.get('depth_band', 0.005)} m, held {st.get('hold', 1.0)} s"))
        peak = float(_attitude_deg(log, robot).max())
        checks.append(Check("peak attitude [deg]", peak < st["max_attitude_deg"], round(peak, 3), st["max_attitude_deg"]))
    return checks


def summarize(log: RoundLog, acceptance: dict | None = None, tolerance: float | None = None) -> dict:
    """Headline numbers for a run."""
    out = {"robots": log.n, "rounds": log.rounds, "duration_s": float(log.control_t[-1]) if len(log.control_t) else 0.0}
    if log.target is not None and log.rounds:
        m = round_metrics(log)
        out["final_max_error_m"] = float(m[-1, 0])
        out["final_relative_error"] = float(relative_errors(log)[-1])
        out["join_rounds"] = join_rounds(log)
        tol = tolerance if tolerance is not None else 0.004 * log.tank_diagonal
        out["convergence_round"] = convergence_round(log, tol)
    if len(log.control_t):
        after = 0.0
        rec = (acceptance or {}).get("recovery")
        if rec:
            after = rec["after"]
        out["recovery_time_s"] = recovery_time(log, 0, after)
        out["steady_attitude_deg"] = steady_attitude_deg(log, 0)
        out["saturated_ticks"] = int(log.saturated.sum())
    return out


def format_summary(summary: dict, checks=()) -> str:
    lines = [f"{k:22s} {v}" for k, v in summary.items()]
    lines += [c.line() for c in checks]
    return "\n".join(lines)


def write_summary_csv(path, summary: dict, checks=()):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in summary.items():
            w.writerow([k, ";".join("" if x is None else str(x) for x in v) if isinstance(v, list) else ("" if v is None else v)])
        for c in checks:
            w.writerow([f"check:{c.name}", "pass" if c.passed else "fail"])


def render_figures(log: RoundLog, out_dir) -> list:
    """Write PNG figures for the run; returns their paths."""
    from . import plotting

    out = Path(out_dir)
    paths = []
    with plotting.style():
        if log.target is not None and log.rounds:
            m = round_metrics(log)
            fig, ax = plotting.figure(2)
            t = np.arange(len(m))
            ax[0, 0].semilogy(t, m[:, 0] * 1000, label="max error")
            ax[0, 0].semilogy(t, np.where(m[:, 1] > 0, m[:, 1], np.nan) * 1000, label="spread")
            for i, j in enumerate(join_rounds(log)):
                if j is not None:
                    ax[0, 0].axvline(j, color=f"C{i + 2}", ls=":", lw=0.8, label=f"robot {i} joins")
            ax[0, 0].set_ylabel("mm")
            ax[0, 0].legend()
            ax[1, 0].step(t, m[:, 2], where="post")
            ax[1, 0].set_ylabel("valid robots")
            ax[1, 0].set_xlabel("round")
            paths.append(plotting.save(fig, out / "convergence.png"))
        if len(log.control_t):
            fig, ax = plotting.figure(3)
            for i in range(log.n):
                ax[0, 0].plot(log.control_t, _depth(log, i) * 100, color=f"C{i}", label=f"robot {i}")
                ax[0, 0].plot(log.control_t, log.setpoint[:, i] * 100, color=f"C{i}", ls="--", lw=0.8)
                ax[1, 0].plot(log.control_t, np.degrees(log.body[:, i, 3]), color=f"C{i}")
                ax[1, 0].plot(log.control_t, np.degrees(log.body[:, i, 4]), color=f"C{i}", ls=":")
            ax[0, 0].invert_yaxis()
            ax[0, 0].set_ylabel("depth [cm]")
            ax[0, 0].legend()
            ax[1, 0].set_ylabel("roll, pitch(:) [deg]")
            for k in range(4):
                ax[2, 0].plot(log.control_t, log.nu[:, 0, k], lw=0.8, label=f"nu{k + 1}")
            ax[2, 0].set_ylabel("robot 0 thrusters")
            ax[2, 0].set_xlabel("time [s]")
            ax[2, 0].legend(ncol=4)
            paths.append(plotting.save(fig, out / "control.png"))
    return paths


def fit_figure(samples, fit, path):
    """Calibration samples against the fitted ranging curve."""
    from . import plotting
    from .focus import ranging_h

    samples = np.asarray(samples, dtype=float)
    with plotting.style():
        fig, ax = plotting.figure(1)
        ax = ax[0, 0]
        ax.plot(samples[:, 0], samples[:, 1], ".", ms=3, alpha=0.5, label="samples")
        rho = np.linspace(samples[:, 0].min(), samples[:, 0].max(), 400)
        m = fit.model
        ax.plot(rho, ranging_h(m, rho), "k", label=f"fit, R$^2$={fit.r_squared:.4f}")
        ax.set_xlabel("peak lens position")
        ax.set_ylabel("object distance [cm]")
        ax.legend()
        return plotting.save(fig, path)


def fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return str(v)
