"""Regenerate the CSV files shipped in src/uwloc/data.

calibration.csv: (rho*, u) pairs drawn from the published ranging constants
with Gaussian distance noise of 3.43 cm, ten distances from 10 to 120 cm.
threebot_replay.csv: the measurements recorded by the bundled threebot run.
"""

import tempfile
from pathlib import Path
import shutil

import numpy as np

from uwloc import focus, logs, scenario, stackio
from uwloc.sim import REFERENCE_RANGING, run_scenario

DATA = Path(__file__).resolve().parents[1] / "src" / "uwloc" / "data"


def calibration(seed=61, repeats=12, sigma=3.43):
    rng = np.random.default_rng(seed)
    u = np.repeat(np.linspace(10.0, 120.0, 10), repeats)
    rho = REFERENCE_RANGING.position(u)
    return np.column_stack([rho, u + rng.normal(0.0, sigma, u.size)])


def main():
    stackio.write_calibration_csv(DATA / "calibration.csv", calibration())
    log = run_scenario(scenario.load_bundled("threebot"))
    with tempfile.TemporaryDirectory() as tmp:
        logs.write_log(tmp, log)
        shutil.copy(Path(tmp) / "measurements.csv", DATA / "threebot_replay.csv")


if __name__ == "__main__":
    main()
