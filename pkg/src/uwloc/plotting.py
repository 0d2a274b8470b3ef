"""Shared matplotlib settings for report figures (file output only)."""

from __future__ import annotations

import math
from contextlib import contextmanager

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

GOLDEN = (math.sqrt(5) - 1) / 2
WIDTH = 6.4

RC = {
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "font.size": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "lines.linewidth": 1.2,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "svg.hashsalt": "uwloc",
}

# strip timestamps and version strings so reruns write identical files
PNG_METADATA = {"Software": None}


@contextmanager
def style():
    with matplotlib.rc_context(RC):
        yield


def figure(rows=1, height_ratio=GOLDEN, sharex=True):
    return plt.subplots(rows, 1, figsize=(WIDTH, WIDTH * height_ratio * rows ** 0.8), sharex=sharex, squeeze=False)


def save(fig, path):
    fig.savefig(path, metadata=PNG_METADATA)
    plt.close(fig)
    return path
