"""On-disk formats for focus stacks and calibration samples.

A focus stack directory holds binary PGM (P5) frames plus ``stack.idx``,
one ``rho<TAB>filename`` line per frame. Calibration samples are CSV with
header ``rho_star,u_cm``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import UwlocError
from .focus import FocusStack

INDEX_NAME = "stack.idx"
CALIBRATION_HEADER = ["rho_star", "u_cm"]


class FormatError(UwlocError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, path=None, line=None):
        where = str(path) if path is not None else "<input>"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


def write_pgm(path, image, bits: int = 16):
    """Save intensities in [0, 1] as P5 with maxval 255 or 65535."""
    a = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    if bits == 8:
        data = np.round(a * 255).astype(np.uint8)
    elif bits == 16:
        data = np.round(a * 65535).astype(np.uint16)
    else:
        raise ValueError("bits must be 8 or 16")
    Image.fromarray(data).save(path, format="PPM")


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode not in ("L", "I", "I;16", "I;16B"):
            raise FormatError(f"not a grayscale PGM (format={im.format}, mode={im.mode})", path)
        maxval = 255.0 if im.mode == "L" else 65535.0
        return np.asarray(im, dtype=float) / maxval


def write_stack(stack: FocusStack, directory, bits: int = 16) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for k, (rho, frame) in enumerate(zip(stack.positions, stack.frames)):
        name = f"frame_{k:03d}.pgm"
        write_pgm(directory / name, frame, bits)
        lines.append(f"{float(rho)!r}\t{name}\n")
    (directory / INDEX_NAME).write_text("".join(lines))
    return directory


def read_stack(directory) -> FocusStack:
    directory = Path(directory)
    index = directory / INDEX_NAME
    if not index.is_file():
        raise FormatError("missing index file", index)
    positions, frames = [], []
    for lineno, raw in enumerate(index.read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 2:
            raise FormatError("expected 'rho<TAB>filename'", index, lineno)
        try:
            positions.append(float(parts[0]))
        except ValueError:
            raise FormatError(f"bad motor position {parts[0]!r}", index, lineno) from None
        frame_path = directory / parts[1].strip()
        if not frame_path.is_file():
            raise FormatError(f"frame {parts[1]!r} not found", index, lineno)
        frames.append(read_pgm(frame_path))
    return FocusStack(positions, frames)


def read_calibration_csv(path) -> np.ndarray:
    """(n, 2) array of (rho_star, u_cm). Errors carry the 1-based line number."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CALIBRATION_HEADER:
            raise FormatError(f"expected header {','.join(CALIBRATION_HEADER)}", path, 1)
        for row in reader:
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise FormatError(f"expected 2 fields, got {len(row)}", path, reader.line_num)
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                raise FormatError(f"non-numeric value in {row}", path, reader.line_num) from None
    return np.array(rows, dtype=float).reshape(-1, 2)


def write_calibration_csv(path, samples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CALIBRATION_HEADER)
        for rho, u in np.asarray(samples, dtype=float):
            w.writerow([repr(float(rho)), repr(float(u))])
