"""Depth from focus.

A region's sharpness (Modified Tenengrad) is swept over the focus motor
range; the motor position of peak sharpness maps to object distance through
the calibrated ranging curve ``h(rho) = f*k*rho / (k*rho - f) + c``.

Lengths are centimetres, motor positions are abstract motor units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .errors import DomainError, FitError, FlatCurveError, InvalidRegionError
from .fitting import levenberg_marquardt

#: Relative floor below which a clarity curve counts as flat.
FLAT_FLOOR = 1e-6


@dataclass(frozen=True)
class ThinLens:
    focal: float

    def __post_init__(self):
        if not self.focal > 0:
            raise DomainError(f"focal length must be positive, got {self.focal}")


@dataclass(frozen=True)
class DofParams:
    """Aperture value and sensor pixel pitch (cm)."""

    aperture: float
    pixel_pitch: float

    def __post_init__(self):
        if not (self.aperture > 0 and self.pixel_pitch > 0):
            raise DomainError("aperture and pixel pitch must be positive")


@dataclass(frozen=True)
class Region:
    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 3 or self.h < 3:
            raise InvalidRegionError(f"region {self.w}x{self.h} is smaller than 3x3")
        if self.x0 < 0 or self.y0 < 0:
            raise InvalidRegionError("region origin must be non-negative")

    @classmethod
    def full(cls, image) -> "Region":
        image = np.asarray(image)
        return cls(0, 0, image.shape[1], image.shape[0])

    def check_inside(self, shape):
        height, width = shape
        if self.x0 + self.w > width or self.y0 + self.h > height:
            raise InvalidRegionError(
                f"region {self} exceeds image of size {width}x{height}"
            )


@dataclass(frozen=True)
class RangingModel:
    """Calibrated map from best-focus motor position to object distance."""

    kappa: float
    focal: float
    offset: float = 0.0

    def __post_init__(self):
        for name in ("kappa", "focal", "offset"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.kappa > 0 and self.focal > 0):
            raise DomainError("kappa and focal must be positive")

    def depth(self, rho):
        return ranging_h(self, rho)

    def position(self, depth):
        """Motor position whose focus depth is ``depth`` (inverse of h)."""
        w = np.asarray(depth, dtype=float) - self.offset
        if np.any(w <= self.focal):
            raise DomainError("depth must exceed focal + offset")
        out = self.focal * w / ((w - self.focal) * self.kappa)
        return float(out) if out.ndim == 0 else out

    def to_dict(self):
        return {"kappa": self.kappa, "focal": self.focal, "offset": self.offset}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["kappa"]), float(d["focal"]), float(d.get("offset", 0.0)))


def as_gray(image) -> np.ndarray:
    a = np.asarray(image, dtype=float)
    if a.ndim != 2 or a.shape[0] < 3 or a.shape[1] < 3:
        raise InvalidRegionError(f"gray image must be 2-D and at least 3x3, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("image contains non-finite samples")
    return a


@dataclass
class FocusStack:
    positions: np.ndarray
    frames: list = field(repr=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.frames = [as_gray(f) for f in self.frames]
        if self.positions.ndim != 1 or len(self.positions) != len(self.frames):
            raise DomainError("one frame per motor position is required")
        if len(self.frames) < 3:
            raise DomainError(f"focus stack needs at least 3 frames, got {len(self.frames)}")
        if np.any(np.diff(self.positions) <= 0):
            raise DomainError("motor positions must be strictly increasing")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise DomainError(f"frames differ in size: {sorted(shapes)}")

    @property
    def shape(self):
        return self.frames[0].shape

    def __len__(self):
        return len(self.frames)


def thin_lens_object_distance(lens: ThinLens, v: float) -> float:
    f = lens.focal
    if not v > f:
        raise DomainError(f"image distance {v} must exceed focal length {f}")
    return f * v / (v - f)


def thin_lens_image_distance(lens: ThinLens, u: float) -> float:
    """Inverse of :func:`thin_lens_object_distance` (the formula is symmetric)."""
    return thin_lens_object_distance(lens, u)


def _sobel_sq(a: np.ndarray) -> np.ndarray:
    # squared gradient magnitude on the interior, 3x3 Sobel
    gx = (a[:-2, 2:] + 2.0 * a[1:-1, 2:] + a[2:, 2:]) - (
        a[:-2, :-2] + 2.0 * a[1:-1, :-2] + a[2:, :-2]
    )
    gy = (a[2:, :-2] + 2.0 * a[2:, 1:-1] + a[2:, 2:]) - (
        a[:-2, :-2] + 2.0 * a[:-2, 1:-1] + a[:-2, 2:]
    )
    return gx * gx + gy * gy


def tenengrad(image, region: Region | None = None, threshold: float = 0.0) -> float:
    """Modified Tenengrad clarity of ``region``.

    Sum of squared Sobel gradient magnitudes over the region's interior
    pixels (those whose 3x3 window lies inside the region), counting only
    pixels whose magnitude exceeds ``threshold``.
    """
    a = as_gray(image)
    if region is None:
        region = Region.full(a)
    region.check_inside(a.shape)
    if threshold < 0:
        raise DomainError("threshold must be non-negative")
    sub = a[region.y0 : region.y0 + region.h, region.x0 : region.x0 + region.w]
    g2 = _sobel_sq(sub)
    return float(g2[g2 > threshold * threshold].sum())


def clarity_curve(stack: FocusStack, region: Region | None = None, threshold: float = 0.0):
    """(rho, T) for every frame, in motor-position order."""
    return [(float(rho), tenengrad(frame, region, threshold)) for rho, frame in zip(stack.positions, stack.frames)]


def peak_focus(curve) -> float:
    """Motor position of peak clarity with 3-point parabolic refinement."""
    rho = np.array([p[0] for p in curve], dtype=float)
    t = np.array([p[1] for p in curve], dtype=float)
    if len(rho) < 3:
        raise DomainError("peak search needs at least 3 curve points")
    if np.all(t == t[0]):
        raise FlatCurveError("clarity curve is flat")
    k = int(np.argmax(t))
    if k == 0 or k == len(t) - 1:
        return float(rho[k])

    x0, x1, x2 = rho[k - 1 : k + 2]
    y0, y1, y2 = t[k - 1 : k + 2]
    # vertex of the interpolating quadratic (Newton divided differences)
    d01 = (y1 - y0) / (x1 - x0)
    d12 = (y2 - y1) / (x2 - x1)
    a = (d12 - d01) / (x2 - x0)
    if not a < 0:
        return float(rho[k])
    b = d01 - a * (x0 + x1)
    vertex = -b / (2.0 * a)
    if not x0 <= vertex <= x2:
        return float(rho[k])
    return float(vertex)


def ranging_h(model: RangingModel, rho):
    """Object distance for best-focus motor position ``rho``."""
    x = model.kappa * np.asarray(rho, dtype=float)
    if np.any(x <= model.focal):
        raise DomainError("kappa*rho must exceed the focal length")
    out = model.focal * x / (x - model.focal) + model.offset
    return float(out) if out.ndim == 0 else out


class RangingFit(NamedTuple):
    model: RangingModel
    r_squared: float
    rmse: float


def _initial_guess(rho, u):
    # c = 0 makes 1/u linear in 1/rho: 1/u = 1/f - (1/kappa) * (1/rho)
    lo, hi = int(np.argmin(rho)), int(np.argmax(rho))
    X = np.array([[1.0, -1.0 / rho[lo]], [1.0, -1.0 / rho[hi]]])
    candidates = []
    try:
        candidates.append(np.linalg.solve(X, [1.0 / u[lo], 1.0 / u[hi]]))
    except np.linalg.LinAlgError:
        pass
    A = np.column_stack([np.ones_like(rho), -1.0 / rho])
    candidates.append(np.linalg.lstsq(A, 1.0 / u, rcond=None)[0])
    for inv_f, inv_k in candidates:
        if inv_f > 0 and inv_k > 0:
            p = np.array([1.0 / inv_k, 1.0 / inv_f, 0.0])
            if np.all(p[0] * rho > p[1]):
                return p
    return None


def fit_ranging_model(samples, max_iter: int = 200, xtol: float = 1e-10) -> RangingFit:
    """Least-squares fit of (kappa, focal, offset) to (rho*, u) samples.

    R^2 is ``1 - SSres/SStot`` and RMSE is ``sqrt(SSres/n)``.
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise DomainError("samples must be (rho, u) pairs")
    rho, u = data[:, 0], data[:, 1]
    if len(rho) < 4:
        raise DomainError(f"need at least 4 samples, got {len(rho)}")
    if len(np.unique(rho)) < 4:
        raise DomainError("need at least 4 distinct motor positions")
    if np.any(rho <= 0):
        raise DomainError("motor positions must be positive")

    def residuals(p):
        x = p[0] * rho
        return p[1] * x / (x - p[1]) + p[2] - u

    def jacobian(p):
        k, f, _ = p
        x = k * rho
        den = (x - f) ** 2
        return np.column_stack([-f * f * rho / den, x * x / den, np.ones_like(rho)])

    def feasible(p):
        return p[0] > 0 and p[1] > 0 and bool(np.all(p[0] * rho > p[1]))

    p0 = _initial_guess(rho, u)
    if p0 is None:
        raise FitError("could not find a feasible starting point")
    res = levenberg_marquardt(residuals, jacobian, p0, feasible=feasible, max_iter=max_iter, xtol=xtol)
    model = RangingModel(*res.params)
    ss_res = res.cost
    ss_tot = float(np.sum((u - u.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return RangingFit(model, r2, math.sqrt(ss_res / len(u)))


def depth_of_field(lens: ThinLens, dof: DofParams, u: float) -> float:
    """Extent of the sharp object-distance interval around ``u``."""
    f = lens.focal
    if u < f:
        raise DomainError(f"object distance {u} is inside the focal length {f}")
    spread = dof.aperture * dof.pixel_pitch * (u - f)
    f2 = f * f
    if f2 <= spread:
        raise DomainError("far depth-of-field limit is infinite (hyperfocal regime)")
    return f2 * u / (f2 - spread) - f2 * u / (f2 + spread)


def is_flat(values) -> bool:
    t = np.asarray(values, dtype=float)
    return bool(t.max() - t.min() < FLAT_FLOOR * max(t.max(), 1.0))


def depth_map(stack: FocusStack, model: RangingModel, block: int = 50, threshold: float = 0.0) -> np.ndarray:
    """Per-block depth estimate; NaN marks flat or unmeasurable cells.

    Partial blocks at the right and bottom edges are kept; those thinner
    than 3 pixels cannot carry a Sobel window and are marked.
    """
    if block < 3:
        raise DomainError("block must be at least 3 pixels")
    height, width = stack.shape
    rows, cols = -(-height // block), -(-width // block)
    out = np.full((rows, cols), np.nan)
    for r in range(rows):
        for c in range(cols):
            y0, x0 = r * block, c * block
            w, h = min(block, width - x0), min(block, height - y0)
            if w < 3 or h < 3:
                continue
            curve = clarity_curve(stack, Region(x0, y0, w, h), threshold)
            if is_flat([t for _, t in curve]):
                continue
            try:
                out[r, c] = ranging_h(model, peak_focus(curve))
            except (DomainError, FlatCurveError):
                pass
    return out


def blur_sigma(depth, focus_depth, dof: DofParams, blur_scale: float):
    """Gaussian defocus radius in pixels: ``scale * aperture * |1/u - 1/u_focus|``."""
    return blur_scale * dof.aperture * np.abs(1.0 / np.asarray(depth, float) - 1.0 / focus_depth)


def simulate_focus_stack(
    depth,
    texture,
    lens: ThinLens,
    dof: DofParams,
    model: RangingModel,
    positions: Sequence[float],
    blur_scale: float = 150.0,
    sigma_step: float = 1e-3,
) -> FocusStack:
    """Render a focus sweep of ``texture`` placed at per-pixel ``depth``.

    Frame k focuses at ``model.depth(positions[k])``; each pixel is blurred
    with a Gaussian whose width grows with its defocus. Pixel blur widths
    are quantised to ``sigma_step`` so each distinct width is filtered once.
    """
    tex = as_gray(texture)
    depth = np.broadcast_to(np.asarray(depth, dtype=float), tex.shape)
    if np.any(depth <= lens.focal):
        raise DomainError("scene depths must exceed the focal length")
    positions = np.asarray(positions, dtype=float)
    if np.any(np.diff(positions) <= 0):
        raise DomainError("positions must be strictly increasing")
    if np.any(model.kappa * positions <= model.focal):
        raise DomainError("every position must satisfy kappa*rho > focal")

    frames = []
    for rho in positions:
        sigma = blur_sigma(depth, ranging_h(model, rho), dof, blur_scale)
        levels = np.round(sigma / sigma_step).astype(np.int64)
        frame = np.empty_like(tex)
        for level in np.unique(levels):
            mask = levels == level
            s = level * sigma_step
            frame[mask] = tex[mask] if level == 0 else ndimage.gaussian_filter(tex, s, mode="reflect")[mask]
        frames.append(frame)
    return FocusStack(positions, frames)


def sweep_positions(model: RangingModel, near: float, far: float, n: int) -> np.ndarray:
    """Motor positions whose focus depths are evenly spaced in 1/depth.

    Returned in increasing motor order (far focus first).
    """
    inv = np.linspace(1.0 / far, 1.0 / near, n)
    return np.sort(model.position(1.0 / inv))
