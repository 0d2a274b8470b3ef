"""Pinhole projection and single-camera localisation.

Camera frame: Z along the optical axis, X right, Y down in the image.
Extrinsics map camera coordinates to world coordinates:
``x_world = R @ x_cam + p``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, DomainError


@dataclass(frozen=True)
class Intrinsics:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (3, 3):
            raise DomainError("intrinsic matrix must be 3x3")
        if not np.array_equal(theta[2], [0.0, 0.0, 1.0]):
            raise DomainError("last row of the intrinsic matrix must be [0, 0, 1]")
        if abs(np.linalg.det(theta)) <= 1e-9:
            raise DomainError("intrinsic matrix is singular")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "_inv", np.linalg.inv(theta))

    @classmethod
    def from_focal(cls, fx, fy, cx, cy, skew=0.0):
        return cls(np.array([[fx, skew, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]]))

    @property
    def inverse(self) -> np.ndarray:
        return self._inv


@dataclass(frozen=True)
class Extrinsics:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        p = np.array(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise DomainError("rotation must be 3x3")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9, rtol=0) or np.linalg.det(R) <= 0:
            raise DomainError("rotation must be orthonormal with det +1")
        R.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class PixelPoint:
    x: float
    y: float


@dataclass(frozen=True)
class CameraRig:
    intrinsics: Intrinsics
    extrinsics: Extrinsics
    width: int
    height: int
    min_range: float
    max_range: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DomainError("image size must be positive")
        if not 0 < self.min_range < self.max_range:
            raise DomainError("need 0 < min_range < max_range")

    def with_extrinsics(self, extrinsics: Extrinsics) -> "CameraRig":
        return CameraRig(self.intrinsics, extrinsics, self.width, self.height, self.min_range, self.max_range)

    @property
    def position(self) -> np.ndarray:
        return self.extrinsics.translation

    @property
    def optical_axis(self) -> np.ndarray:
        return self.extrinsics.rotation[:, 2]


def to_camera(rig: CameraRig, world_point) -> np.ndarray:
    ext = rig.extrinsics
    return ext.rotation.T @ (np.asarray(world_point, dtype=float) - ext.translation)


def project(rig: CameraRig, world_point):
    """Pixel of ``world_point`` and its camera-frame depth ``z_c``."""
    xc = to_camera(rig, world_point)
    z = xc[2]
    if not z > 0:
        raise BehindCameraError(f"point has camera depth {z:.6g} <= 0")
    uvw = rig.intrinsics.theta @ xc / z
    return PixelPoint(float(uvw[0]), float(uvw[1])), float(z)


def localize(rig: CameraRig, pixel: PixelPoint, depth: float) -> np.ndarray:
    """World point at camera depth ``depth`` along the ray through ``pixel``."""
    if not depth > 0:
        raise DomainError(f"depth must be positive, got {depth}")
    ray = rig.intrinsics.inverse @ np.array([pixel.x, pixel.y, 1.0])
    ext = rig.extrinsics
    return depth * (ext.rotation @ ray) + ext.translation


def in_view(rig: CameraRig, world_point) -> bool:
    """Inside the image (0 <= px < size) and within the working range."""
    try:
        pixel, z = project(rig, world_point)
    except BehindCameraError:
        return False
    return (
        0.0 <= pixel.x < rig.width
        and 0.0 <= pixel.y < rig.height
        and rig.min_range <= z <= rig.max_range
    )
