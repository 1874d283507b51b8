"""Pinhole stereo geometry: model projection and pixel back-projection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, NonPositiveDisparity

# Absorbs float representation error so that exact halves (86.4999999...)
# round up as intended.
_ROUND_EPS = 1e-9


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5 + _ROUND_EPS))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float  # meters
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidConfig(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not self.baseline > 0:
            raise InvalidConfig(f"baseline must be positive, got {self.baseline}")
        if self.cx < 0 or self.cy < 0:
            raise InvalidConfig(f"principal point must be non-negative, got ({self.cx}, {self.cy})")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, self.skew, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class ObjectModel:
    """Real-world extent of the object class to detect, in meters."""

    width_world: float
    height_world: float

    def __post_init__(self):
        if not (self.width_world > 0 and self.height_world > 0):
            raise InvalidConfig(
                f"model size must be positive, got {self.width_world} x {self.height_world}"
            )

    @property
    def aspect(self) -> float:
        """Height over width."""
        return self.height_world / self.width_world


PEDESTRIAN = ObjectModel(0.60, 1.73)


@dataclass(frozen=True)
class Point3D:
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class BoxSize:
    width_px: int
    height_px: int


def _check_disparity(disparity: float) -> None:
    if not disparity > 0:
        raise NonPositiveDisparity(f"disparity must be > 0, got {disparity}")


def depth_from_disparity(intr: CameraIntrinsics, disparity: float) -> float:
    _check_disparity(disparity)
    return intr.fx * intr.baseline / disparity


def project_point(intr: CameraIntrinsics, point: Point3D) -> tuple[float, float]:
    """Project a camera-frame point to (u, v) pixel coordinates."""
    x = intr.K @ np.array([point.x, point.y, point.z])
    return float(x[0] / x[2]), float(x[1] / x[2])


def backproject(intr: CameraIntrinsics, u: float, v: float, disparity: float) -> Point3D:
    z = depth_from_disparity(intr, disparity)
    return Point3D((u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z)


def model_corners(model: ObjectModel, depth: float) -> np.ndarray:
    """The four model corners (4x3) at ``depth``, counter-clockwise from lower-left."""
    w, h = model.width_world, model.height_world
    return np.array([[0.0, 0.0, depth], [w, 0.0, depth], [w, h, depth], [0.0, h, depth]])


def project_model(intr: CameraIntrinsics, model: ObjectModel, disparity: float) -> BoxSize:
    """Pixel size of ``model`` standing at the depth encoded by ``disparity``.

    The corners are projected with the full intrinsic matrix and the box size
    is the difference of the upper-right and lower-left image points. Rounding
    happens once, after the subtraction.
    """
    depth = depth_from_disparity(intr, disparity)
    corners = model_corners(model, depth)
    P = intr.K @ np.hstack([np.eye(3), np.zeros((3, 1))])
    homog = np.hstack([corners, np.ones((4, 1))]) @ P.T
    pixels = homog[:, :2] / homog[:, 2:3]
    w_px, h_px = pixels[2] - pixels[0]
    return BoxSize(round_half_up(w_px), round_half_up(h_px))


def box_size_simple(intr: CameraIntrinsics, model: ObjectModel, disparity: float) -> BoxSize:
    """Skew-free closed form of :func:`project_model`."""
    _check_disparity(disparity)
    w_px = disparity * model.width_world / intr.baseline
    h_px = (intr.fy / intr.fx) * disparity * model.height_world / intr.baseline
    return BoxSize(round_half_up(w_px), round_half_up(h_px))
