"""Cost model of conventional sliding-window search.

How many windows an exhaustive search needs for a given image, object size
range and target overlap, plus the scaling/positioning tolerances that a
target IoU permits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .camera import round_half_up
from .errors import InvalidConfig, InvalidTheta, ObjectLargerThanImage

ADDITIVE = "additive"
GEOMETRIC = "geometric"


def _check_theta(theta_iou: float) -> None:
    if not 0 < theta_iou <= 1:
        raise InvalidTheta(f"theta_iou must lie in (0, 1], got {theta_iou}")


def scaling_error(theta_iou: float) -> float:
    """Largest relative size mismatch that still reaches ``theta_iou``."""
    _check_theta(theta_iou)
    return 1.0 / math.sqrt(theta_iou) - 1.0


def positioning_error(theta_iou: float) -> float:
    """Largest relative centre offset that still reaches ``theta_iou``."""
    _check_theta(theta_iou)
    # equal to (theta - 2 sqrt(theta) + 1) / (1 - theta), without the cancellation near 1
    s = math.sqrt(theta_iou)
    return (1.0 - s) / (1.0 + s)


def step_fraction(theta_iou: float) -> float:
    """Window stride as a fraction of the window size (twice the positioning error)."""
    return 2.0 * positioning_error(theta_iou)


@dataclass(frozen=True)
class TheoryParams:
    image_width: int
    image_height: int
    width_min: float
    width_max: float
    aspects: tuple[float, ...] = (3.0,)
    theta_iou: float = 0.5
    width_mode: str = ADDITIVE
    # pixels in additive mode, ratio in geometric mode; None picks 1 px / (1 + eps_k)^2
    width_step: float | None = None

    def __post_init__(self):
        if self.image_width <= 0 or self.image_height <= 0:
            raise InvalidConfig("image dimensions must be positive")
        if not 0 < self.theta_iou < 1:
            raise InvalidTheta(f"theta_iou must lie in (0, 1), got {self.theta_iou}")
        if not 0 < self.width_min <= self.width_max:
            raise InvalidConfig(f"need 0 < width_min <= width_max, got {self.width_min}, {self.width_max}")
        if not self.aspects or any(r <= 0 for r in self.aspects):
            raise InvalidConfig("aspect ratios must be positive")
        if self.width_mode not in (ADDITIVE, GEOMETRIC):
            raise InvalidConfig(f"unknown width mode {self.width_mode!r}")
        if self.width_step is not None:
            if self.width_mode == ADDITIVE and self.width_step <= 0:
                raise InvalidConfig("additive width step must be positive")
            if self.width_mode == GEOMETRIC and self.width_step <= 1:
                raise InvalidConfig("geometric width ratio must exceed 1")

    @property
    def delta(self) -> float:
        return step_fraction(self.theta_iou)

    def width_ratio(self) -> float:
        """Geometric scale ratio; by default any width is within 1 +/- eps_k of a scale."""
        if self.width_step is not None:
            return self.width_step
        return (1.0 + scaling_error(self.theta_iou)) ** 2

    def widths(self) -> list[int]:
        """Window widths in pixels, rounded and de-duplicated."""
        out: list[int] = []
        if self.width_mode == ADDITIVE:
            step = 1.0 if self.width_step is None else self.width_step
            n = int(math.floor((self.width_max - self.width_min) / step + 1e-9))
            raw = (self.width_min + i * step for i in range(n + 1))
        else:
            ratio = self.width_ratio()
            n = int(math.floor(math.log(self.width_max / self.width_min) / math.log(ratio) + 1e-9))
            raw = (self.width_min * ratio**i for i in range(n + 1))
        for w in raw:
            w_px = max(1, round_half_up(w))
            if not out or w_px != out[-1]:
                out.append(w_px)
        return out

    def scales(self) -> list[tuple[int, float]]:
        """All (width, aspect) pairs searched."""
        return [(w, r) for w in self.widths() for r in self.aspects]


def windows_per_axis(extent: float, window: float, delta: float) -> int:
    """Largest n + 1 with window + n * delta * window <= extent."""
    if window > extent * (1 + 1e-12):
        raise ObjectLargerThanImage(f"window {window} exceeds image extent {extent}")
    if delta <= 0:
        raise InvalidConfig(f"step fraction must be positive, got {delta}")
    return int(math.floor((extent / window - 1.0) / delta + 1e-9)) + 1


def count_fixed_size(p: TheoryParams, obj_width_px: float, r: float, delta: float) -> int:
    n_x = windows_per_axis(p.image_width, obj_width_px, delta)
    n_y = windows_per_axis(p.image_height, r * obj_width_px, delta)
    return n_x * n_y


def count_total(p: TheoryParams, delta: float | None = None) -> int:
    delta = p.delta if delta is None else delta
    return sum(count_fixed_size(p, w, r, delta) for w, r in p.scales())


def simplified_factor(theta_iou: float) -> float:
    _check_theta(theta_iou)
    if theta_iou == 1:
        return math.inf
    return 2.0 * (1.0 - theta_iou) / ((theta_iou + 1.0) - 2.0 * math.sqrt(theta_iou))


def count_simplified(p: TheoryParams) -> float:
    """Large-image approximation of :func:`count_total`.

    The closed form depends on the positioning error linearly rather than
    quadratically, so it tracks the exact count only for moderate targets
    (up to roughly IoU 0.6) and undershoots it badly above that.
    """
    factor = simplified_factor(p.theta_iou)
    area = p.image_width * p.image_height
    return sum(factor * area / (r * w * w) for w, r in p.scales())


def error_curves(theta_grid: Iterable[float]) -> list[tuple[float, float, float]]:
    return [(t, scaling_error(t), positioning_error(t)) for t in theta_grid]


def hypothesis_curve(p: TheoryParams, theta_grid: Sequence[float]) -> list[tuple[float, int]]:
    """Exact window count for each target IoU, geometry taken from ``p``."""
    rows = []
    for t in theta_grid:
        _check_theta(t)
        if t >= 1:
            raise InvalidTheta("window count diverges at theta_iou = 1")
        rows.append((t, count_total(p, step_fraction(t))))
    return rows
