"""Disparity -> box size lookup table."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .camera import BoxSize, CameraIntrinsics, ObjectModel, project_model, round_half_up
from .errors import InvalidConfig, OutOfRange


@dataclass(frozen=True)
class LutConfig:
    d_min: float = 1.0
    d_max: float = 128.0
    delta_d: float = 1.0

    def __post_init__(self):
        if not self.delta_d > 0:
            raise InvalidConfig(f"delta_d must be positive, got {self.delta_d}")
        if not self.d_min > 0:
            raise InvalidConfig(f"d_min must be positive, got {self.d_min}")
        if self.d_min > self.d_max:
            raise InvalidConfig(f"d_min {self.d_min} exceeds d_max {self.d_max}")

    @property
    def size(self) -> int:
        # tolerate float noise in (d_max - d_min) / delta_d
        return int(math.floor((self.d_max - self.d_min) / self.delta_d + 1e-9)) + 1

    def disparity_at(self, index: int) -> float:
        return self.d_min + index * self.delta_d


@dataclass(frozen=True)
class SizeLut:
    config: LutConfig
    widths: np.ndarray = field(repr=False)
    heights: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.widths)

    def __getitem__(self, index: int) -> BoxSize:
        return BoxSize(int(self.widths[index]), int(self.heights[index]))

    @property
    def entries(self) -> list[BoxSize]:
        return [self[i] for i in range(len(self))]

    @property
    def disparities(self) -> np.ndarray:
        return self.config.d_min + np.arange(len(self)) * self.config.delta_d

    def index_of(self, disparity: float) -> int:
        cfg = self.config
        if not cfg.d_min <= disparity <= cfg.d_max:
            raise OutOfRange(f"disparity {disparity} outside [{cfg.d_min}, {cfg.d_max}]")
        return min(round_half_up((disparity - cfg.d_min) / cfg.delta_d), len(self) - 1)

    def indices(self, disparity: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`index_of`; entries outside the table range map to -1."""
        cfg = self.config
        d = np.asarray(disparity, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            inside = (d >= cfg.d_min) & (d <= cfg.d_max)
            idx = np.floor((d - cfg.d_min) / cfg.delta_d + 0.5 + 1e-9)
        idx = np.where(inside, np.minimum(idx, len(self) - 1), -1)
        return idx.astype(np.int32)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["disparity", "width_px", "height_px"])
        for d, w, h in zip(self.disparities, self.widths, self.heights):
            writer.writerow([f"{d:.6g}", int(w), int(h)])
        return buf.getvalue()


def build_lut(intr: CameraIntrinsics, model: ObjectModel, cfg: LutConfig | None = None) -> SizeLut:
    cfg = cfg or LutConfig()
    sizes = [project_model(intr, model, cfg.disparity_at(i)) for i in range(cfg.size)]
    widths = np.array([s.width_px for s in sizes], dtype=np.int32)
    heights = np.array([s.height_px for s in sizes], dtype=np.int32)
    widths.flags.writeable = False
    heights.flags.writeable = False
    return SizeLut(cfg, widths, heights)


def lookup(lut: SizeLut, disparity: float) -> BoxSize:
    return lut[lut.index_of(disparity)]
