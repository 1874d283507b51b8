"""Disparity sliding window proposal generation.

Every visited pixel gets exactly one box, sized from the lookup table at its
disparity and centred on the pixel. Strides follow the box size, so near
objects are scanned coarsely and far ones finely. Candidates are then
filtered by image-border clipping and disparity homogeneity.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numba
import numpy as np

from .camera import BoxSize, CameraIntrinsics, Point3D, round_half_up
from .errors import EmptyImage, InvalidConfig, InvalidTheta, LutRangeMismatch
from .sizelut import SizeLut
from .theory import step_fraction

RELATIVE = "relative"
ABSOLUTE = "absolute"

# candidate status codes
EMITTED = 0
CLIPPED = 1
TOO_NARROW = 2
INHOMOGENEOUS = 3

SAMPLE_FRACTIONS = (0.25, 0.5, 0.75)
MIN_VALID_SAMPLES = 5
MIN_CLIPPED_AREA = 0.5
LUT_RANGE_SLACK = 0.1

_NO_STEP = np.iinfo(np.int32).max


@dataclass(frozen=True)
class DisparityImage:
    """Dense disparity map; values <= 0 or non-finite mark unmatched pixels."""

    data: np.ndarray
    invalid_marker: float = 0.0

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"disparity data must be 2-D, got shape {self.data.shape}")
        if self.invalid_marker > 0:
            raise ValueError("invalid marker must be <= 0")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def valid_mask(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.isfinite(self.data) & (self.data > 0)


@dataclass(frozen=True)
class Region3D:
    min: Point3D
    max: Point3D

    def __post_init__(self):
        if not (self.min.x <= self.max.x and self.min.y <= self.max.y and self.min.z <= self.max.z):
            raise InvalidConfig("region minimum must not exceed maximum")

    def contains(self, p: Point3D) -> bool:
        return (
            self.min.x <= p.x <= self.max.x
            and self.min.y <= p.y <= self.max.y
            and self.min.z <= p.z <= self.max.z
        )


@dataclass(frozen=True)
class DswConfig:
    theta_iou: float = 0.5
    homogeneity_sigma: float = 0.1
    homogeneity_mode: str = RELATIVE
    verify_homogeneity: bool = True
    jump_threshold: float = 1.0
    min_box_width_px: int = 10
    roi: Optional[Region3D] = None
    min_step_px: int = 1

    def __post_init__(self):
        if not 0 < self.theta_iou < 1:
            raise InvalidTheta(f"theta_iou must lie in (0, 1), got {self.theta_iou}")
        if self.homogeneity_sigma < 0:
            raise InvalidConfig("homogeneity_sigma must be >= 0")
        if self.homogeneity_mode not in (RELATIVE, ABSOLUTE):
            raise InvalidConfig(f"unknown homogeneity mode {self.homogeneity_mode!r}")
        if not self.jump_threshold > 0:
            raise InvalidConfig("jump_threshold must be > 0")
        if self.min_step_px < 1:
            raise InvalidConfig("min_step_px must be >= 1")


@dataclass(frozen=True)
class Proposal:
    x: int
    y: int
    w: int
    h: int
    disparity: float
    depth_m: float
    homogeneity_stddev: Optional[float] = None
    # visited pixel the box was anchored on
    u: int = -1
    v: int = -1

    @property
    def box(self) -> tuple[int, int, int, int]:
        return self.x, self.y, self.w, self.h


@dataclass
class ScanResult:
    """Everything a scan produced, including rejected candidates."""

    proposals: list[Proposal]
    candidate_u: np.ndarray
    candidate_v: np.ndarray
    status: np.ndarray
    n_out_of_range: int
    image_shape: tuple[int, int]
    visited_rows: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0, np.int32))

    def count(self, status: int) -> int:
        return int(np.count_nonzero(self.status == status))

    def sampled_mask(self) -> np.ndarray:
        """Boolean image of all visited pixels with usable disparity."""
        mask = np.zeros(self.image_shape, dtype=bool)
        mask[self.candidate_v, self.candidate_u] = True
        return mask


def step_sizes(size: BoxSize, theta_iou: float, min_step: int = 1) -> tuple[int, int]:
    """Horizontal and vertical stride for a box of ``size`` at target IoU ``theta_iou``."""
    width_px, height_px = size.width_px, size.height_px
    if width_px <= 0:
        raise InvalidConfig("box width must be positive")
    if not 0 < theta_iou < 1:
        raise InvalidTheta(f"theta_iou must lie in (0, 1), got {theta_iou}")
    delta = step_fraction(theta_iou)
    return max(min_step, round_half_up(delta * width_px)), max(min_step, round_half_up(delta * height_px))


def step_tables(lut: SizeLut, theta_iou: float, min_step: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """:func:`step_sizes` for every table entry."""
    delta = step_fraction(theta_iou)
    sx = np.floor(delta * np.maximum(lut.widths, 1) + 0.5 + 1e-9).astype(np.int32)
    sy = np.floor(delta * lut.heights + 0.5 + 1e-9).astype(np.int32)
    return np.maximum(sx, min_step), np.maximum(sy, min_step)


def homogeneity_stats(data: np.ndarray, x, y, w, h) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Statistics of the 3x3 interior pattern: mean, population std, valid count.

    Works on arrays of boxes at once. Samples sit at 25/50/75 percent of the
    box extent so that error-prone object borders are avoided.
    """
    x = np.atleast_1d(np.asarray(x, dtype=np.int64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    w = np.atleast_1d(np.asarray(w, dtype=np.int64))
    h = np.atleast_1d(np.asarray(h, dtype=np.int64))
    frac = np.array(SAMPLE_FRACTIONS)
    sx = x[:, None] + np.floor(frac[None, :] * w[:, None]).astype(np.int64)
    sy = y[:, None] + np.floor(frac[None, :] * h[:, None]).astype(np.int64)
    rows = np.repeat(sy, 3, axis=1)
    cols = np.tile(sx, (1, 3))
    H, W = data.shape
    inside = (rows >= 0) & (rows < H) & (cols >= 0) & (cols < W)
    vals = data[np.clip(rows, 0, H - 1), np.clip(cols, 0, W - 1)].astype(np.float64)
    with np.errstate(invalid="ignore"):
        ok = inside & np.isfinite(vals) & (vals > 0)
    n = ok.sum(axis=1)
    safe_n = np.maximum(n, 1)
    filled = np.where(ok, vals, 0.0)
    mean = filled.sum(axis=1) / safe_n
    dev = np.where(ok, vals - mean[:, None], 0.0)
    std = np.sqrt((dev * dev).sum(axis=1) / safe_n)
    # identical samples have exactly zero spread, whatever the mean's rounding
    lo = np.where(ok, vals, np.inf).min(axis=1)
    hi = np.where(ok, vals, -np.inf).max(axis=1)
    std = np.where(lo == hi, 0.0, std)
    return mean, std, n


def _homogeneity_pass(mean, std, n, cfg: DswConfig) -> tuple[np.ndarray, np.ndarray]:
    if cfg.homogeneity_mode == RELATIVE:
        with np.errstate(divide="ignore", invalid="ignore"):
            spread = np.where(n > 0, std / np.where(mean > 0, mean, 1.0), np.inf)
    else:
        spread = np.where(n > 0, std, np.inf)
    # zero spread always passes, so sigma = 0 keeps perfectly flat patches
    passed = (n >= MIN_VALID_SAMPLES) & ((spread < cfg.homogeneity_sigma) | (spread == 0))
    return passed, spread


def homogeneity_check(img: DisparityImage, box, cfg: DswConfig) -> tuple[bool, float]:
    """Whether the box interior has near-constant disparity, and the measured spread.

    ``box`` is anything with ``x, y, w, h`` attributes or an ``(x, y, w, h)``
    tuple. The spread is relative to the sample mean in relative mode.
    """
    x, y, w, h = box.box if hasattr(box, "box") else box
    if w <= 0 or h <= 0:
        return False, math.inf
    mean, std, n = homogeneity_stats(img.data, x, y, w, h)
    passed, spread = _homogeneity_pass(mean, std, n, cfg)
    return bool(passed[0]), float(spread[0])


def backproject_image(intr: CameraIntrinsics, img: DisparityImage) -> tuple[np.ndarray, ...]:
    """Camera-frame X, Y, Z for every pixel; NaN where disparity is invalid."""
    valid = img.valid_mask()
    d = np.where(valid, img.data, np.nan).astype(np.float64)
    v, u = np.mgrid[0 : img.height, 0 : img.width]
    Z = intr.fx * intr.baseline / d
    X = (u - intr.cx) * Z / intr.fx
    Y = (v - intr.cy) * Z / intr.fy
    return X, Y, Z


def roi_filter(intr: CameraIntrinsics, img: DisparityImage, roi: Region3D) -> np.ndarray:
    X, Y, Z = backproject_image(intr, img)
    lo, hi = roi.min, roi.max
    with np.errstate(invalid="ignore"):
        keep = (
            (X >= lo.x) & (X <= hi.x) & (Y >= lo.y) & (Y <= hi.y) & (Z >= lo.z) & (Z <= hi.z)
        )
    return keep & img.valid_mask()


@numba.njit(cache=True, nogil=True)
def _index_image(data, usable, d_min, d_max, delta_d, n_entries, sy_tab):
    """Per-pixel table index (-1 unusable, -2 outside table) and per-row finest stride."""
    H, W = data.shape
    idx = np.empty((H, W), np.int32)
    row_min = np.full(H, _NO_STEP, np.int32)
    for v in range(H):
        for u in range(W):
            d = data[v, u]
            if not usable[v, u]:
                idx[v, u] = -1
            elif d < d_min or d > d_max:
                idx[v, u] = -2
            else:
                i = min(int(np.floor((d - d_min) / delta_d + 0.5 + 1e-9)), n_entries - 1)
                idx[v, u] = i
                if sy_tab[i] < row_min[v]:
                    row_min[v] = sy_tab[i]
    return idx, row_min


@numba.njit(cache=True, nogil=True)
def _traverse(idx, disp, sx_tab, sy_tab, row_min, jump_threshold, min_step):
    """Adaptive row-major scan.

    idx holds the table index per pixel, -1 for unusable pixels and -2 for
    valid disparities outside the table. Returns visited usable pixels, the
    number of out-of-table pixels visited and the visited rows.
    """
    H, W = idx.shape
    out_u = np.empty(H * W, np.int32)
    out_v = np.empty(H * W, np.int32)
    rows = np.empty(H, np.int32)
    n = 0
    n_rows = 0
    n_out = 0
    v = 0
    while v < H:
        rows[n_rows] = v
        n_rows += 1
        row_step = _NO_STEP
        u = 0
        while u < W:
            i = idx[v, u]
            if i < 0:
                if i == -2:
                    n_out += 1
                u += min_step
                continue
            out_u[n] = u
            out_v[n] = v
            n += 1
            if sy_tab[i] < row_step:
                row_step = sy_tab[i]
            d = disp[v, u]
            nxt = min(u + sx_tab[i], W)
            # stop on the first skipped pixel across a disparity jump
            for k in range(u + 1, nxt):
                if idx[v, k] >= 0 and abs(disp[v, k] - d) > jump_threshold:
                    nxt = k
                    break
            u = nxt
        if row_step == _NO_STEP:
            row_step = min_step
        nxt_v = min(v + row_step, H)
        # stop on the first skipped row that needs a finer vertical stride
        for r in range(v + 1, nxt_v):
            if row_min[r] < row_step:
                nxt_v = r
                break
        v = nxt_v
    return out_u[:n], out_v[:n], n_out, rows[:n_rows]


def scan(img: DisparityImage, intr: CameraIntrinsics, lut: SizeLut, cfg: DswConfig | None = None) -> ScanResult:
    """Run the full proposal pipeline and keep per-candidate bookkeeping."""
    cfg = cfg or DswConfig()
    if img.width == 0 or img.height == 0:
        raise EmptyImage("disparity image has no pixels")
    data = np.ascontiguousarray(img.data, dtype=np.float64)
    valid = img.valid_mask()
    lcfg = lut.config
    d_top = float(data.max(where=valid, initial=0.0))
    if d_top > lcfg.d_max + LUT_RANGE_SLACK * (lcfg.d_max - lcfg.d_min):
        raise LutRangeMismatch(f"image disparity {d_top:.3f} far above table maximum {lcfg.d_max}")
    usable = valid
    if cfg.roi is not None:
        usable = usable & roi_filter(intr, img, cfg.roi)

    sx_tab, sy_tab = step_tables(lut, cfg.theta_iou, cfg.min_step_px)
    idx, row_min = _index_image(
        data, usable, float(lcfg.d_min), float(lcfg.d_max), float(lcfg.delta_d), len(lut), sy_tab
    )

    cu, cv, n_out, rows = _traverse(
        idx, data, sx_tab, sy_tab, row_min, float(cfg.jump_threshold), int(cfg.min_step_px)
    )
    status, proposals = _place_boxes(data, intr, lut, cfg, idx, cu, cv)
    return ScanResult(proposals, cu, cv, status, int(n_out), img.data.shape, rows)


def _place_boxes(data, intr, lut, cfg, idx, cu, cv):
    H, W = data.shape
    i = idx[cv, cu]
    w = lut.widths[i].astype(np.int64)
    h = lut.heights[i].astype(np.int64)
    x0 = cu - w // 2
    y0 = cv - h // 2
    x1 = np.minimum(x0 + w, W)
    y1 = np.minimum(y0 + h, H)
    x0 = np.maximum(x0, 0)
    y0 = np.maximum(y0, 0)
    cw = np.maximum(x1 - x0, 0)
    ch = np.maximum(y1 - y0, 0)

    status = np.full(len(cu), EMITTED, dtype=np.int8)
    status[cw * ch < MIN_CLIPPED_AREA * w * h] = CLIPPED
    status[(status == EMITTED) & (cw < cfg.min_box_width_px)] = TOO_NARROW

    live = np.flatnonzero(status == EMITTED)
    spread = np.full(len(cu), np.nan)
    if cfg.verify_homogeneity and len(live):
        mean, std, n = homogeneity_stats(data, x0[live], y0[live], cw[live], ch[live])
        passed, s = _homogeneity_pass(mean, std, n, cfg)
        spread[live] = s
        status[live[~passed]] = INHOMOGENEOUS

    keep = np.flatnonzero(status == EMITTED)
    d = data[cv[keep], cu[keep]]
    depth = intr.fx * intr.baseline / d
    proposals = [
        Proposal(
            int(x0[k]), int(y0[k]), int(cw[k]), int(ch[k]), float(dk), float(zk),
            None if math.isnan(spread[k]) else float(spread[k]), int(cu[k]), int(cv[k]),
        )
        for k, dk, zk in zip(keep, d, depth)
    ]
    return status, proposals


def generate(img: DisparityImage, intr: CameraIntrinsics, lut: SizeLut, cfg: DswConfig | None = None) -> list[Proposal]:
    return scan(img, intr, lut, cfg).proposals


def proposals_to_csv(proposals: Iterable[Proposal], image_id: str = "", header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(["image_id", "x", "y", "w", "h", "disparity", "depth_m", "stddev"])
    for p in proposals:
        stddev = "" if p.homogeneity_stddev is None else f"{p.homogeneity_stddev:.6g}"
        disparity = "" if math.isnan(p.disparity) else f"{p.disparity:.6g}"
        depth = "" if math.isnan(p.depth_m) else f"{p.depth_m:.6g}"
        writer.writerow([image_id, p.x, p.y, p.w, p.h, disparity, depth, stddev])
    return buf.getvalue()


def proposals_from_csv(text: str) -> dict[str, list[Proposal]]:
    out: dict[str, list[Proposal]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        num = lambda key: float(row[key]) if row[key] else math.nan
        p = Proposal(
            int(row["x"]), int(row["y"]), int(row["w"]), int(row["h"]),
            num("disparity"), num("depth_m"), float(row["stddev"]) if row["stddev"] else None,
        )
        out.setdefault(row["image_id"], []).append(p)
    return out
