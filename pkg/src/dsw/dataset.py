"""KITTI-style ingestion and synthetic scene generation."""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image

from .camera import CameraIntrinsics, ObjectModel, project_model
from .errors import (
    DimensionMismatch,
    MalformedCalib,
    MalformedLabel,
    NonPositiveBaseline,
    PlantOutOfBounds,
    UnsupportedFormat,
)
from .metrics import OCCLUSION_LEVELS
from .proposer import DisparityImage

logger = logging.getLogger(__name__)

KITTI_DISPARITY_SCALE = 256.0


@dataclass(frozen=True)
class GroundTruthBox:
    class_name: str
    x: float
    y: float
    w: float
    h: float
    occlusion: str = "fully_visible"
    truncation: float = 0.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise MalformedLabel(f"box needs positive size, got {self.w} x {self.h}")
        if self.occlusion not in OCCLUSION_LEVELS:
            raise MalformedLabel(f"unknown occlusion level {self.occlusion!r}")


@dataclass
class Scene:
    disparity: DisparityImage
    ground_truth: list[GroundTruthBox]
    intrinsics: CameraIntrinsics
    image_id: str = "000000"


# --- calibration -----------------------------------------------------------


def _parse_matrix(lines: dict[str, str], key: str) -> np.ndarray:
    if key not in lines:
        raise MalformedCalib(f"calibration lacks {key}")
    try:
        values = [float(v) for v in lines[key].split()]
    except ValueError as exc:
        raise MalformedCalib(f"{key}: {exc}") from None
    if len(values) != 12:
        raise MalformedCalib(f"{key} needs 12 values, got {len(values)}")
    return np.array(values).reshape(3, 4)


def parse_calibration(content: str) -> CameraIntrinsics:
    """Left colour camera intrinsics and stereo baseline from a KITTI calib file."""
    lines = {}
    for raw in content.splitlines():
        if ":" in raw:
            key, _, rest = raw.partition(":")
            lines[key.strip()] = rest
    P2 = _parse_matrix(lines, "P2")
    P3 = _parse_matrix(lines, "P3")
    fx = P2[0, 0]
    if fx <= 0:
        raise MalformedCalib(f"P2 focal length must be positive, got {fx}")
    baseline = (P2[0, 3] - P3[0, 3]) / fx
    if baseline <= 0:
        raise NonPositiveBaseline(f"baseline from P2/P3 is {baseline}")
    return CameraIntrinsics(
        fx=fx, fy=P2[1, 1], cx=P2[0, 2], cy=P2[1, 2], baseline=baseline, skew=P2[0, 1]
    )


def format_calibration(intr: CameraIntrinsics) -> str:
    """Inverse of :func:`parse_calibration`; the left camera sits at the origin."""
    P2 = np.array(
        [[intr.fx, intr.skew, intr.cx, 0.0], [0.0, intr.fy, intr.cy, 0.0], [0.0, 0.0, 1.0, 0.0]]
    )
    P3 = P2.copy()
    P3[0, 3] = -intr.fx * intr.baseline
    fmt = lambda m: " ".join(f"{v:.12e}" for v in m.ravel())
    lines = [f"P0: {fmt(P2)}", f"P1: {fmt(P3)}", f"P2: {fmt(P2)}", f"P3: {fmt(P3)}"]
    lines.append("R0_rect: " + " ".join(f"{v:.12e}" for v in np.eye(3).ravel()))
    return "\n".join(lines) + "\n"


# --- labels ----------------------------------------------------------------


class LabelList(list):
    """Parsed boxes; ``malformed`` counts lines that were skipped."""

    malformed: int = 0


def parse_label_line(line: str) -> GroundTruthBox:
    parts = line.split()
    if len(parts) < 15:
        raise MalformedLabel(f"expected at least 15 fields, got {len(parts)}")
    try:
        truncation = float(parts[1])
        occluded = int(float(parts[2]))
        x1, y1, x2, y2 = (float(v) for v in parts[4:8])
    except ValueError as exc:
        raise MalformedLabel(str(exc)) from None
    if not 0 <= occluded < len(OCCLUSION_LEVELS):
        raise MalformedLabel(f"occlusion code {occluded} out of range")
    return GroundTruthBox(parts[0], x1, y1, x2 - x1, y2 - y1, OCCLUSION_LEVELS[occluded], truncation)


def parse_labels(content: str, class_filter: Optional[str] = None) -> LabelList:
    """Boxes from a KITTI label file, optionally only one (case-sensitive) class.

    Malformed lines are skipped and counted, never fatal.
    """
    out = LabelList()
    for lineno, line in enumerate(content.splitlines(), 1):
        if not line.strip():
            continue
        if class_filter is not None and line.split()[0] != class_filter:
            continue
        try:
            out.append(parse_label_line(line))
        except MalformedLabel as exc:
            out.malformed += 1
            logger.warning("label line %d skipped: %s", lineno, exc)
    return out


def format_labels(boxes: Sequence[GroundTruthBox]) -> str:
    lines = []
    for b in boxes:
        occ = OCCLUSION_LEVELS.index(b.occlusion)
        lines.append(
            f"{b.class_name} {b.truncation:.2f} {occ} -10 "
            f"{b.x:.2f} {b.y:.2f} {b.x + b.w:.2f} {b.y + b.h:.2f} "
            "-1 -1 -1 -1000 -1000 -1000 -10"
        )
    return "".join(line + "\n" for line in lines)


# --- disparity maps --------------------------------------------------------


def read_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header not in (b"Pf", b"PF"):
            raise UnsupportedFormat(f"{path}: not a PFM file")
        channels = 1 if header == b"Pf" else 3
        dims = f.readline().split()
        width, height = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.fromfile(f, dtype=dtype, count=width * height * channels)
    shape = (height, width) if channels == 1 else (height, width, 3)
    # rows are stored bottom to top
    return np.flipud(data.reshape(shape)).astype(np.float32)


def write_pfm(path: str, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f4")
    if data.ndim != 2:
        raise UnsupportedFormat("only single-channel PFM is written")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{data.shape[1]} {data.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        np.ascontiguousarray(np.flipud(data)).tofile(f)


def load_disparity(path: str, expected_shape: Optional[tuple[int, int]] = None) -> DisparityImage:
    """Read a 16-bit KITTI PNG (raw / 256, 0 = invalid) or a float PFM disparity map."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".png":
        with Image.open(path) as im:
            if im.mode not in ("I;16", "I;16B", "I"):
                raise UnsupportedFormat(f"{path}: expected 16-bit grayscale PNG, got mode {im.mode}")
            raw = np.array(im).astype(np.float32)
        data = raw / KITTI_DISPARITY_SCALE
    elif ext == ".pfm":
        data = read_pfm(path)
        if data.ndim != 2:
            raise UnsupportedFormat(f"{path}: expected single-channel PFM")
        data = np.where(np.isfinite(data) & (data > 0), data, 0.0).astype(np.float32)
    else:
        raise UnsupportedFormat(f"{path}: unknown disparity format {ext!r}")
    if expected_shape is not None and data.shape != tuple(expected_shape):
        raise DimensionMismatch(f"{path}: shape {data.shape} != expected {tuple(expected_shape)}")
    return DisparityImage(data)


def save_disparity_png(path: str, img: DisparityImage) -> None:
    raw = np.where(img.valid_mask(), np.round(img.data * KITTI_DISPARITY_SCALE), 0)
    Image.fromarray(np.clip(raw, 0, 65535).astype(np.uint16)).save(path)


def save_disparity(path: str, img: DisparityImage) -> None:
    if path.lower().endswith(".pfm"):
        write_pfm(path, np.where(img.valid_mask(), img.data, 0.0))
    else:
        save_disparity_png(path, img)


# --- directory layout ------------------------------------------------------

CALIB_DIR, LABEL_DIR, DISP_DIR = "calib", "label_2", "disp"
_ID_RE = re.compile(r"^\d{6}$")


def scene_ids(root: str) -> list[str]:
    calib = os.path.join(root, CALIB_DIR)
    if not os.path.isdir(calib):
        return []
    ids = (os.path.splitext(f)[0] for f in os.listdir(calib) if f.endswith(".txt"))
    return sorted(i for i in ids if _ID_RE.match(i))


def _read(path: str) -> str:
    with open(path) as f:
        return f.read()


def load_scene(root: str, image_id: str, class_filter: Optional[str] = "Pedestrian") -> Scene:
    intr = parse_calibration(_read(os.path.join(root, CALIB_DIR, f"{image_id}.txt")))
    for ext in (".png", ".pfm"):
        disp_path = os.path.join(root, DISP_DIR, image_id + ext)
        if os.path.exists(disp_path):
            break
    else:
        raise FileNotFoundError(f"no disparity map for {image_id} under {root}/{DISP_DIR}")
    disparity = load_disparity(disp_path)
    label_path = os.path.join(root, LABEL_DIR, f"{image_id}.txt")
    labels = parse_labels(_read(label_path), class_filter) if os.path.exists(label_path) else []
    return Scene(disparity, list(labels), intr, image_id)


def iter_scenes(root: str, class_filter: Optional[str] = "Pedestrian") -> Iterator[Scene]:
    for image_id in scene_ids(root):
        yield load_scene(root, image_id, class_filter)


def write_scene(root: str, scene: Scene, disparity_format: str = "png") -> None:
    for sub in (CALIB_DIR, LABEL_DIR, DISP_DIR):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    with open(os.path.join(root, CALIB_DIR, f"{scene.image_id}.txt"), "w") as f:
        f.write(format_calibration(scene.intrinsics))
    with open(os.path.join(root, LABEL_DIR, f"{scene.image_id}.txt"), "w") as f:
        f.write(format_labels(scene.ground_truth))
    save_disparity(os.path.join(root, DISP_DIR, f"{scene.image_id}.{disparity_format}"), scene.disparity)


# --- synthetic scenes ------------------------------------------------------


@dataclass(frozen=True)
class Background:
    """Disparity behind the plants.

    ``ramp`` is a ground plane: invalid above ``horizon`` and rising by
    ``slope`` disparity units per row below it.
    """

    kind: str = "invalid"
    disparity: float = 0.0
    horizon: float = 0.0
    slope: float = 0.0

    def render(self, width: int, height: int) -> np.ndarray:
        if self.kind == "invalid":
            return np.zeros((height, width), dtype=np.float32)
        if self.kind == "constant":
            return np.full((height, width), self.disparity, dtype=np.float32)
        if self.kind == "ramp":
            rows = np.clip((np.arange(height) - self.horizon) * self.slope, 0, None)
            return np.repeat(rows[:, None], width, axis=1).astype(np.float32)
        raise ValueError(f"unknown background {self.kind!r}")

    @classmethod
    def ground(cls, intr: CameraIntrinsics, camera_height: float = 1.65) -> "Background":
        """Flat road seen from ``camera_height`` meters."""
        return cls("ramp", horizon=intr.cy, slope=intr.baseline / camera_height * intr.fy / intr.fx)


@dataclass(frozen=True)
class Plant:
    x: int  # box centre, pixels
    y: int
    disparity: float


def plant_box(plant: Plant, model: ObjectModel, intr: CameraIntrinsics) -> tuple[int, int, int, int]:
    size = project_model(intr, model, plant.disparity)
    return plant.x - size.width_px // 2, plant.y - size.height_px // 2, size.width_px, size.height_px


def check_plant(plant: Plant, model: ObjectModel, intr: CameraIntrinsics, dims: tuple[int, int]) -> None:
    width, height = dims
    x, y, w, h = plant_box(plant, model, intr)
    if x < 0 or y < 0 or x + w > width or y + h > height:
        raise PlantOutOfBounds(f"plant {plant} gives box {(x, y, w, h)} outside {width}x{height}")


def synth_scene(
    plants: Sequence[Plant],
    model: ObjectModel,
    intr: CameraIntrinsics,
    dims: tuple[int, int] = (1242, 375),
    background: Background = Background(),
    noise_stddev: float = 0.0,
    seed: int = 0,
    image_id: str = "000000",
    class_name: str = "Pedestrian",
) -> Scene:
    """Scene of model-sized constant-disparity rectangles; later plants overdraw earlier ones.

    ``dims`` is (width, height). Noise is added to plant pixels only.
    """
    width, height = dims
    data = background.render(width, height)
    rng = np.random.default_rng(seed)
    gts = []
    for plant in plants:
        check_plant(plant, model, intr, dims)
        x, y, w, h = plant_box(plant, model, intr)
        patch = np.full((h, w), plant.disparity, dtype=np.float32)
        if noise_stddev > 0:
            patch += rng.normal(0.0, noise_stddev, size=patch.shape).astype(np.float32)
        data[y : y + h, x : x + w] = patch
        gts.append(GroundTruthBox(class_name, x, y, w, h))
    return Scene(DisparityImage(data), gts, intr, image_id)


def random_plants(
    rng: np.random.Generator,
    model: ObjectModel,
    intr: CameraIntrinsics,
    dims: tuple[int, int],
    count: int,
    d_range: tuple[int, int] = (10, 90),
    max_tries: int = 200,
) -> list[Plant]:
    """Up to ``count`` non-overlapping in-bounds plants at integer disparities."""
    width, height = dims
    plants: list[Plant] = []
    boxes: list[tuple[int, int, int, int]] = []
    for _ in range(max_tries):
        if len(plants) == count:
            break
        d = int(rng.integers(d_range[0], d_range[1] + 1))
        size = project_model(intr, model, d)
        if size.width_px > width or size.height_px > height:
            continue
        cx = int(rng.integers(size.width_px // 2, width - (size.width_px - size.width_px // 2) + 1))
        cy = int(rng.integers(size.height_px // 2, height - (size.height_px - size.height_px // 2) + 1))
        plant = Plant(cx, cy, float(d))
        box = plant_box(plant, model, intr)
        # one pixel of clearance keeps rectangles distinct
        if any(_overlap(box, b, margin=1) for b in boxes):
            continue
        plants.append(plant)
        boxes.append(box)
    return plants


def _overlap(a, b, margin: int = 0) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return not (
        ax + aw + margin <= bx or bx + bw + margin <= ax or ay + ah + margin <= by or by + bh + margin <= ay
    )


def ground_plants(
    rng: np.random.Generator,
    model: ObjectModel,
    intr: CameraIntrinsics,
    dims: tuple[int, int],
    background: Background,
    count: int,
    d_range: tuple[int, int] = (10, 60),
    max_tries: int = 200,
) -> list[Plant]:
    """Plants standing on a ramp background: box bottom on the row with the plant's disparity."""
    width, height = dims
    plants: list[Plant] = []
    boxes: list[tuple[int, int, int, int]] = []
    for _ in range(max_tries):
        if len(plants) == count:
            break
        d = int(rng.integers(d_range[0], d_range[1] + 1))
        size = project_model(intr, model, d)
        foot = int(round(background.horizon + d / background.slope))
        top = foot - size.height_px + 1
        if top < 0 or foot >= height:
            continue
        cx = int(rng.integers(size.width_px // 2, width - (size.width_px - size.width_px // 2) + 1))
        plant = Plant(cx, top + size.height_px // 2, float(d))
        box = plant_box(plant, model, intr)
        if any(_overlap(box, b, margin=1) for b in boxes):
            continue
        plants.append(plant)
        boxes.append(box)
    return plants
