"""Overlap metrics and recall evaluation."""

from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateBox

logger = logging.getLogger(__name__)

OCCLUSION_LEVELS = ("fully_visible", "partly", "largely", "unknown")


def as_boxes(boxes) -> np.ndarray:
    """Coerce any box-like sequence to an (N, 4) array of x/y/w/h."""
    if isinstance(boxes, np.ndarray):
        return boxes.reshape(-1, 4).astype(np.float64)
    rows = [(b.x, b.y, b.w, b.h) if hasattr(b, "w") else tuple(b) for b in boxes]
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)


def _xywh(box) -> tuple[float, float, float, float]:
    if hasattr(box, "w"):
        return box.x, box.y, box.w, box.h
    x, y, w, h = box
    return x, y, w, h


def iou(a, b) -> float:
    """Exact intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = _xywh(a)
    bx, by, bw, bh = _xywh(b)
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise DegenerateBox(f"boxes need positive area, got {a!r} and {b!r}")
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    # (x + w) - x can exceed w by an ulp; the overlap never exceeds either box
    inter = min(iw * ih, aw * ah, bw * bh)
    return inter / (aw * ah + bw * bh - inter)


def iou_matrix(proposals, gts) -> np.ndarray:
    """Pairwise IoU, shape (len(proposals), len(gts))."""
    p = as_boxes(proposals)
    g = as_boxes(gts)
    if (p[:, 2:] <= 0).any() or (g[:, 2:] <= 0).any():
        raise DegenerateBox("boxes need positive area")
    iw = np.minimum(p[:, None, 0] + p[:, None, 2], g[None, :, 0] + g[None, :, 2]) - np.maximum(
        p[:, None, 0], g[None, :, 0]
    )
    ih = np.minimum(p[:, None, 1] + p[:, None, 3], g[None, :, 1] + g[None, :, 3]) - np.maximum(
        p[:, None, 1], g[None, :, 1]
    )
    area_p = p[:, 2] * p[:, 3]
    area_g = g[:, 2] * g[:, 3]
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    inter = np.minimum(inter, np.minimum(area_p[:, None], area_g[None, :]))
    return inter / (area_p[:, None] + area_g[None, :] - inter)


def best_ious(proposals, gts, chunk: int = 65536) -> np.ndarray:
    """Highest IoU any proposal reaches with each ground-truth box."""
    p = as_boxes(proposals)
    g = as_boxes(gts)
    best = np.zeros(len(g))
    if len(g) == 0:
        return best
    for start in range(0, len(p), chunk):
        best = np.maximum(best, iou_matrix(p[start : start + chunk], g).max(axis=0))
    return best


def recall_at(proposals_per_image: Sequence, gts_per_image: Sequence, theta: float) -> float:
    """Fraction of ground-truth boxes covered by some proposal with IoU >= theta.

    One proposal may cover several ground-truth boxes. Returns NaN when there
    is no ground truth at all.
    """
    if not 0 < theta <= 1:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    best = np.concatenate(
        [best_ious(p, g) for p, g in zip(proposals_per_image, gts_per_image)] or [np.empty(0)]
    )
    if len(best) == 0:
        return math.nan
    return float(np.count_nonzero(best >= theta) / len(best))


@dataclass
class ImageRecord:
    image_id: str
    n_proposals: int
    runtime_ms: float
    best_iou: np.ndarray
    occlusion: list[str]


@dataclass
class EvalResult:
    recall: dict[float, float]
    ppi: float
    per_occlusion: dict[str, dict[float, float]]
    occlusion_counts: dict[str, int]
    images: list[ImageRecord] = field(repr=False)
    failures: list[tuple[str, str]] = field(default_factory=list)

    @property
    def mean_ms(self) -> float:
        return float(np.mean([r.runtime_ms for r in self.images])) if self.images else math.nan

    @property
    def all_best_iou(self) -> np.ndarray:
        return np.concatenate([r.best_iou for r in self.images] or [np.empty(0)])

    def recall_at(self, theta: float) -> float:
        best = self.all_best_iou
        return float(np.mean(best >= theta)) if len(best) else math.nan

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        fmt = lambda v: f"{v:.6g}"
        with open(os.path.join(out_dir, "recall.csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["theta", "recall"])
            for t, r in self.recall.items():
                w.writerow([fmt(t), fmt(r)])
        with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["ppi", "mean_ms", "recall@0.5", "recall@0.3"])
            w.writerow([fmt(self.ppi), fmt(self.mean_ms), fmt(self.recall_at(0.5)), fmt(self.recall_at(0.3))])
        with open(os.path.join(out_dir, "occlusion.csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["occlusion", "count", "theta", "recall"])
            for occ, curve in self.per_occlusion.items():
                for t, r in curve.items():
                    w.writerow([occ, self.occlusion_counts[occ], fmt(t), fmt(r)])
        with open(os.path.join(out_dir, "best_iou.csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["image_id", "gt_index", "occlusion", "best_iou"])
            for rec in self.images:
                for i, (b, occ) in enumerate(zip(rec.best_iou, rec.occlusion)):
                    w.writerow([rec.image_id, i, occ, fmt(b)])


def _run_one(scene, generator):
    start = time.perf_counter()
    proposals = generator(scene)
    elapsed = (time.perf_counter() - start) * 1e3
    gts = scene.ground_truth
    best = best_ious(proposals, gts) if gts else np.zeros(0)
    return ImageRecord(scene.image_id, len(proposals), elapsed, best, [g.occlusion for g in gts])


def evaluate(
    scenes: Sequence,
    generator: Callable,
    theta_grid: Sequence[float] = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    jobs: int = 1,
) -> EvalResult:
    """Run ``generator`` on every scene and aggregate recall and proposal counts.

    ``generator`` maps a scene to its proposals. Only the generator call is
    timed; scene loading and table construction are not. A scene whose
    generator raises is logged and skipped.
    """
    if not scenes:
        raise ValueError("no scenes to evaluate")

    def safe(scene):
        try:
            return _run_one(scene, generator)
        except Exception as exc:  # noqa: BLE001 - keep going, report at the end
            logger.warning("scene %s failed: %s", scene.image_id, exc)
            return (scene.image_id, f"{type(exc).__name__}: {exc}")

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(safe, scenes))
    else:
        outcomes = [safe(s) for s in scenes]

    images = [o for o in outcomes if isinstance(o, ImageRecord)]
    failures = [o for o in outcomes if not isinstance(o, ImageRecord)]

    best = np.concatenate([r.best_iou for r in images] or [np.empty(0)])
    occ = np.array([o for r in images for o in r.occlusion], dtype=object)
    recall = {float(t): (float(np.mean(best >= t)) if len(best) else math.nan) for t in theta_grid}
    per_occlusion = {}
    counts = {}
    for level in OCCLUSION_LEVELS:
        sel = best[occ == level] if len(occ) else np.empty(0)
        counts[level] = int(len(sel))
        per_occlusion[level] = {
            float(t): (float(np.mean(sel >= t)) if len(sel) else math.nan) for t in theta_grid
        }
    ppi = float(np.mean([r.n_proposals for r in images])) if images else math.nan
    return EvalResult(recall, ppi, per_occlusion, counts, images, failures)
