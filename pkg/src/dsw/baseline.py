"""Exhaustive multi-scale sliding window, the reference the disparity scan is compared to."""

from __future__ import annotations

import math

import numpy as np

from .camera import round_half_up
from .proposer import Proposal
from .theory import TheoryParams, windows_per_axis


def _origins(extent: int, size: float, stride: float) -> np.ndarray:
    """Window origins along one axis.

    The window slides by the exact, possibly fractional stride while it fits;
    only the emitted origin is rounded, then kept inside the image.
    """
    n = windows_per_axis(extent, size, stride / size)
    pos = np.floor(np.arange(n) * stride + 0.5).astype(np.int64)
    return np.minimum(pos, extent - round_half_up(size))


def generate_dense_array(p: TheoryParams) -> np.ndarray:
    """All windows as an (N, 4) int array of x, y, w, h."""
    delta = p.delta
    blocks = [np.empty((0, 4), dtype=np.int64)]
    for w, r in p.scales():
        h = r * w
        # strides never drop below one pixel
        xs = _origins(p.image_width, w, max(1.0, delta * w))
        ys = _origins(p.image_height, h, max(1.0, delta * h))
        gx, gy = np.meshgrid(xs, ys)
        block = np.empty((gx.size, 4), dtype=np.int64)
        block[:, 0] = gx.ravel()
        block[:, 1] = gy.ravel()
        block[:, 2] = w
        block[:, 3] = round_half_up(h)
        blocks.append(block)
    return np.concatenate(blocks)


def generate_dense(p: TheoryParams) -> list[Proposal]:
    """Same windows as :func:`generate_dense_array`, as proposals without disparity."""
    return [
        Proposal(int(x), int(y), int(w), int(h), math.nan, math.nan)
        for x, y, w, h in generate_dense_array(p)
    ]
