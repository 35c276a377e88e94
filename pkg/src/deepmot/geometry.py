"""Boxes, IoU and the track-to-object distance matrix.

Boxes are (left, top, width, height) in pixels, as in MOTChallenge files.
The distance between a track box and an object box is the mean of the
centre distance normalised by the frame diagonal and the Jaccard distance
``1 - IoU``; both terms and therefore the mean lie in [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad

__all__ = [
    "Box", "FrameDims", "iou", "pair_distance", "boxes_array", "iou_matrix",
    "distance_matrix", "distance_matrix_diff", "pair_distance_batch",
]


@dataclass(frozen=True)
class Box:
    left: float
    top: float
    width: float
    height: float

    def __post_init__(self):
        if self.width < 0 or self.height < 0:
            raise ValueError(f"negative box extent: {self}")

    @property
    def center(self) -> tuple:
        return self.left + self.width / 2.0, self.top + self.height / 2.0

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.left, self.top, self.width, self.height], dtype=np.float64)


@dataclass(frozen=True)
class FrameDims:
    width: float
    height: float

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"frame dimensions must be positive: {self}")

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when the union is empty."""
    iw = min(a.left + a.width, b.left + b.width) - max(a.left, b.left)
    ih = min(a.top + a.height, b.top + b.height) - max(a.top, b.top)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    return min(inter / union, 1.0) if union > 0 else 0.0


def pair_distance(b: Box, o: Box, dims: FrameDims) -> float:
    (bx, by), (ox, oy) = b.center, o.center
    f = math.hypot(bx - ox, by - oy) / dims.diagonal
    return (f + 1.0 - iou(b, o)) / 2.0


def boxes_array(boxes) -> np.ndarray:
    """Stack boxes (``Box`` objects or 4-sequences) into an (n, 4) float array."""
    if isinstance(boxes, np.ndarray):
        arr = boxes.astype(np.float64, copy=False)
    else:
        arr = np.array([b.as_array() if isinstance(b, Box) else b for b in boxes],
                       dtype=np.float64)
    return arr.reshape(-1, 4)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) box arrays."""
    a, b = boxes_array(a), boxes_array(b)
    iw = (np.minimum(a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2])
          - np.maximum(a[:, None, 0], b[None, :, 0]))
    ih = (np.minimum(a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3])
          - np.maximum(a[:, None, 1], b[None, :, 1]))
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return np.minimum(out, 1.0)  # rounding can push identical boxes just above 1


def distance_matrix(tracks, objects, dims: FrameDims) -> np.ndarray:
    """Numpy distance matrix (no gradient), entry (n, m) = pair_distance."""
    a, b = boxes_array(tracks), boxes_array(objects)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("distance matrix needs at least one track and one object")
    ca = a[:, :2] + a[:, 2:] / 2.0
    cb = b[:, :2] + b[:, 2:] / 2.0
    f = np.sqrt(((ca[:, None, :] - cb[None, :, :]) ** 2).sum(axis=2)) / dims.diagonal
    return (f + 1.0 - iou_matrix(a, b)) / 2.0


def distance_matrix_diff(tracks, objects, dims: FrameDims) -> ad.Tensor:
    """Differentiable distance matrix from (N, 4) and (M, 4) box tensors."""
    a, b = ad.as_tensor(tracks), ad.as_tensor(objects)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != 4 or b.shape[1] != 4:
        raise ad.ShapeError("boxes must be (n, 4)")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("distance matrix needs at least one track and one object")
    al, at, aw, ah = (ad.reshape(a[:, k], (-1, 1)) for k in range(4))
    bl, bt, bw, bh = (ad.reshape(b[:, k], (1, -1)) for k in range(4))
    dx = (al + aw * 0.5) - (bl + bw * 0.5)
    dy = (at + ah * 0.5) - (bt + bh * 0.5)
    f = ad.sqrt(dx * dx + dy * dy) * (1.0 / dims.diagonal)
    iw = ad.maximum(ad.minimum2(al + aw, bl + bw) - ad.maximum2(al, bl), 0.0)
    ih = ad.maximum(ad.minimum2(at + ah, bt + bh) - ad.maximum2(at, bt), 0.0)
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    iou_ = inter / ad.maximum(union, 1e-12)
    return (f + 1.0 - iou_) * 0.5


def pair_distance_batch(tracks: Sequence[Box], objects: Sequence[Box], dims: FrameDims) -> np.ndarray:
    """Per-pair loop over :func:`pair_distance` (reference for the vectorised forms)."""
    return np.array([[pair_distance(t, o, dims) for o in objects] for t in tracks])
