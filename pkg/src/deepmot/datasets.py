"""Data on disk and synthetic data.

* MOTChallenge text files (ground truth and detections).
* Distance/label matrix pairs for DHN training, with threshold augmentation,
  and their plain-text format.
* Synthetic multi-object scenes with noisy detections.

All randomness comes from ``numpy.random.default_rng(seed)`` (PCG64).
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import FrameDims, distance_matrix
from .hungarian import check_assignment, solve_thresholded
from .tracks import TrackFile

PAIR_EPS = 1e-9


class FormatError(ValueError):
    """Malformed input file; the message names the offending line or record."""


# ---------------------------------------------------------------------------
# MOTChallenge files
# ---------------------------------------------------------------------------

def _int_field(raw: str, name: str, lineno: int) -> int:
    try:
        val = float(raw)
    except ValueError:
        raise FormatError(f"line {lineno}: {name} {raw!r} is not a number") from None
    if not val.is_integer():
        raise FormatError(f"line {lineno}: {name} {raw!r} is not an integer")
    return int(val)


def read_seqinfo(path) -> tuple:
    """(FrameDims or None, sequence length or None) from a ``seqinfo.ini``."""
    cp = configparser.ConfigParser()
    cp.read(path)
    if "Sequence" not in cp:
        return None, None
    sec = cp["Sequence"]
    dims = None
    if "imWidth" in sec and "imHeight" in sec:
        dims = FrameDims(float(sec["imWidth"]), float(sec["imHeight"]))
    length = int(sec["seqLength"]) if "seqLength" in sec else None
    return dims, length


def load_motchallenge(path, kind: str = "gt", dims: FrameDims | None = None,
                      n_frames: int | None = None) -> TrackFile:
    """Parse a MOTChallenge ``gt.txt`` / ``det.txt``.

    Accepted layouts: 7 columns (frame, id, left, top, width, height, conf),
    9 columns (+ class, visibility) and 10 columns (+ x, y, z).  Ground
    truth keeps rows with ``conf == 1`` and, in the 9-column layout,
    ``class == 1``.  Frame dimensions come from ``dims``, else from a
    ``seqinfo.ini`` in the sequence directory, else from the box extent.
    """
    if kind not in ("gt", "det"):
        raise ValueError(f"kind must be 'gt' or 'det', got {kind!r}")
    path = Path(path)
    info_dims, info_len = None, None
    for cand in (path.parent / "seqinfo.ini", path.parent.parent / "seqinfo.ini"):
        if cand.is_file():
            info_dims, info_len = read_seqinfo(cand)
            break
    tf = TrackFile(dims=dims or info_dims, n_frames=n_frames or info_len,
                   allow_duplicate_ids=(kind == "det"))
    right = bottom = 0.0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) not in (7, 9, 10):
                raise FormatError(f"line {lineno}: expected 7, 9 or 10 fields, found {len(parts)}")
            frame = _int_field(parts[0], "frame", lineno)
            ident = _int_field(parts[1], "id", lineno)
            try:
                vals = [float(p) for p in parts[2:]]
            except ValueError:
                raise FormatError(f"line {lineno}: non-numeric field in {line!r}") from None
            if not all(math.isfinite(v) for v in vals[:5]):
                raise FormatError(f"line {lineno}: non-finite box or confidence")
            if frame < 1:
                raise FormatError(f"line {lineno}: frame {frame} is not 1-based")
            left, top, w, h, conf = vals[:5]
            if w < 0 or h < 0:
                raise FormatError(f"line {lineno}: negative box size")
            if kind == "gt":
                if conf != 1:
                    continue
                if len(parts) == 9 and vals[5] != 1:
                    continue
            try:
                tf.add(frame, ident, (left, top, w, h))
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
            right, bottom = max(right, left + w), max(bottom, top + h)
    if tf.dims is None and right > 0 and bottom > 0:
        tf.dims = FrameDims(right, bottom)
    return tf


def save_motchallenge(tf: TrackFile, path, layout: int = 9):
    """Write ``tf`` with conf = 1 and the class/visibility (9) or x/y/z (10) fillers."""
    if layout not in (7, 9, 10):
        raise ValueError("layout must be 7, 9 or 10")
    tail = {7: "", 9: ",1,1", 10: ",-1,-1,-1"}[layout]
    with open(path, "w") as fh:
        for t, i, l, tp, w, h in tf.rows():
            fh.write(f"{t},{i},{l!r},{tp!r},{w!r},{h!r},1{tail}\n")


def write_seqinfo(path, dims: FrameDims, length: int, name: str = "synthetic"):
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["Sequence"] = {"name": name, "imWidth": f"{dims.width:g}", "imHeight": f"{dims.height:g}",
                      "seqLength": str(length)}
    with open(path, "w") as fh:
        cp.write(fh)


# ---------------------------------------------------------------------------
# matrix pairs
# ---------------------------------------------------------------------------

def augment(D: np.ndarray, u: float) -> np.ndarray:
    """Entries above the threshold ``u`` become the prohibitive value 1.0."""
    return np.where(D > u, 1.0, D)


def label_pair(D: np.ndarray) -> np.ndarray:
    """Optimal assignment that never uses a prohibited (1.0) entry."""
    return solve_thresholded(D, 1.0 - PAIR_EPS)


def tracking_like_matrix(rng: np.random.Generator, n_tracks: int, n_objects: int,
                         dims: FrameDims = FrameDims(1920, 1080), hit_rate: float = 0.8) -> np.ndarray:
    """Distances between perturbed copies of random objects and those objects.

    Each track copies a random object (rescaled by 0.8-1.2, shifted by up to
    a quarter of its size) with probability ``hit_rate``; other tracks are
    independent random boxes.
    """
    W, H = dims.width, dims.height

    def random_boxes(k):
        w = rng.uniform(30, 100, k)
        h = rng.uniform(60, 200, k)
        return np.column_stack([rng.uniform(0, W - w), rng.uniform(0, H - h), w, h])

    objs = random_boxes(n_objects)
    tracks = random_boxes(n_tracks)
    for n in range(n_tracks):
        if rng.random() < hit_rate:
            b = objs[rng.integers(n_objects)].copy()
            b[2:] *= rng.uniform(0.8, 1.2, 2)
            b[:2] += rng.uniform(-0.25, 0.25, 2) * b[2:]
            tracks[n] = b
    return distance_matrix(tracks, objs, dims)


def gen_matrix_pairs(n: int, sizes: tuple = (2, 12), mode: str = "mix", seed: int = 0,
                     threshold: float | None = None) -> list:
    """``n`` augmented (D, A*) pairs with N and M drawn uniformly from ``sizes``.

    ``mode`` is "uniform", "tracking" or "mix" (alternating).  The
    augmentation threshold is drawn per pair from U(0, 1) unless fixed by
    ``threshold``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = sizes
    if not 1 <= lo <= hi:
        raise ValueError(f"degenerate size range {sizes}")
    if mode not in ("uniform", "tracking", "mix"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        N, M = (int(v) for v in rng.integers(lo, hi + 1, size=2))
        tracking = mode == "tracking" or (mode == "mix" and k % 2 == 1)
        D = tracking_like_matrix(rng, N, M) if tracking else rng.random((N, M))
        u = rng.random() if threshold is None else threshold
        D = augment(D, u)
        out.append((D, label_pair(D)))
    return out


def save_pairs(pairs: Sequence, path):
    with open(path, "w") as fh:
        for D, A in pairs:
            D, A = np.asarray(D, dtype=np.float64), np.asarray(A)
            if D.shape != A.shape or D.ndim != 2:
                raise ValueError(f"pair shapes differ: {D.shape} vs {A.shape}")
            N, M = D.shape
            fh.write(f"{N} {M}\n")
            for row in D:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
            for row in A:
                fh.write(" ".join(str(int(v)) for v in row) + "\n")
            fh.write("\n")


def load_pairs(path) -> list:
    """Inverse of :func:`save_pairs`; errors name the 0-based record index."""
    lines = Path(path).read_text().split("\n")
    pairs, pos, rec = [], 0, 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        head = lines[pos].split()
        try:
            N, M = int(head[0]), int(head[1])
            if len(head) != 2 or N < 1 or M < 1:
                raise ValueError
        except (ValueError, IndexError):
            raise FormatError(f"record {rec}: bad header {lines[pos]!r}") from None
        body = lines[pos + 1: pos + 1 + 2 * N]
        if len(body) < 2 * N or any(not b.strip() for b in body):
            raise FormatError(f"record {rec}: truncated, expected {N} distance and {N} label rows")
        try:
            D = np.array([[float(v) for v in b.split()] for b in body[:N]], dtype=np.float64)
            A = np.array([[int(v) for v in b.split()] for b in body[N:]], dtype=np.int8)
        except ValueError:
            raise FormatError(f"record {rec}: non-numeric entry") from None
        if D.shape != (N, M) or A.shape != (N, M):
            raise FormatError(f"record {rec}: dimension mismatch with header {N} {M}")
        if not check_assignment(A):
            raise FormatError(f"record {rec}: labels are not a valid assignment")
        pairs.append((D, A))
        pos += 1 + 2 * N
        rec += 1
    return pairs


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneConfig:
    """Synthetic scene parameters.

    Boxes move with constant velocity plus Gaussian jitter
    (``motion_noise`` pixels per frame) and bounce off the frame border.
    Detections rescale each side of a ground-truth box by a factor from
    ``scale_range`` and shift it by up to ``max_offset`` times its size,
    are dropped with probability ``drop_prob`` and joined by a
    Poisson(``clutter_rate``) number of random false boxes per frame.
    """

    width: float = 640.0
    height: float = 480.0
    n_objects: tuple = (3, 6)
    speed: tuple = (0.5, 4.0)
    box_width: tuple = (20.0, 60.0)
    aspect: tuple = (1.5, 3.0)
    motion_noise: float = 0.3
    scale_range: tuple = (0.8, 1.2)
    max_offset: float = 0.25
    drop_prob: float = 0.05
    clutter_rate: float = 0.2
    length: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("n_objects", "speed", "box_width", "aspect", "scale_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is not ordered: {(lo, hi)}")
        if not 0 <= self.drop_prob <= 1:
            raise ValueError("drop_prob must lie in [0, 1]")
        if self.clutter_rate < 0 or self.motion_noise < 0 or not 0 <= self.max_offset <= 1:
            raise ValueError("noise parameters must be non-negative (max_offset at most 1)")
        if self.length < 1 or self.n_objects[0] < 0 or self.scale_range[0] <= 0:
            raise ValueError("invalid scene size or scale range")
        if self.box_width[1] * self.aspect[1] >= self.height or self.box_width[1] >= self.width:
            raise ValueError("boxes do not fit in the frame")

    @property
    def dims(self) -> FrameDims:
        return FrameDims(self.width, self.height)


def _random_box(rng, cfg: SceneConfig):
    w = rng.uniform(*cfg.box_width)
    h = w * rng.uniform(*cfg.aspect)
    return np.array([rng.uniform(0, cfg.width - w), rng.uniform(0, cfg.height - h), w, h])


def gen_synthetic_sequences(cfg: SceneConfig) -> tuple:
    """``(gt, detections)`` TrackFiles for one scene; detections have id -1."""
    rng = np.random.default_rng(cfg.seed)
    n_obj = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    boxes = np.array([_random_box(rng, cfg) for _ in range(n_obj)]).reshape(-1, 4)
    angle = rng.uniform(0, 2 * np.pi, n_obj)
    speed = rng.uniform(*cfg.speed, n_obj)
    vel = np.column_stack([np.cos(angle), np.sin(angle)]) * speed[:, None]
    gt = TrackFile(dims=cfg.dims, n_frames=cfg.length)
    det = TrackFile(dims=cfg.dims, n_frames=cfg.length, allow_duplicate_ids=True)
    limit = np.array([cfg.width, cfg.height])
    for t in range(1, cfg.length + 1):
        if t > 1:
            boxes[:, :2] += vel + rng.normal(0, cfg.motion_noise, (n_obj, 2)) if cfg.motion_noise else vel
            hi = limit - boxes[:, 2:]
            low_hit, high_hit = boxes[:, :2] < 0, boxes[:, :2] > hi
            vel[low_hit | high_hit] *= -1
            boxes[:, :2] = np.clip(boxes[:, :2], 0, hi)
        for k in range(n_obj):
            gt.add(t, k + 1, boxes[k])
            if rng.random() < cfg.drop_prob:
                continue
            b = boxes[k].copy()
            b[2:] *= rng.uniform(*cfg.scale_range, 2)
            b[:2] += rng.uniform(-cfg.max_offset, cfg.max_offset, 2) * boxes[k, 2:]
            det.add(t, -1, b)
        for _ in range(rng.poisson(cfg.clutter_rate)):
            det.add(t, -1, _random_box(rng, cfg))
    return gt, det


def save_scene(root, gt: TrackFile, det: TrackFile, name: str = "scene"):
    """MOTChallenge-style directory: ``seqinfo.ini``, ``gt/gt.txt``, ``det/det.txt``."""
    root = Path(root)
    (root / "gt").mkdir(parents=True, exist_ok=True)
    (root / "det").mkdir(parents=True, exist_ok=True)
    write_seqinfo(root / "seqinfo.ini", gt.dims, gt.length, name)
    save_motchallenge(gt, root / "gt" / "gt.txt", layout=9)
    save_motchallenge(det, root / "det" / "det.txt", layout=10)


def load_scene(root) -> tuple:
    root = Path(root)
    return (load_motchallenge(root / "gt" / "gt.txt", "gt"),
            load_motchallenge(root / "det" / "det.txt", "det"))
