"""Scripted tracking scenarios with hand-simulated CLEAR-MOT tables.

All boxes are 10x10 in a 100x100 frame.  Object positions are far apart,
so a prediction either sits exactly on an object (distance 0) or is out of
reach of every other object (distance far above 0.5).
"""

from __future__ import annotations

import numpy as np

from deepmot.geometry import FrameDims
from deepmot.tracks import TrackFile

DIMS = FrameDims(100.0, 100.0)
A = (10.0, 10.0, 10.0, 10.0)
B = (60.0, 60.0, 10.0, 10.0)
C = (80.0, 10.0, 10.0, 10.0)


def track_file(frames: dict, n_frames: int) -> TrackFile:
    tf = TrackFile(dims=DIMS, n_frames=n_frames)
    for t, entries in frames.items():
        for ident, box in entries:
            tf.add(t, ident, box)
    return tf


def _scenario(gt, pred, n_frames, **table):
    return track_file(gt, n_frames), track_file(pred, n_frames), table


def perfect():
    gt = {t: [(1, A), (2, B)] for t in (1, 2, 3)}
    pred = {t: [(7, A), (8, B)] for t in (1, 2, 3)}
    return _scenario(gt, pred, 3, tp=6, fp=0, fn=0, ids=0, mota=1.0)


def pure_miss():
    gt = {t: [(1, A), (2, B)] for t in (1, 2, 3)}
    pred = {t: [(7, A)] for t in (1, 2, 3)}
    # object 2 is never found: three misses out of six boxes
    return _scenario(gt, pred, 3, tp=3, fp=0, fn=3, ids=0, mota=0.5)


def pure_fp():
    gt = {t: [(1, A)] for t in (1, 2, 3)}
    pred = {t: [(7, A), (9, C)] for t in (1, 2, 3)}
    # a clutter track far from the object in every frame
    return _scenario(gt, pred, 3, tp=3, fp=3, fn=0, ids=0, mota=0.0)


def single_swap():
    gt = {t: [(1, A), (2, B)] for t in (1, 2, 3)}
    pred = {1: [(7, A), (8, B)], 2: [(7, B), (8, A)], 3: [(7, B), (8, A)]}
    # frame 2: old partners are out of reach, both objects re-match -> 2 switches;
    # frame 3: the new pairs persist
    return _scenario(gt, pred, 3, tp=6, fp=0, fn=0, ids=2, mota=1 - 2 / 6)


def occlusion_rebirth():
    gt = {t: [(1, A)] for t in range(1, 7)}
    pred = {1: [(7, A)], 2: [(7, A)], 5: [(9, A)], 6: [(9, A)]}
    # frames 3-4 occluded: two misses; the object comes back under a new identity -> 1 switch
    return _scenario(gt, pred, 6, tp=4, fp=0, fn=2, ids=1, mota=1 - 3 / 6)


SCENARIOS = {
    "perfect": perfect,
    "pure_miss": pure_miss,
    "pure_fp": pure_fp,
    "single_swap": single_swap,
    "occlusion_rebirth": occlusion_rebirth,
}


def random_sequences(rng, n_gt, n_pred, n_frames=8):
    """Random gt trajectories and predictions that follow, jump between or ignore them."""
    gt, pred = TrackFile(dims=DIMS, n_frames=n_frames), TrackFile(dims=DIMS, n_frames=n_frames)
    pos = rng.uniform(0, 80, (n_gt, 2))
    for t in range(1, n_frames + 1):
        pos += rng.normal(0, 3, pos.shape)
        pos = np.clip(pos, 0, 80)
        boxes = np.column_stack([pos, np.full((n_gt, 2), 12.0)])
        for g in range(n_gt):
            if rng.random() < 0.85:
                gt.add(t, g + 1, boxes[g])
        for p in range(n_pred):
            r = rng.random()
            if r < 0.7:
                gt_box = boxes[rng.integers(n_gt)] if rng.random() < 0.3 else boxes[p % n_gt]
                pred.add(t, 100 + p, gt_box + np.r_[rng.normal(0, 1.5, 2), 0, 0])
            elif r < 0.85:
                pred.add(t, 100 + p, [*rng.uniform(0, 80, 2), 12, 12])
    return gt, pred
