"""Hard tracking metrics: CLEAR-MOT counts, MOTA/MOTP, IDF1 and MT/ML.

Matching per frame follows the usual persistence rule: a ground-truth
object keeps last frame's partner if both are present and their distance
is still within ``tau``; the remaining objects and hypotheses are matched
with :func:`~deepmot.hungarian.solve_thresholded`.  An identity switch is
counted when an object's partner differs from the partner it had at its
most recent match.

Two distances are available: ``"combined"`` (mean of normalised centre
distance and ``1 - IoU``, needs frame dimensions) and ``"iou"``
(``1 - IoU``).  ``tau`` defaults to 0.5 for both.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import FrameDims, distance_matrix, iou_matrix
from .hungarian import solve, solve_thresholded
from .tracks import TrackFile

REPORT_COLUMNS = ("MOTA", "MOTP_dist", "MOTP_pct", "IDF1", "MT", "ML", "FP", "FN", "IDS", "TP")
DISTANCES = ("combined", "iou")


@dataclass
class FrameMatch:
    """Matching of one frame: distances, binary mask and identities."""

    frame: int
    D: np.ndarray
    B: np.ndarray
    gt_ids: tuple
    pred_ids: tuple


@dataclass
class ClearMotResult:
    tp: int
    fp: int
    fn: int
    ids: int
    n_gt: int
    dist_sum: float
    frames: list = field(default_factory=list)      # FrameMatch per frame with both sides present
    coverage: dict = field(default_factory=dict)    # gt id -> (matched frames, frames present)

    @property
    def mota(self) -> float:
        if self.n_gt == 0:
            raise ValueError("MOTA is undefined without ground-truth boxes")
        return 1.0 - (self.fn + self.fp + self.ids) / self.n_gt

    @property
    def motp_dist(self) -> float:
        """Mean matched distance (lower is better); NaN without matches."""
        return self.dist_sum / self.tp if self.tp else math.nan


@dataclass
class MetricsReport:
    MOTA: float
    MOTP_dist: float
    MOTP_pct: float
    IDF1: float
    MT: float
    ML: float
    FP: int
    FN: int
    IDS: int
    TP: int
    distance: str = "combined"
    tau: float = 0.5

    def row(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_COLUMNS}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(REPORT_COLUMNS))
            w.writeheader()
            w.writerow(self.row())

    def pretty(self) -> str:
        return "\n".join([
            f"distance   {self.distance} (tau={self.tau:g})",
            f"MOTA       {100 * self.MOTA:8.2f} %",
            f"MOTP_dist  {self.MOTP_dist:8.4f}   (mean matched distance, lower is better)",
            f"MOTP_pct   {100 * self.MOTP_pct:8.2f} % (1 - MOTP_dist, higher is better)",
            f"IDF1       {100 * self.IDF1:8.2f} %",
            f"MT         {100 * self.MT:8.2f} %",
            f"ML         {100 * self.ML:8.2f} %",
            f"FP {self.FP}  FN {self.FN}  IDS {self.IDS}  TP {self.TP}",
        ])


def _check_inputs(gt: TrackFile, pred: TrackFile, distance: str, tau: float):
    if distance not in DISTANCES:
        raise ValueError(f"distance must be one of {DISTANCES}, got {distance!r}")
    if not 0 < tau <= 1:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if gt.n_frames is not None and pred.n_frames is not None and gt.n_frames != pred.n_frames:
        raise ValueError(f"frame ranges differ: gt has {gt.n_frames} frames, predictions {pred.n_frames}")
    if pred.frames and gt.length and max(pred.frames) > gt.length:
        raise ValueError(f"predictions reach frame {max(pred.frames)} beyond the ground truth's {gt.length}")
    if distance == "combined" and gt.dims is None and pred.dims is None:
        raise ValueError("the combined distance needs frame dimensions")


def pairwise_distance(a, b, distance: str = "combined", dims: FrameDims | None = None) -> np.ndarray:
    if distance == "iou":
        return 1.0 - iou_matrix(a, b)
    return distance_matrix(a, b, dims)


def clearmot(gt: TrackFile, pred: TrackFile, tau: float = 0.5,
             distance: str = "combined") -> ClearMotResult:
    """Frame-by-frame CLEAR-MOT matching over the whole sequence."""
    _check_inputs(gt, pred, distance, tau)
    dims = gt.dims or pred.dims
    tp = fp = fn = ids = 0
    dist_vals = []
    last_partner = {}   # gt id -> pred id of its most recent match
    prev_map = {}       # gt id -> pred id matched in the previous frame
    frames, coverage = [], {}
    for t in range(1, max(gt.length, pred.length) + 1):
        g_ids, g_boxes = gt.frame(t)
        p_ids, p_boxes = pred.frame(t)
        for g in g_ids:
            hit, seen = coverage.get(g, (0, 0))
            coverage[g] = (hit, seen + 1)
        cur_map = {}
        if g_ids and p_ids:
            D = pairwise_distance(g_boxes, p_boxes, distance, dims)
            g_pos = {g: i for i, g in enumerate(g_ids)}
            p_pos = {p: j for j, p in enumerate(p_ids)}
            B = np.zeros(D.shape, dtype=np.int8)
            for g, p in prev_map.items():
                if g in g_pos and p in p_pos and D[g_pos[g], p_pos[p]] <= tau:
                    B[g_pos[g], p_pos[p]] = 1
            free_r = np.flatnonzero(B.sum(axis=1) == 0)
            free_c = np.flatnonzero(B.sum(axis=0) == 0)
            if free_r.size and free_c.size:
                sub = solve_thresholded(D[np.ix_(free_r, free_c)], tau)
                for a, b in zip(*np.nonzero(sub)):
                    B[free_r[a], free_c[b]] = 1
            for i, j in zip(*np.nonzero(B)):
                g, p = g_ids[i], p_ids[j]
                cur_map[g] = p
                if g in last_partner and last_partner[g] != p:
                    ids += 1
                last_partner[g] = p
                dist_vals.append(float(D[i, j]))
                hit, seen = coverage[g]
                coverage[g] = (hit + 1, seen)
            frames.append(FrameMatch(t, D, B, g_ids, p_ids))
        n_match = len(cur_map)
        tp += n_match
        fn += len(g_ids) - n_match
        fp += len(p_ids) - n_match
        prev_map = cur_map
    return ClearMotResult(tp=tp, fp=fp, fn=fn, ids=ids, n_gt=gt.n_boxes(),
                          dist_sum=math.fsum(dist_vals), frames=frames, coverage=coverage)


def _box_distance(a, b, distance, dims) -> float:
    return float(pairwise_distance(a.reshape(1, 4), b.reshape(1, 4), distance, dims)[0, 0])


def colocation_matrix(gt: TrackFile, pred: TrackFile, tau: float = 0.5,
                      distance: str = "combined") -> tuple:
    """Frames in which each (gt trajectory, predicted trajectory) pair lies within ``tau``.

    Returns ``(C, gt_ids, pred_ids, gt_lengths, pred_lengths)``.
    """
    dims = gt.dims or pred.dims
    gt_tr, pr_tr = gt.trajectories(), pred.trajectories()
    g_ids, p_ids = sorted(gt_tr), sorted(pr_tr)
    C = np.zeros((len(g_ids), len(p_ids)), dtype=np.int64)
    for t in range(1, max(gt.length, pred.length) + 1):
        gi, gb = gt.frame(t)
        pi, pb = pred.frame(t)
        if gi and pi:
            D = pairwise_distance(gb, pb, distance, dims)
            rows = [g_ids.index(g) for g in gi]
            cols = [p_ids.index(p) for p in pi]
            C[np.ix_(rows, cols)] += (D <= tau)
    g_len = np.array([len(gt_tr[g]) for g in g_ids], dtype=np.int64)
    p_len = np.array([len(pr_tr[p]) for p in p_ids], dtype=np.int64)
    return C, g_ids, p_ids, g_len, p_len


def idf1(gt: TrackFile, pred: TrackFile, tau: float = 0.5, distance: str = "combined") -> float:
    """Identity F1 from the best one-to-one matching of trajectories.

    A pair's cost is the number of frames in which the two do not lie within
    ``tau`` of each other; minimising it maximises the identity true
    positives IDTP, and ``IDF1 = 2 IDTP / (n_gt_boxes + n_pred_boxes)``.
    """
    _check_inputs(gt, pred, distance, tau)
    C, _, _, g_len, p_len = colocation_matrix(gt, pred, tau, distance)
    total = int(g_len.sum() + p_len.sum())
    if total == 0:
        return 1.0
    if C.size == 0:
        return 0.0
    A = solve(C.max() - C)
    idtp = int(C[A == 1].sum())
    return 2.0 * idtp / total


def mt_ml(gt: TrackFile, pred: TrackFile, tau: float = 0.5, distance: str = "combined",
          result: ClearMotResult | None = None) -> tuple:
    """Fractions of gt trajectories matched in more than 80% / less than 20% of their frames."""
    if result is None:
        result = clearmot(gt, pred, tau, distance)
    if not result.coverage:
        return 0.0, 0.0
    cov = [hit / seen for hit, seen in result.coverage.values()]
    n = len(cov)
    return sum(c > 0.8 for c in cov) / n, sum(c < 0.2 for c in cov) / n


def evaluate(gt: TrackFile, pred: TrackFile, tau: float = 0.5, distance: str = "combined") -> MetricsReport:
    res = clearmot(gt, pred, tau, distance)
    mt, ml = mt_ml(gt, pred, tau, distance, result=res)
    return MetricsReport(
        MOTA=res.mota, MOTP_dist=res.motp_dist, MOTP_pct=1.0 - res.motp_dist,
        IDF1=idf1(gt, pred, tau, distance), MT=mt, ML=ml,
        FP=res.fp, FN=res.fn, IDS=res.ids, TP=res.tp, distance=distance, tau=tau,
    )
