"""Quick oracle checks run by ``deepmot selftest``.

Each suite returns a list of failure messages; an empty list means pass.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import autodiff as ad
from .dhn import VARIANTS, DhnConfig, dhn_forward, focal_loss, init_params
from .geometry import FrameDims, distance_matrix_diff
from .hungarian import solve, solve_thresholded
from .loss import LossConfig, deepmot_loss, pad_prev_mask, tp_mask
from .moteval import clearmot
from .tracks import TrackFile


def brute_force(D: np.ndarray, tau: float | None = None) -> float:
    """Best total cost by enumeration; with ``tau``, maximise the match count first."""
    N, M = D.shape
    best = None
    if N <= M:
        for cols in itertools.permutations(range(M), N):
            pairs = [(i, j) for i, j in zip(range(N), cols)]
            best = _better(D, pairs, tau, best)
    else:
        for rows in itertools.permutations(range(N), M):
            pairs = [(i, j) for i, j in zip(rows, range(M))]
            best = _better(D, pairs, tau, best)
    return best[1]


def _better(D, pairs, tau, best):
    if tau is not None:
        pairs = [(i, j) for i, j in pairs if D[i, j] <= tau]
    key = (-len(pairs), math.fsum(D[i, j] for i, j in pairs))
    return key if best is None or key < best else best


def hungarian_suite(n: int = 200, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    fails = []
    for k in range(n):
        N, M = (int(v) for v in rng.integers(1, 6, 2))
        D = rng.random((N, M))
        if k % 3 == 0:
            D = np.round(D, 1)  # ties
        got = math.fsum(D[solve(D) == 1])
        if got != brute_force(D):
            fails.append(f"solve mismatch on {N}x{M} matrix #{k}")
        A = solve_thresholded(D, 0.5)
        got_t = (-int(A.sum()), math.fsum(D[A == 1]))
        if got_t[1] != brute_force(D, 0.5) or -got_t[0] != _count(D, 0.5):
            fails.append(f"solve_thresholded mismatch on {N}x{M} matrix #{k}")
    return fails


def _count(D, tau):
    N, M = D.shape
    best = 0
    for cols in itertools.permutations(range(max(N, M)), N):
        best = max(best, sum(1 for i, j in enumerate(cols) if j < M and D[i, j] <= tau))
    return best


def gradient_suite(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    fails = []
    tol = 1e-4
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    if ad.finite_diff_check(lambda x: ad.sum_(ad.tanh(x @ b)), a) > tol:
        fails.append("matmul/tanh gradient")
    w = rng.normal(size=(3, 4))
    if ad.finite_diff_check(lambda x: ad.sum_(ad.softmax(x, axis=0) * w), a) > tol:
        fails.append("softmax gradient")
    for variant in VARIANTS:
        cfg = DhnConfig(variant, hidden=3, head=(4, 3, 1))
        p = init_params(cfg, seed=1)
        D = rng.random((3, 3))
        A = np.eye(3)
        err = ad.finite_diff_check(lambda x: focal_loss(dhn_forward(x, p, cfg), A), D)
        if err > tol:
            fails.append(f"{variant} gradient w.r.t. D ({err:.2e})")
    cfg = DhnConfig("seq_gru", hidden=4, head=(4, 3, 1))
    p = init_params(cfg, seed=2)
    dims = FrameDims(100, 100)
    objs = np.array([[10.0, 10, 20, 30], [50, 40, 25, 30]])
    boxes = objs + rng.uniform(-4, 4, objs.shape)
    lc = LossConfig()
    B = tp_mask(distance_matrix_diff(boxes, objs, dims), (1, 2), (1, 2), lc)
    Bp = pad_prev_mask(None, B)

    def chain(x):
        Dt = distance_matrix_diff(x, objs, dims)
        return deepmot_loss(Dt, dhn_forward(Dt, p, cfg), B, Bp, 2, lc)

    if ad.finite_diff_check(chain, boxes) > 1e-3:
        fails.append("boxes -> loss chain gradient")
    return fails


def metric_suite() -> list:
    dims = FrameDims(100, 100)
    gt = TrackFile(dims=dims, n_frames=3)
    pred = TrackFile(dims=dims, n_frames=3)
    a, b = [10, 10, 10, 20], [60, 60, 10, 20]
    for t in range(1, 4):
        gt.add(t, 1, a)
        gt.add(t, 2, b)
        pred.add(t, 7, a if t != 2 else b)
        pred.add(t, 8, b if t != 2 else a)
    res = clearmot(gt, pred)
    fails = []
    if (res.tp, res.fp, res.fn, res.ids) != (6, 0, 0, 4):
        fails.append(f"swap scenario counts {(res.tp, res.fp, res.fn, res.ids)} != (6, 0, 0, 4)")
    perfect = clearmot(gt, gt)
    if perfect.mota != 1.0 or perfect.ids != 0:
        fails.append("perfect scenario")
    return fails


SUITES = {"hungarian": hungarian_suite, "gradients": gradient_suite, "metrics": metric_suite}


def run_all() -> dict:
    return {name: fn() for name, fn in SUITES.items()}
