"""Differentiable stand-ins for the CLEAR-MOT counts and the tracking loss.

Given a soft assignment ``Ã`` (N tracks by M objects) from the DHN:

* ``Cr`` is the row-wise softmax of ``s·[Ã | δ]``; its last column holds
  the soft false-positive mass of every track.
* ``Cc`` is the column-wise softmax of ``s·[Ã ; δ]``; its last row holds
  the soft false-negative mass of every object.
* Soft identity switches are the ``Cc`` mass that falls outside the
  previous frame's true-positive mask.

Binary true-positive masks are built with thresholded Hungarian matching on
the distance matrix and carry no gradient.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .geometry import FrameDims, distance_matrix_diff
from .hungarian import solve_thresholded

GRADIENT_COLUMNS = ("frame", "track_id", "left", "top", "width", "height",
                    "g_left", "g_top", "g_width", "g_height")


@dataclass(frozen=True)
class LossConfig:
    delta: float = 0.5
    lam: float = 5.0
    gamma: float = 2.0
    s: float = 1.0
    tau_tp: float = 0.5

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be non-negative")
        if self.s < 1:
            raise ValueError(f"sharpening s must be >= 1, got {self.s}")
        if not 0 < self.tau_tp <= 1:
            raise ValueError(f"tau_tp must lie in (0, 1], got {self.tau_tp}")

    def to_meta(self) -> dict:
        return {"delta": self.delta, "lambda": self.lam, "gamma": self.gamma, "s": self.s,
                "tau_tp": self.tau_tp, "tp_mask": "thresholded Hungarian on D, constant"}


@dataclass
class TPMask:
    """Binary true-positive mask with the identities of its rows and columns."""

    B: np.ndarray
    track_ids: tuple
    gt_ids: tuple

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=np.int8)
        self.track_ids = tuple(self.track_ids)
        self.gt_ids = tuple(self.gt_ids)
        if self.B.shape != (len(self.track_ids), len(self.gt_ids)):
            raise ValueError(f"mask shape {self.B.shape} does not match "
                             f"{len(self.track_ids)} track and {len(self.gt_ids)} gt ids")
        if len(set(self.track_ids)) != len(self.track_ids) or len(set(self.gt_ids)) != len(self.gt_ids):
            raise ValueError("duplicate identity labels in mask")
        if (self.B.sum(axis=1) > 1).any() or (self.B.sum(axis=0) > 1).any():
            raise ValueError("mask has more than one 1 in a row or column")

    @classmethod
    def empty(cls) -> "TPMask":
        return cls(np.zeros((0, 0), dtype=np.int8), (), ())


@dataclass
class SoftCounts:
    fp: ad.Tensor
    fn: ad.Tensor
    Cr: ad.Tensor
    Cc: ad.Tensor
    ids: ad.Tensor | None = None


def soft_counts(A_soft, cfg: LossConfig = LossConfig()) -> SoftCounts:
    """Soft FP and FN from the augmented softmax matrices (``ids`` left unset)."""
    A = ad.as_tensor(A_soft)
    if A.ndim != 2 or A.size == 0:
        raise ad.ShapeError(f"soft assignment must be a non-empty matrix, got shape {A.shape}")
    N, M = A.shape
    dt = A.data.dtype
    Cr = ad.softmax(ad.concat([A, np.full((N, 1), cfg.delta, dtype=dt)], axis=1) * cfg.s, axis=1)
    Cc = ad.softmax(ad.concat([A, np.full((1, M), cfg.delta, dtype=dt)], axis=0) * cfg.s, axis=0)
    return SoftCounts(fp=ad.sum_(Cr[:, M]), fn=ad.sum_(Cc[N, :]), Cr=Cr, Cc=Cc)


def tp_mask(D, track_ids: Sequence, gt_ids: Sequence, cfg: LossConfig = LossConfig()) -> TPMask:
    D = np.asarray(D.data if isinstance(D, ad.Tensor) else D, dtype=np.float64)
    return TPMask(solve_thresholded(D, cfg.tau_tp), track_ids, gt_ids)


def pad_prev_mask(B_prev: TPMask | None, B_curr: TPMask) -> np.ndarray:
    """Previous-frame mask re-indexed to the current frame's rows and columns.

    Pairs whose track and object both existed before keep their previous
    entry.  Rows of new tracks and columns of new objects are taken from
    the current mask, so fresh identities never look like switches.
    """
    if B_prev is None:
        B_prev = TPMask.empty()
    prev_row = {t: i for i, t in enumerate(B_prev.track_ids)}
    prev_col = {g: j for j, g in enumerate(B_prev.gt_ids)}
    rows = np.array([prev_row.get(t, -1) for t in B_curr.track_ids], dtype=np.int64)
    cols = np.array([prev_col.get(g, -1) for g in B_curr.gt_ids], dtype=np.int64)
    out = np.zeros_like(B_curr.B)
    old_r, old_c = rows >= 0, cols >= 0
    both = np.outer(old_r, old_c)
    if both.any():
        out[both] = B_prev.B[np.ix_(rows[old_r], cols[old_c])].reshape(-1)
    out[~old_r, :] = B_curr.B[~old_r, :]
    out[:, ~old_c] = B_curr.B[:, ~old_c]
    return out


def soft_ids(Cc, B_prev_padded) -> ad.Tensor:
    """Soft identity switches: ``Cc`` interior mass outside the previous mask."""
    Cc = ad.as_tensor(Cc)
    Bp = np.asarray(B_prev_padded, dtype=Cc.data.dtype)
    if Cc.ndim != 2 or Bp.shape != (Cc.shape[0] - 1, Cc.shape[1]):
        raise ad.ShapeError(f"Cc of shape {Cc.shape} does not align with mask {Bp.shape}")
    return ad.l1(ad.masked(Cc[:-1, :], 1.0 - Bp))


def dmota(counts: SoftCounts, M: int, cfg: LossConfig = LossConfig()) -> ad.Tensor:
    if M < 1:
        raise ValueError("dMOTA needs at least one ground-truth object")
    ids = counts.ids if counts.ids is not None else 0.0
    return 1.0 - (counts.fp + counts.fn + ids * cfg.gamma) * (1.0 / M)


def dmotp(D, B) -> ad.Tensor:
    """One minus the mean distance over the mask; 1 (no gradient) for an empty mask."""
    D = ad.as_tensor(D)
    B = np.asarray(B.B if isinstance(B, TPMask) else B)
    if B.shape != D.shape:
        raise ad.ShapeError(f"mask {B.shape} and distance matrix {D.shape} differ")
    n = int(np.count_nonzero(B))
    if n == 0:
        return ad.Tensor(np.array(1.0, dtype=D.data.dtype))
    return 1.0 - ad.l1(ad.masked(D, B != 0)) * (1.0 / n)


@dataclass
class FrameLoss:
    loss: ad.Tensor
    dmota: ad.Tensor
    dmotp: ad.Tensor
    counts: SoftCounts


def deepmot_loss(D, A_soft, B_curr, B_prev_padded, M: int, cfg: LossConfig = LossConfig(),
                 details: bool = False):
    """``(1 - dMOTA) + λ (1 - dMOTP)`` for one frame.

    Differentiable with respect to ``D`` and ``A_soft``.  Returns the scalar
    tensor, or a :class:`FrameLoss` when ``details`` is set.
    """
    counts = soft_counts(A_soft, cfg)
    counts.ids = soft_ids(counts.Cc, B_prev_padded)
    mota = dmota(counts, M, cfg)
    motp = dmotp(D, B_curr)
    loss = (1.0 - mota) + (1.0 - motp) * cfg.lam
    return FrameLoss(loss, mota, motp, counts) if details else loss


# ---------------------------------------------------------------------------
# boxes -> distance -> DHN -> loss
# ---------------------------------------------------------------------------

@dataclass
class Frame:
    """Predicted tracks and ground truth of one frame (boxes as (n, 4) arrays)."""

    track_ids: tuple
    tracks: np.ndarray
    gt_ids: tuple
    objects: np.ndarray
    index: int = 0

    def __post_init__(self):
        self.tracks = np.asarray(self.tracks, dtype=np.float64).reshape(-1, 4)
        self.objects = np.asarray(self.objects, dtype=np.float64).reshape(-1, 4)
        self.track_ids = tuple(self.track_ids)
        self.gt_ids = tuple(self.gt_ids)


def frame_loss(tracks, frame: Frame, dims: FrameDims, dhn, loss_cfg: LossConfig,
               prev: TPMask | None):
    """Loss of one frame for differentiable ``tracks`` boxes.

    ``dhn`` is a callable mapping a distance tensor to a soft assignment.
    Returns ``(loss tensor, current TPMask)``; the loss is None for frames
    without tracks or objects.
    """
    if len(frame.track_ids) == 0 or len(frame.gt_ids) == 0:
        return None, TPMask(np.zeros((len(frame.track_ids), len(frame.gt_ids))),
                            frame.track_ids, frame.gt_ids)
    D = distance_matrix_diff(tracks, frame.objects, dims)
    B = tp_mask(D, frame.track_ids, frame.gt_ids, loss_cfg)
    A = dhn(D)
    loss = deepmot_loss(D, A, B, pad_prev_mask(prev, B), len(frame.gt_ids), loss_cfg)
    return loss, B


def clip_loss(track_tensors: Sequence, frames: Sequence[Frame], dims: FrameDims, dhn,
              loss_cfg: LossConfig = LossConfig()):
    """Unweighted mean of the per-frame losses; frames without tracks or objects are skipped.

    Returns None when no frame contributes.
    """
    prev, losses = None, []
    for t, fr in zip(track_tensors, frames):
        loss, prev = frame_loss(t, fr, dims, dhn, loss_cfg, prev)
        if loss is not None:
            losses.append(loss)
    if not losses:
        return None
    total = losses[0]
    for l in losses[1:]:
        total = total + l
    return total * (1.0 / len(losses))


def _dhn_callable(model):
    if callable(model) and not hasattr(model, "params"):
        return model
    from .dhn import dhn_forward
    return lambda D: dhn_forward(D, model.params, model.cfg)


def loss_grad_wrt_boxes(frame: Frame, dims: FrameDims, model, cfg: LossConfig = LossConfig(),
                        prev: TPMask | None = None):
    """Negative loss gradient with respect to each predicted box of one frame.

    ``model`` is a :class:`~deepmot.dhn.DhnModel` (frozen) or a callable
    mapping distances to soft assignments.  Returns ``(grads (N, 4),
    current TPMask)``; grads are zero when the frame contributes no loss.
    """
    leaf = ad.Tensor(frame.tracks.copy(), requires_grad=True)
    loss, B = frame_loss(leaf, frame, dims, _dhn_callable(model), cfg, prev)
    if loss is None:
        return np.zeros_like(frame.tracks), B
    (g,) = ad.grad(loss, [leaf])
    return -g, B


def gradient_field(frames: Sequence[Frame], dims: FrameDims, model,
                   cfg: LossConfig = LossConfig()) -> list:
    """Per-box negative gradients over a sequence, as dict rows (see GRADIENT_COLUMNS)."""
    rows, prev = [], None
    for fr in frames:
        g, prev = loss_grad_wrt_boxes(fr, dims, model, cfg, prev)
        for tid, box, gv in zip(fr.track_ids, fr.tracks, g):
            rows.append(dict(zip(GRADIENT_COLUMNS, (fr.index, tid, *box.tolist(), *gv.tolist()))))
    return rows


def write_gradient_csv(rows: Sequence[dict], path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(GRADIENT_COLUMNS))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
