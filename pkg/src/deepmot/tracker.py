"""A small trainable box tracker and its test-time track management.

The regressor is a two-layer perceptron.  Its input per track is the
previous box divided by the frame size, followed by the offset of the
detection overlapping it most (zero when nothing overlaps) in units of the
previous box's width and height; its output is a box correction in the
same units::

    pred = prev + W2ᵀ tanh(W1ᵀ x + b1) + b2   (scaled by (w, h, w, h))

With all parameters zero it is the constant-position tracker.  Training
pushes the tracking loss through a frozen DHN into the four weight arrays.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .geometry import FrameDims, iou_matrix
from .hungarian import solve_thresholded
from .loss import Frame, LossConfig, TPMask, _dhn_callable, frame_loss
from .optim import Adam
from .tracks import TrackFile

log = logging.getLogger(__name__)

PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass(frozen=True)
class ManagementConfig:
    birth_frames: int = 3
    birth_iou: float = 0.3
    refine_iou: float = 0.6
    patience: int = 60

    def __post_init__(self):
        if self.birth_frames < 1 or self.patience < 1:
            raise ValueError("birth_frames and patience must be >= 1")
        if not (0 <= self.birth_iou <= 1 and 0 <= self.refine_iou <= 1):
            raise ValueError("IoU thresholds must lie in [0, 1]")


@dataclass
class TrackerTrainConfig:
    lr: float = 1e-4
    steps: int = 3000
    hidden: int = 32
    init_scale: float = 0.5
    scale_range: tuple = (0.8, 1.2)
    max_offset: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.steps < 1 or self.hidden < 1:
            raise ValueError("invalid tracker training config")


# ---------------------------------------------------------------------------
# regressor
# ---------------------------------------------------------------------------

def zero_params(hidden: int = 32) -> dict:
    return {"w1": np.zeros((8, hidden)), "b1": np.zeros(hidden),
            "w2": np.zeros((hidden, 4)), "b2": np.zeros(4)}


def init_params(hidden: int = 32, seed: int = 0, scale: float = 0.5) -> dict:
    """Random first layer, zero output layer: starts as the identity tracker."""
    p = zero_params(hidden)
    p["w1"] = np.random.default_rng(seed).normal(0.0, scale, (8, hidden))
    return p


def features(prev_boxes, detections, dims: FrameDims) -> np.ndarray:
    """(N, 8) inputs: previous box over the frame size, then the best-IoU detection's offset.

    The offset ``det - prev`` is divided by the previous box's (w, h, w, h)
    and is zero for tracks that overlap no detection.
    """
    prev = np.asarray(prev_boxes, dtype=np.float64).reshape(-1, 4)
    det = np.asarray(detections, dtype=np.float64).reshape(-1, 4)
    match = prev.copy()
    if len(det) and len(prev):
        ious = iou_matrix(prev, det)
        best = ious.argmax(axis=1)
        hit = ious[np.arange(len(prev)), best] > 0
        match[hit] = det[best[hit]]
    scale = np.array([dims.width, dims.height, dims.width, dims.height])
    size = np.hstack([prev[:, 2:], prev[:, 2:]])
    return np.hstack([prev / scale, (match - prev) / size])


def tracker_step(prev_boxes, detections, params: dict, dims: FrameDims) -> ad.Tensor:
    """Predicted boxes for the next frame (differentiable in ``params``)."""
    prev = np.asarray(prev_boxes, dtype=np.float64).reshape(-1, 4)
    x = features(prev, detections, dims)
    p = {k: ad.as_tensor(params[k]) for k in PARAM_NAMES}
    hidden = ad.tanh(x @ p["w1"] + p["b1"])
    corr = hidden @ p["w2"] + p["b2"]
    size = np.hstack([prev[:, 2:], prev[:, 2:]])
    out = ad.masked(corr, size) + prev
    if not np.isfinite(out.data).all():
        raise ad.NonFiniteError("tracker produced a non-finite box")
    return out


def save_params(path, params: dict, meta: dict | None = None):
    checkpoint.save(path, params, {"model": "box-mlp-tracker", **(meta or {})})


def load_params(path) -> dict:
    tensors, _ = checkpoint.load(path)
    if set(tensors) != set(PARAM_NAMES):
        raise checkpoint.CheckpointError(f"not a tracker checkpoint: {sorted(tensors)}")
    return {k: v.astype(np.float64) for k, v in tensors.items()}


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class TrackerDiverged(RuntimeError):
    def __init__(self, msg, params, curve):
        super().__init__(msg)
        self.params = params
        self.curve = curve


@dataclass
class TrackerTrainResult:
    params: dict
    curve: list = field(default_factory=list)

    def smoothed(self, window: int = 100) -> np.ndarray:
        c = np.asarray(self.curve, dtype=np.float64)
        if len(c) < window:
            return c
        return np.convolve(c, np.ones(window) / window, mode="valid")

    def write_curve(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss"])
            w.writerows((i + 1, repr(v)) for i, v in enumerate(self.curve))


def _perturb(boxes, rng, cfg: TrackerTrainConfig):
    out = boxes.copy()
    out[:, 2:] *= rng.uniform(*cfg.scale_range, out[:, 2:].shape)
    out[:, :2] += rng.uniform(-cfg.max_offset, cfg.max_offset, out[:, :2].shape) * boxes[:, 2:]
    return out


def training_instances(scenes: Sequence) -> list:
    """(scene index, frame t) pairs where frames t and t+1 both hold objects."""
    out = []
    for s, (gt, _) in enumerate(scenes):
        for t in range(1, gt.length):
            if gt.frames.get(t) and gt.frames.get(t + 1):
                out.append((s, t))
    return out


def instance_loss(params, scene, t: int, init_boxes, dhn, loss_cfg: LossConfig):
    """Tracking loss of one instance: tracks start at ``init_boxes`` in frame t."""
    gt, det = scene
    ids_t, _ = gt.frame(t)
    ids_n, gt_next = gt.frame(t + 1)
    _, det_next = det.frame(t + 1)
    pred = tracker_step(init_boxes, det_next, params, gt.dims)
    prev = TPMask(np.eye(len(ids_t), dtype=np.int8), ids_t, ids_t)
    frame = Frame(ids_t, pred.data, ids_n, gt_next, t + 1)
    loss, _ = frame_loss(pred, frame, gt.dims, dhn, loss_cfg, prev)
    return loss


def train_tracker(scenes: Sequence, dhn_model, cfg: TrackerTrainConfig = TrackerTrainConfig(),
                  loss_cfg: LossConfig = LossConfig(), params: dict | None = None) -> TrackerTrainResult:
    """Adam on the tracking loss; the DHN stays frozen.

    Each step samples a scene and a frame pair (t, t+1), starts one track per
    ground-truth object at its perturbed frame-t box, predicts frame t+1 and
    backpropagates the loss into the tracker parameters.
    """
    instances = training_instances(scenes)
    if not instances:
        raise ValueError("no scene has two consecutive frames with objects")
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(cfg.hidden, int(rng.integers(2**32)), cfg.init_scale)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    opt = Adam(params, cfg.lr)
    dhn = _dhn_callable(dhn_model)
    curve = []
    for step in range(cfg.steps):
        s, t = instances[int(rng.integers(len(instances)))]
        _, gt_boxes = scenes[s][0].frame(t)
        init_boxes = _perturb(gt_boxes, rng, cfg)
        leaves = {k: ad.Tensor(params[k], requires_grad=True) for k in PARAM_NAMES}
        try:
            loss = instance_loss(leaves, scenes[s], t, init_boxes, dhn, loss_cfg)
            grads = ad.grad(loss, [leaves[k] for k in PARAM_NAMES])
        except ad.NonFiniteError as exc:
            raise TrackerDiverged(f"non-finite value at step {step}: {exc}",
                                  {k: v.copy() for k, v in params.items()}, curve) from exc
        opt.step(dict(zip(PARAM_NAMES, grads)))
        curve.append(float(loss.data))
        if (step + 1) % 500 == 0:
            log.info("step %d loss %.4f", step + 1, np.mean(curve[-500:]))
    return TrackerTrainResult(params, curve)


# ---------------------------------------------------------------------------
# test-time management
# ---------------------------------------------------------------------------

@dataclass
class _Track:
    ident: int
    box: np.ndarray
    last_verified: int


@dataclass
class _Candidate:
    box: np.ndarray
    count: int


def _match(a, b, min_iou: float):
    """Hungarian pairs (i, j, iou) between box sets with IoU >= min_iou."""
    if len(a) == 0 or len(b) == 0:
        return []
    ious = iou_matrix(a, b)
    tau = min(1.0, 1.0 - min_iou) if min_iou > 0 else 1.0
    A = solve_thresholded(1.0 - ious, tau) if tau > 0 else (ious >= 1.0).astype(np.int8)
    return [(i, j, ious[i, j]) for i, j in zip(*np.nonzero(A)) if ious[i, j] >= min_iou]


def run_tracker(detections: TrackFile, params: dict, mgmt: ManagementConfig = ManagementConfig(),
                dims: FrameDims | None = None) -> TrackFile:
    """Online tracking over a detection file.

    * A chain of ``birth_frames`` detections in consecutive frames, each
      overlapping the previous one with IoU >= ``birth_iou``, starts a track.
    * Each frame every track is moved by :func:`tracker_step` and matched to
      the detections (IoU >= ``birth_iou``); a match with IoU above
      ``refine_iou`` replaces the box by the average of both.
    * Unmatched tracks are not reported and are dropped after ``patience``
      frames without a match.
    """
    dims = dims or detections.dims
    if dims is None:
        raise ValueError("frame dimensions are required")
    out = TrackFile(dims=dims, n_frames=detections.length)
    tracks: list = []
    cands: list = []
    next_id = 1
    for t in range(1, detections.length + 1):
        _, dets = detections.frame(t)
        claimed = np.zeros(len(dets), dtype=bool)
        visible = []
        if tracks:
            with ad.no_grad():
                pred = tracker_step(np.array([tr.box for tr in tracks]), dets, params, dims).data
            for tr, b in zip(tracks, pred):
                tr.box = b
            for i, j, ov in _match(pred, dets, mgmt.birth_iou):
                tr = tracks[i]
                if ov > mgmt.refine_iou:
                    tr.box = (tr.box + dets[j]) / 2.0
                tr.last_verified = t
                claimed[j] = True
                visible.append(tr)
            tracks = [tr for tr in tracks if t - tr.last_verified < mgmt.patience]
        free = dets[~claimed]
        new_cands = []
        used = np.zeros(len(free), dtype=bool)
        for i, j, _ in _match(np.array([c.box for c in cands]).reshape(-1, 4), free, mgmt.birth_iou):
            new_cands.append(_Candidate(free[j], cands[i].count + 1))
            used[j] = True
        new_cands.extend(_Candidate(b, 1) for b in free[~used])
        cands = []
        for c in new_cands:
            if c.count >= mgmt.birth_frames:
                tr = _Track(next_id, c.box.copy(), t)
                next_id += 1
                tracks.append(tr)
                visible.append(tr)
            else:
                cands.append(c)
        for tr in sorted(visible, key=lambda tr: tr.ident):
            out.add(t, tr.ident, tr.box)
    return out
