"""Deep Hungarian Net: distance matrix in, soft assignment out.

Variants
--------
``seq_gru`` / ``seq_lstm``
    Row-major flattening -> bidirectional RNN -> column-major re-flattening
    of the hidden states -> second bidirectional RNN (own weights) -> three
    fully connected layers per entry -> sigmoid.
``paral_gru`` / ``paral_lstm``
    Row-major and column-major flattenings go through two separate
    bidirectional RNNs; each output is reduced by one FC layer, the two are
    concatenated per entry and two more FC layers plus a sigmoid follow.
``conv1d``
    Small 1-D U-Net over the row-major flattening: encoder convolutions
    [1, 24, 15] and [24, 48, 15], decoder convolutions [96, 48, 5] and
    [72, 24, 5] fed by skip concatenations, then a 1x1 convolution and sigmoid.

Every forward pass accepts one (N, M) matrix or a stack (B, N, M) of
equally shaped matrices.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .hungarian import solve
from .optim import RMSprop, step_decay

log = logging.getLogger(__name__)

VARIANTS = ("seq_gru", "seq_lstm", "paral_gru", "paral_lstm", "conv1d")
CONV_LAYERS = {  # name: (in channels, out channels, kernel)
    "enc1": (1, 24, 15),
    "enc2": (24, 48, 15),
    "dec1": (96, 48, 5),
    "dec2": (72, 24, 5),
    "out": (24, 1, 1),
}


@dataclass(frozen=True)
class DhnConfig:
    variant: str = "seq_gru"
    hidden: int = 64
    head: tuple = (64, 32, 1)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown DHN variant {self.variant!r}; choose from {VARIANTS}")
        if self.hidden < 1:
            raise ValueError("hidden size must be >= 1")
        object.__setattr__(self, "head", tuple(int(w) for w in self.head))
        if not self.head or self.head[-1] != 1 or min(self.head) < 1:
            raise ValueError(f"head widths must be positive and end in 1, got {self.head}")
        if self.variant.startswith("paral") and len(self.head) < 2:
            raise ValueError("the parallel variant needs at least two head layers")

    @property
    def cell(self) -> str:
        return "lstm" if self.variant.endswith("lstm") else "gru"

    def to_meta(self) -> dict:
        return {
            "variant": self.variant, "hidden": self.hidden, "head": list(self.head),
            "gru_convention": "reset-before-recurrent-product; h=(1-z)*h_prev+z*n; gates r,z,n",
            "lstm_convention": "gates i,f,g,o; c=f*c+i*g; h=o*tanh(c)",
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "DhnConfig":
        return cls(variant=meta["variant"], hidden=int(meta["hidden"]), head=tuple(meta["head"]))


@dataclass
class TrainConfig:
    lr: float = 3e-4
    decay: float = 0.95
    decay_every: int = 20000
    epochs: int = 20
    batch_size: int = 1
    seed: int = 0
    focal_gamma: float = 2.0
    rms_alpha: float = 0.99
    dtype: str = "float64"
    target_wa: float | None = None  # stop once the row-wise test WA reaches this

    def __post_init__(self):
        if self.lr < 0 or not 0 < self.decay <= 1 or self.decay_every < 1:
            raise ValueError("invalid learning-rate schedule")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def param_shapes(cfg: DhnConfig) -> dict:
    """Name -> (shape, fan_in) for every learnable tensor of ``cfg``."""
    h = cfg.hidden
    gates = 4 if cfg.cell == "lstm" else 3
    shapes = {}

    def rnn(prefix, n_in):
        for d in ("fwd", "bwd"):
            shapes[f"{prefix}.{d}.w_ih"] = ((n_in, gates * h), n_in)
            shapes[f"{prefix}.{d}.w_hh"] = ((h, gates * h), h)
            shapes[f"{prefix}.{d}.b"] = ((gates * h,), h)

    def dense(prefix, n_in, n_out):
        shapes[f"{prefix}.w"] = ((n_in, n_out), n_in)
        shapes[f"{prefix}.b"] = ((n_out,), n_in)

    if cfg.variant.startswith("seq"):
        rnn("rnn1", 1)
        rnn("rnn2", 2 * h)
        widths = (2 * h,) + cfg.head
        for k in range(len(cfg.head)):
            dense(f"head.{k}", widths[k], widths[k + 1])
    elif cfg.variant.startswith("paral"):
        rnn("row", 1)
        rnn("col", 1)
        dense("row_fc", 2 * h, cfg.head[0])
        dense("col_fc", 2 * h, cfg.head[0])
        widths = (2 * cfg.head[0],) + cfg.head[1:]
        for k in range(len(cfg.head) - 1):
            dense(f"head.{k}", widths[k], widths[k + 1])
    else:
        for name, (c_in, c_out, k) in CONV_LAYERS.items():
            shapes[f"{name}.w"] = ((c_out, c_in, k), c_in * k)
            shapes[f"{name}.b"] = ((c_out,), c_in * k)
    return shapes


def init_params(cfg: DhnConfig, seed: int = 0, dtype=np.float64) -> dict:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation, seeded."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, (shape, fan_in) in param_shapes(cfg).items():
        bound = 1.0 / math.sqrt(fan_in)
        out[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return out


def check_params(params: dict, cfg: DhnConfig):
    expected = param_shapes(cfg)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ValueError(f"parameters do not match variant {cfg.variant}: missing {missing}, extra {extra}")
    for name, (shape, _) in expected.items():
        if tuple(params[name].shape) != shape:
            raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def _birnn(x, p, prefix, cell):
    fwd = {k: p[f"{prefix}.fwd.{k}"] for k in ("w_ih", "w_hh", "b")}
    bwd = {k: p[f"{prefix}.bwd.{k}"] for k in ("w_ih", "w_hh", "b")}
    return ad.bidirectional_pass(x, fwd, bwd, cell)


def _dense(x, p, prefix, act=True):
    y = x @ p[f"{prefix}.w"] + p[f"{prefix}.b"]
    return ad.relu(y) if act else y


def _seq_forward(D, p, cfg):
    B, N, M = D.shape
    L, C = N * M, 2 * cfg.hidden
    x = ad.reshape(ad.transpose(ad.reshape(D, (B, L)), (1, 0)), (L, B, 1))
    h1 = _birnn(x, p, "rnn1", cfg.cell)  # position n*M + m
    h1 = ad.reshape(ad.transpose(ad.reshape(h1, (N, M, B, C)), (1, 0, 2, 3)), (L, B, C))
    h2 = _birnn(h1, p, "rnn2", cfg.cell)  # position m*N + n
    z = ad.reshape(h2, (L * B, C))
    n_layers = len(cfg.head)
    for k in range(n_layers):
        z = _dense(z, p, f"head.{k}", act=k < n_layers - 1)
    z = ad.reshape(z, (M, N, B))
    return ad.sigmoid(ad.transpose(z, (2, 1, 0)))


def _paral_forward(D, p, cfg):
    B, N, M = D.shape
    L, C = N * M, 2 * cfg.hidden
    xr = ad.reshape(ad.transpose(ad.reshape(D, (B, L)), (1, 0)), (L, B, 1))
    xc = ad.reshape(ad.transpose(ad.reshape(ad.transpose(D, (0, 2, 1)), (B, L)), (1, 0)), (L, B, 1))
    hr = ad.reshape(_birnn(xr, p, "row", cfg.cell), (L * B, C))  # order (n, m, b)
    hc = _birnn(xc, p, "col", cfg.cell)  # order (m, n, b)
    hc = ad.reshape(ad.transpose(ad.reshape(hc, (M, N, B, C)), (1, 0, 2, 3)), (L * B, C))
    z = ad.concat([_dense(hr, p, "row_fc"), _dense(hc, p, "col_fc")], axis=1)
    n_layers = len(cfg.head) - 1
    for k in range(n_layers):
        z = _dense(z, p, f"head.{k}", act=k < n_layers - 1)
    z = ad.reshape(z, (N, M, B))
    return ad.sigmoid(ad.transpose(z, (2, 0, 1)))


def _conv_forward(D, p, cfg):
    B, N, M = D.shape
    L = N * M
    Lp = -(-L // 4) * 4
    x = ad.reshape(D, (B, 1, L))
    if Lp != L:
        x = ad.concat([x, np.zeros((B, 1, Lp - L), dtype=D.data.dtype)], axis=2)

    def conv(t, name, act=True):
        y = ad.conv1d(t, p[f"{name}.w"], p[f"{name}.b"])
        return ad.relu(y) if act else y

    e1 = conv(x, "enc1")                                   # (B, 24, Lp)
    e2 = conv(ad.maxpool1d(e1), "enc2")                    # (B, 48, Lp/2)
    bottom = ad.upsample1d(ad.maxpool1d(e2))               # (B, 48, Lp/2)
    d1 = conv(ad.concat([bottom, e2], axis=1), "dec1")     # (B, 48, Lp/2)
    d2 = conv(ad.concat([ad.upsample1d(d1), e1], axis=1), "dec2")  # (B, 24, Lp)
    y = conv(d2, "out", act=False)[:, 0, :L]
    return ad.sigmoid(ad.reshape(y, (B, N, M)))


_FORWARD = {"seq": _seq_forward, "paral": _paral_forward, "conv1d": _conv_forward}


def dhn_forward(D, params: dict, cfg: DhnConfig) -> ad.Tensor:
    """Soft assignment for ``D`` of shape (N, M) or (B, N, M).

    ``params`` values may be arrays or :class:`~deepmot.autodiff.Tensor`
    leaves; gradients flow to whichever inputs require them.
    """
    D = ad.as_tensor(D)
    if D.ndim not in (2, 3) or 0 in D.shape:
        raise ad.ShapeError(f"distance matrix must be non-empty (N, M) or (B, N, M), got {D.shape}")
    check_params(params, cfg)
    p = {k: ad.as_tensor(v) for k, v in params.items()}
    single = D.ndim == 2
    if single:
        D = ad.reshape(D, (1,) + D.shape)
    out = _FORWARD[cfg.variant.split("_")[0]](D, p, cfg)
    return ad.reshape(out, out.shape[1:]) if single else out


def _ragged_birnn(seqs, p, prefix, cell):
    fwd = {k: p[f"{prefix}.fwd.{k}"] for k in ("w_ih", "w_hh", "b")}
    bwd = {k: p[f"{prefix}.bwd.{k}"] for k in ("w_ih", "w_hh", "b")}
    return ad.ragged_bidirectional(seqs, fwd, bwd, cell)


def _head(z, p, prefixes):
    with ad.no_grad():
        z = ad.Tensor(z)
        for k, name in enumerate(prefixes):
            z = _dense(z, p, name, act=k < len(prefixes) - 1)
        return ad.sigmoid(z).data


def dhn_forward_ragged(mats: Sequence, params: dict, cfg: DhnConfig) -> list:
    """Inference for recurrent variants on matrices of different shapes at once.

    Agrees with :func:`dhn_forward` on each matrix (up to float rounding)
    but steps every recurrence once for the whole list.
    """
    if cfg.variant == "conv1d":
        raise ValueError("the convolutional variant has no ragged form")
    check_params(params, cfg)
    mats = [np.asarray(D) for D in mats]
    shapes = [D.shape for D in mats]
    C = 2 * cfg.hidden
    if cfg.variant.startswith("seq"):
        h1 = _ragged_birnn([D.reshape(-1, 1) for D in mats], params, "rnn1", cfg.cell)
        h1 = [h.reshape(N, M, C).transpose(1, 0, 2).reshape(N * M, C) for h, (N, M) in zip(h1, shapes)]
        h2 = _ragged_birnn(h1, params, "rnn2", cfg.cell)  # column-major positions
        z = _head(np.concatenate(h2), params, [f"head.{k}" for k in range(len(cfg.head))])
        parts = np.split(z[:, 0], np.cumsum([N * M for N, M in shapes])[:-1])
        return [q.reshape(M, N).T for q, (N, M) in zip(parts, shapes)]
    hr = _ragged_birnn([D.reshape(-1, 1) for D in mats], params, "row", cfg.cell)
    hc = _ragged_birnn([D.T.reshape(-1, 1) for D in mats], params, "col", cfg.cell)
    hc = [h.reshape(M, N, C).transpose(1, 0, 2).reshape(N * M, C) for h, (N, M) in zip(hc, shapes)]
    with ad.no_grad():
        z = ad.concat([_dense(ad.Tensor(np.concatenate(hr)), params, "row_fc"),
                       _dense(ad.Tensor(np.concatenate(hc)), params, "col_fc")], axis=1).data
    z = _head(z, params, [f"head.{k}" for k in range(len(cfg.head) - 1)])
    parts = np.split(z[:, 0], np.cumsum([N * M for N, M in shapes])[:-1])
    return [q.reshape(N, M) for q, (N, M) in zip(parts, shapes)]


def dhn_forward_parallel(D, params, cfg):
    if not cfg.variant.startswith("paral"):
        raise ValueError(f"config variant {cfg.variant} is not a parallel DHN")
    return dhn_forward(D, params, cfg)


def dhn_forward_conv1d(D, params, cfg):
    if cfg.variant != "conv1d":
        raise ValueError(f"config variant {cfg.variant} is not the conv1d DHN")
    return dhn_forward(D, params, cfg)


# ---------------------------------------------------------------------------
# model wrapper and checkpoints
# ---------------------------------------------------------------------------

def _freeze(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        arr = np.array(v, dtype=np.float32)
        arr.flags.writeable = False
        out[k] = arr
    return out


@dataclass
class DhnModel:
    """Frozen DHN parameters plus their config (float32, read-only arrays)."""

    cfg: DhnConfig
    params: dict

    def __post_init__(self):
        check_params(self.params, self.cfg)
        self.params = _freeze(self.params)

    def predict(self, D) -> np.ndarray:
        """Soft assignment(s) as numpy, no graph recorded."""
        with ad.no_grad():
            return dhn_forward(np.asarray(D, dtype=np.float32), self.params, self.cfg).data

    def predict_many(self, mats: Sequence[np.ndarray], max_elems: int = 32_000_000) -> list:
        """Predict a list of matrices in batches of at most ``max_elems`` hidden values.

        Recurrent variants batch matrices of any shape together (largest
        first); the convolutional one batches equal shapes.
        """
        if self.cfg.variant != "conv1d":
            return self._predict_ragged(mats, max_elems)
        out = [None] * len(mats)
        groups = {}
        for i, D in enumerate(mats):
            groups.setdefault(np.shape(D), []).append(i)
        per_elem = 2 * self.cfg.hidden if self.cfg.variant != "conv1d" else 96
        for shape, idx in groups.items():
            chunk = max(1, max_elems // max(1, shape[0] * shape[1] * per_elem))
            for s in range(0, len(idx), chunk):
                part = idx[s:s + chunk]
                pred = self.predict(np.stack([mats[i] for i in part]))
                for i, P in zip(part, pred):
                    out[i] = np.asarray(P, dtype=np.float64)
        return out

    def _predict_ragged(self, mats, max_elems):
        out = [None] * len(mats)
        order = sorted(range(len(mats)), key=lambda i: -np.size(mats[i]))
        per_step = 2 * self.cfg.hidden
        start = 0
        while start < len(order):
            longest = max(1, np.size(mats[order[start]]))
            count = max(1, max_elems // (longest * per_step))
            part = order[start:start + count]
            preds = dhn_forward_ragged([np.asarray(mats[i], dtype=np.float32) for i in part],
                                       self.params, self.cfg)
            for i, P in zip(part, preds):
                out[i] = np.asarray(P, dtype=np.float64)
            start += count
        return out

    def save(self, path):
        checkpoint.save(path, self.params, self.cfg.to_meta())

    @classmethod
    def load(cls, path) -> "DhnModel":
        tensors, meta = checkpoint.load(path)
        if meta is None:
            raise checkpoint.CheckpointError("checkpoint carries no DHN metadata")
        return cls(DhnConfig.from_meta(meta), tensors)

    def checksum(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# loss, discretisation and scores
# ---------------------------------------------------------------------------

def class_weights(A_star) -> tuple:
    """(w0, w1) with w0 = n1 / (n0 + n1) and w1 = 1 - w0."""
    A = np.asarray(A_star)
    n1 = float((A == 1).sum())
    w0 = n1 / A.size
    return w0, 1.0 - w0


def focal_loss(A_soft, A_star, gamma: float = 2.0) -> ad.Tensor:
    """Class-weighted focal loss, averaged over all entries.

    Class weights are computed per matrix: for a stack (B, N, M) each of the
    B labels gets its own (w0, w1).
    """
    P = ad.as_tensor(A_soft)
    A = np.asarray(A_star, dtype=P.data.dtype)
    if A.shape != P.shape:
        raise ad.ShapeError(f"prediction {P.shape} and label {A.shape} differ in shape")
    if not np.isin(A, (0, 1)).all():
        raise ValueError("labels must be binary")
    A3 = A.reshape((-1,) + A.shape[-2:])
    if (A3.sum(axis=2) > 1).any() or (A3.sum(axis=1) > 1).any():
        raise ValueError("labels violate the assignment constraints")
    n1 = A3.sum(axis=(1, 2), keepdims=True)
    w0 = n1 / (A3.shape[1] * A3.shape[2])
    W = np.where(A3 == 1, 1.0 - w0, w0).reshape(A.shape).astype(A.dtype)
    pt = ad.masked(P, A) + ad.masked(1.0 - P, 1.0 - A)
    logpt = ad.log(ad.maximum(pt, 1e-12))
    return ad.mean(ad.masked((1.0 - pt) ** gamma * logpt, -W))


def discretize(A_soft, mode: str = "row") -> np.ndarray:
    """Row- or column-wise maximum: the largest entry becomes 1 if it exceeds 0.5.

    Works on (N, M) or stacked (..., N, M) input; ties go to the smallest index.
    """
    P = np.asarray(A_soft)
    if mode not in ("row", "column"):
        raise ValueError(f"mode must be 'row' or 'column', got {mode!r}")
    axis = -1 if mode == "row" else -2
    idx = np.expand_dims(P.argmax(axis=axis), axis)
    best = np.take_along_axis(P, idx, axis=axis)
    out = np.zeros(P.shape, dtype=np.int8)
    np.put_along_axis(out, idx, (best > 0.5).astype(np.int8), axis=axis)
    return out


@dataclass
class DhnScores:
    wa: float
    ma: float   # percent
    sa: float   # percent
    mode: str


def score_assignments(soft: Sequence, labels: Sequence, mode: str = "row") -> DhnScores:
    """WA / MA / SA of discretised predictions against binary labels.

    WA weights the classes with dataset-wide w0 = n1/(n0+n1), w1 = 1 - w0 and
    counts correctly predicted ones and zeros.  MA and SA are taken over the
    axis opposite to the discretisation (columns for row-wise maximum) and
    reported as percentages of those rows/columns.
    """
    if len(soft) == 0:
        raise ValueError("empty dataset")
    n1 = n0 = hit1 = hit0 = 0
    miss = several = lines = 0
    other = -2 if mode == "row" else -1  # axis summed over to get per-column (row) counts
    for P, A in zip(soft, labels):
        Q = discretize(P, mode)
        A = np.asarray(A)
        n1 += int((A == 1).sum())
        n0 += int((A == 0).sum())
        hit1 += int(((Q == 1) & (A == 1)).sum())
        hit0 += int(((Q == 0) & (A == 0)).sum())
        q_count = Q.sum(axis=other)
        a_count = A.sum(axis=other)
        several += int((q_count > 1).sum())
        miss += int(((a_count > 0) != (q_count > 0)).sum())
        lines += q_count.size
    w0 = n1 / (n0 + n1)
    w1 = 1.0 - w0
    den = w1 * n1 + w0 * n0
    wa = (w1 * hit1 + w0 * hit0) / den if den > 0 else (hit0 + hit1) / (n0 + n1)
    return DhnScores(wa=wa, ma=100.0 * miss / lines, sa=100.0 * several / lines, mode=mode)


def eval_dhn(model: DhnModel, pairs: Sequence, mode: str = "row") -> DhnScores:
    """Score ``model`` on (D, A_star) pairs."""
    if len(pairs) == 0:
        raise ValueError("empty dataset")
    soft = model.predict_many([D for D, _ in pairs])
    return score_assignments(soft, [A for _, A in pairs], mode)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; ``params`` holds the last finite state."""

    def __init__(self, msg, params, curve):
        super().__init__(msg)
        self.params = params
        self.curve = curve


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    test_wa_row: float | None
    test_wa_col: float | None
    lr: float


@dataclass
class TrainResult:
    model: DhnModel
    curve: list = field(default_factory=list)

    def write_curve(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "test_wa_row", "test_wa_col", "lr"])
            for s in self.curve:
                w.writerow([s.epoch, repr(s.train_loss), s.test_wa_row, s.test_wa_col, s.lr])


def _batches(pairs, batch_size, rng):
    groups = {}
    for i, (D, _) in enumerate(pairs):
        groups.setdefault(np.shape(D), []).append(i)
    batches = []
    for shape in sorted(groups):
        idx = rng.permutation(groups[shape])
        batches.extend(idx[s:s + batch_size] for s in range(0, len(idx), batch_size))
    return [batches[k] for k in rng.permutation(len(batches))]


def train_dhn(pairs: Sequence, cfg: DhnConfig, tcfg: TrainConfig, test_pairs: Sequence | None = None,
              on_epoch: Callable[[EpochStats], None] | None = None) -> TrainResult:
    """Train a DHN with the focal loss and RMSprop.

    Matrices of equal shape are stacked into batches of up to
    ``tcfg.batch_size``; the learning-rate schedule counts matrices.
    Deterministic for a fixed ``tcfg.seed``.
    """
    if len(pairs) == 0:
        raise ValueError("empty training set")
    dtype = np.dtype(tcfg.dtype)
    rng = np.random.default_rng(tcfg.seed)
    params = init_params(cfg, seed=int(rng.integers(2**32)), dtype=dtype)
    opt = RMSprop(params, tcfg.lr, alpha=tcfg.rms_alpha)
    names = sorted(params)
    seen = 0
    curve = []
    last_finite = {k: v.copy() for k, v in params.items()}
    for epoch in range(1, tcfg.epochs + 1):
        total, count = 0.0, 0
        for batch in _batches(pairs, tcfg.batch_size, rng):
            D = np.stack([pairs[i][0] for i in batch]).astype(dtype)
            A = np.stack([pairs[i][1] for i in batch]).astype(dtype)
            leaves = [ad.Tensor(params[k], requires_grad=True) for k in names]
            try:
                loss = focal_loss(dhn_forward(D, dict(zip(names, leaves)), cfg), A, tcfg.focal_gamma)
                grads = ad.grad(loss, leaves)
            except ad.NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite value at epoch {epoch}: {exc}",
                                       last_finite, curve) from exc
            for k in names:  # these parameters just produced a finite loss
                last_finite[k][...] = params[k]
            lr = step_decay(tcfg.lr, seen, tcfg.decay, tcfg.decay_every)
            opt.step(dict(zip(names, grads)), lr)
            seen += len(batch)
            total += float(loss.data) * len(batch)
            count += len(batch)
        model = DhnModel(cfg, params)
        wa_row = wa_col = None
        if test_pairs:
            soft = model.predict_many([D for D, _ in test_pairs])
            labels = [A for _, A in test_pairs]
            wa_row = score_assignments(soft, labels, "row").wa
            wa_col = score_assignments(soft, labels, "column").wa
        stats = EpochStats(epoch, total / count, wa_row, wa_col, lr)
        curve.append(stats)
        log.info("epoch %d loss %.5f WA row %s col %s", epoch, stats.train_loss, wa_row, wa_col)
        if on_epoch:
            on_epoch(stats)
        if tcfg.target_wa is not None and wa_row is not None and wa_row >= tcfg.target_wa:
            break
    return TrainResult(DhnModel(cfg, params), curve)


# ---------------------------------------------------------------------------
# matrix-size study
# ---------------------------------------------------------------------------

def size_study(model: DhnModel, sizes: Sequence[int] = range(2, 301), per_size: int = 10,
               seed: int = 0, path=None) -> list:
    """WA of ``model`` on uniform random square matrices, one row per size.

    Labels come from :func:`~deepmot.hungarian.solve`.  Returns a list of
    dicts (size, wa_row, wa_col, matrices) and writes them as CSV to
    ``path`` when given.
    """
    rng = np.random.default_rng(seed)
    sizes = list(sizes)
    mats = [rng.random((n, n)) for n in sizes for _ in range(per_size)]
    soft_all = model.predict_many(mats)  # one call, so recurrent variants can mix sizes
    rows = []
    for k, n in enumerate(sizes):
        labels = [solve(D) for D in mats[k * per_size:(k + 1) * per_size]]
        soft = soft_all[k * per_size:(k + 1) * per_size]
        rows.append({
            "size": n,
            "wa_row": score_assignments(soft, labels, "row").wa,
            "wa_col": score_assignments(soft, labels, "column").wa,
            "matrices": per_size,
        })
        log.debug("size %d WA %.4f", n, rows[-1]["wa_row"])
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["size", "wa_row", "wa_col", "matrices"])
            w.writeheader()
            w.writerows(rows)
    return rows
