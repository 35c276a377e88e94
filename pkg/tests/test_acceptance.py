"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line (also repeated in the terminal summary)
before asserting, so a failing criterion still reports its measurements.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

import gradcases as gc
from deepmot import checkpoint
from deepmot.datasets import (
    FormatError, SceneConfig, gen_matrix_pairs, gen_synthetic_sequences, load_motchallenge,
    load_pairs, save_motchallenge, save_pairs,
)
from deepmot.dhn import (
    VARIANTS, DhnConfig, DhnModel, TrainConfig, init_params, size_study, train_dhn,
)
from deepmot.geometry import distance_matrix
from deepmot.hungarian import solve, solve_thresholded
from deepmot.loss import LossConfig, dmotp, soft_counts
from deepmot.moteval import clearmot, idf1
from deepmot.tracker import TrackerTrainConfig, run_tracker, train_tracker, zero_params
from deepmot.tracks import TrackFile
from oracles import brute_assignment_batch, brute_idf1
from scenarios import DIMS, SCENARIOS, random_sequences

pytestmark = pytest.mark.slow

DHN_HEAD = (64, 32, 1)
DHN_TRAIN = TrainConfig(lr=3e-4, epochs=5, batch_size=32, dtype="float32")


def exact_cost(D, A):
    return sum(Fraction(float(v)) for v in D[A == 1])


def test_hungarian_exactness(verdict):
    start = time.perf_counter()
    mismatches = cost_gaps = total = 0
    for N in range(1, 7):
        for M in range(1, 7):
            rng = np.random.default_rng(1000 * N + M)
            Ds = rng.random((1000, N, M))
            Ds[::3] = np.round(Ds[::3], 1)  # every third matrix is full of ties
            for tau in (None, 0.5):
                expected, _, _ = brute_assignment_batch(Ds, tau)
                for D, A_ref in zip(Ds, expected):
                    A = solve(D) if tau is None else solve_thresholded(D, tau)
                    mismatches += not np.array_equal(A, A_ref)
                    cost_gaps += exact_cost(D, A) != exact_cost(D, A_ref)
                    total += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and cost_gaps == 0 and elapsed < 30
    verdict("1 hungarian", ok, f"{total} solves, {mismatches} assignment and {cost_gaps} cost "
                               f"mismatches, {elapsed:.1f}s (< 30s)")
    assert ok


def test_gradient_correctness(verdict):
    start = time.perf_counter()
    prim = max(gc.check(*build(np.random.default_rng(s)))
               for build in gc.PRIMITIVES.values() for s in range(50))
    dhn = {}
    for variant in VARIANTS:
        worst = 0.0
        for s in range(50):
            rng = np.random.default_rng(s)
            D, A, params, cfg = gc.dhn_instance(variant, rng, max_size=4, max_hidden=6)
            worst = max(worst, gc.dhn_check_wrt_D(D, A, params, cfg),
                        gc.dhn_check_wrt_params(D, A, params, cfg, rng, per_tensor=2))
        dhn[variant] = worst
    chain = max(gc.check(*gc.chain_instance(np.random.default_rng(s)), eps=1e-3) for s in range(50))
    elapsed = time.perf_counter() - start
    ok = prim < 1e-4 and max(dhn.values()) < 1e-4 and chain < 1e-3 and elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in dhn.items())
    verdict("2 gradients", ok, f"primitives {prim:.1e}, {detail}, chain {chain:.1e}, {elapsed:.1f}s (< 120s)")
    assert ok


def single_frame(rng):
    """One frame of gt objects with jittered copies and clutter as predictions."""
    n = int(rng.integers(1, 7))
    boxes = np.column_stack([rng.uniform(0, 80, (n, 2)), rng.uniform(8, 20, (n, 2))])
    gt, pred = TrackFile(dims=DIMS, n_frames=1), TrackFile(dims=DIMS, n_frames=1)
    for i, b in enumerate(boxes):
        gt.add(1, i + 1, b)
    keep = rng.permutation(n)[:int(rng.integers(1, n + 1))]
    for k, i in enumerate(keep):
        pred.add(1, 100 + k, boxes[i] + np.r_[rng.normal(0, 1.5, 2), 0, 0])
    for k in range(int(rng.integers(0, 3))):
        pred.add(1, 200 + k, [*rng.uniform(0, 80, 2), 12, 12])
    return gt, pred


def test_soft_hard_consistency(verdict):
    rng = np.random.default_rng(3)
    worst, frames = 0.0, 0
    while frames < 100:
        gt, pred = single_frame(rng)
        r = clearmot(gt, pred)
        (fm,) = r.frames
        if not fm.B.any():
            continue
        worst = max(worst, abs(float(dmotp(fm.D, fm.B).data) - (1.0 - r.motp_dist)))
        frames += 1
    sharp = LossConfig(s=50.0, delta=0.5)
    gap_ratio = 0.0
    for _ in range(100):
        N, M = (int(v) for v in rng.integers(1, 9, 2))
        A = rng.integers(0, 2, (N, M)).astype(np.float64)
        hard_fp = int((A.sum(axis=1) == 0).sum())
        gap_ratio = max(gap_ratio, abs(float(soft_counts(A, sharp).fp.data) - hard_fp) / N)
    ok = worst <= 1e-12 and gap_ratio <= 0.05
    verdict("3 soft/hard", ok, f"dmotp gap {worst:.1e} on {frames} frames (<= 1e-12), "
                               f"worst |fp_soft - FP|/N {gap_ratio:.1e} (<= 0.05)")
    assert ok


@pytest.fixture(scope="module")
def dhn_run():
    """Train seq_gru and conv1d identically on the desk-scale pair set."""
    train = gen_matrix_pairs(20_000, sizes=(2, 12), mode="mix", seed=1)
    test = gen_matrix_pairs(2_000, sizes=(2, 12), mode="mix", seed=2)
    start = time.perf_counter()
    results = {v: train_dhn(train, DhnConfig(v, hidden=64, head=DHN_HEAD), DHN_TRAIN, test_pairs=test)
               for v in ("seq_gru", "conv1d")}
    return results, time.perf_counter() - start


def test_dhn_training(verdict, dhn_run):
    results, elapsed = dhn_run
    seq = max(s.test_wa_row for s in results["seq_gru"].curve)
    conv = max(s.test_wa_row for s in results["conv1d"].curve)
    epochs = len(results["seq_gru"].curve)
    ok = seq >= 0.85 and seq > conv and epochs <= 20 and elapsed < 1800
    verdict("4 dhn training", ok, f"row WA seq_gru {seq:.4f} (>= 0.85) vs conv1d {conv:.4f} "
                                  f"after {epochs} epochs each, {elapsed:.0f}s (< 1800s)")
    assert ok


def test_metric_hand_cases(verdict):
    table_misses = []
    for name, build in SCENARIOS.items():
        gt, pred, table = build()
        r = clearmot(gt, pred)
        got = {"tp": r.tp, "fp": r.fp, "fn": r.fn, "ids": r.ids, "mota": r.mota}
        if got != table:
            table_misses.append(name)
    close = lambda a, b: distance_matrix(a, b, DIMS)[0, 0] <= 0.5
    idf1_misses = 0
    for seed in range(30):
        rng = np.random.default_rng(seed)
        n_gt, n_pred = (int(v) for v in rng.integers(1, 7, 2))
        gt, pred = random_sequences(rng, n_gt, n_pred, n_frames=6)
        idf1_misses += idf1(gt, pred) != brute_idf1(gt.trajectories(), pred.trajectories(), close)
    ok = not table_misses and idf1_misses == 0
    verdict("5 metrics", ok, f"{len(SCENARIOS) - len(table_misses)}/{len(SCENARIOS)} hand tables exact, "
                             f"{30 - idf1_misses}/30 idf1 cases equal to the exhaustive oracle")
    assert ok


def test_tracker_training_effect(verdict, dhn_run):
    model = dhn_run[0]["seq_gru"].model
    scene = lambda s: gen_synthetic_sequences(SceneConfig(scale_range=(0.9, 1.1), max_offset=0.1, seed=s))
    train = [scene(s) for s in range(20)]
    test = [scene(1000 + s) for s in range(20)]
    start = time.perf_counter()
    res = train_tracker(train, model, TrackerTrainConfig(steps=8000, lr=1e-4, scale_range=(0.7, 1.3),
                                                         max_offset=0.4))
    smooth = res.smoothed(100)
    drop = 1.0 - smooth[-1] / smooth[0]
    mota = lambda p: float(np.mean([clearmot(gt, run_tracker(det, p)).mota for gt, det in test]))
    trained, baseline = mota(res.params), mota(zero_params())
    elapsed = time.perf_counter() - start
    ok = trained > baseline and drop >= 0.30 and elapsed < 600
    verdict("6 tracker", ok, f"mean MOTA {trained:.4f} vs zero-params {baseline:.4f}, smoothed loss drop "
                             f"{drop:.1%} (>= 30%), {elapsed:.0f}s (< 600s)")
    assert ok


def test_format_fidelity(verdict, tmp_path):
    failures = []
    rng = np.random.default_rng(7)
    tensors = {"w": rng.normal(size=(5, 3)).astype(np.float32), "b": np.float32(-0.0),
               "empty": np.zeros((0, 2), np.float32)}
    back, meta = checkpoint.loads(checkpoint.dumps(tensors, {"k": "v"}))
    if meta != {"k": "v"} or any(back[k].tobytes() != np.asarray(v).tobytes() for k, v in tensors.items()):
        failures.append("NTF1 tensors")
    cfg = DhnConfig("seq_lstm", hidden=5, head=(6, 1))
    model = DhnModel(cfg, init_params(cfg, seed=3))
    model.save(tmp_path / "m.ntf")
    if (tmp_path / "m.ntf").read_bytes() != checkpoint.dumps(DhnModel.load(tmp_path / "m.ntf").params, cfg.to_meta()):
        failures.append("NTF1 model")
    pairs = gen_matrix_pairs(500, sizes=(1, 12), seed=5)
    save_pairs(pairs, tmp_path / "p.txt")
    loaded = load_pairs(tmp_path / "p.txt")
    if len(loaded) != len(pairs) or any(D.tobytes() != D2.tobytes() or not np.array_equal(A, A2)
                                        for (D, A), (D2, A2) in zip(pairs, loaded)):
        failures.append("pair text")
    for cols, text in ((9, "1,4,1.5,2.5,30,40,1,1,0.8\n"), (10, "1,4,1.5,2.5,30,40,1,-1,-1,-1\n")):
        path = tmp_path / f"gt{cols}.txt"
        path.write_text(text)
        if load_motchallenge(path, "gt").frame(1)[0] != (4,):
            failures.append(f"{cols}-column gt")
    gt, _ = gen_synthetic_sequences(SceneConfig(seed=4, length=10))
    save_motchallenge(gt, tmp_path / "rt.txt")
    if load_motchallenge(tmp_path / "rt.txt", "gt", dims=gt.dims) != gt:
        failures.append("gt round trip")
    bad = tmp_path / "bad.txt"
    bad.write_text("1,4,1.5,2.5,30,40,1,1,0.8\n2,4,1.5,2.5,30,40,1,1,0.8\n3,4,1.5,oops,30,40,1,1,0.8\n")
    try:
        load_motchallenge(bad, "gt")
        failures.append("malformed line accepted")
    except FormatError as exc:
        if "line 3" not in str(exc):
            failures.append(f"error without line number: {exc}")
    ok = not failures
    verdict("7 formats", ok, "NTF1, pair text and gt layouts round-trip; malformed line rejected with "
                             "its number" if ok else "; ".join(failures))
    assert ok


def test_size_study(verdict, tmp_path):
    cfg = DhnConfig("seq_gru", hidden=8, head=(16, 8, 1))
    model = train_dhn(gen_matrix_pairs(2_000, seed=11), cfg,
                      TrainConfig(epochs=1, batch_size=32, lr=1e-3, dtype="float32")).model
    path = tmp_path / "size_study.csv"
    start = time.perf_counter()
    rows = size_study(model, sizes=range(2, 301), per_size=10, path=path)
    elapsed = time.perf_counter() - start
    lines = path.read_text().splitlines()
    matrices = sum(r["matrices"] for r in rows)
    in_range = all(0.0 <= r[k] <= 1.0 for r in rows for k in ("wa_row", "wa_col"))
    ok = len(lines) - 1 == 299 and matrices == 2990 and in_range and elapsed < 600
    verdict("8 size study", ok, f"{len(lines) - 1} rows, {matrices} matrices, WA in [0, 1]: {in_range}, "
                                f"{elapsed:.0f}s (< 600s)")
    assert ok
