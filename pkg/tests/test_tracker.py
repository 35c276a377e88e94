import numpy as np
import pytest

from deepmot import autodiff as ad
from deepmot.datasets import SceneConfig, gen_synthetic_sequences
from deepmot.dhn import DhnConfig, DhnModel, dhn_forward, init_params as dhn_init
from deepmot.geometry import FrameDims
from deepmot.loss import LossConfig
from deepmot.tracker import (
    PARAM_NAMES, ManagementConfig, TrackerTrainConfig, features, init_params, instance_loss,
    load_params, run_tracker, save_params, tracker_step, train_tracker, training_instances,
    zero_params,
)
from deepmot.tracks import TrackFile

DIMS = FrameDims(200.0, 150.0)
SMALL_DHN = DhnConfig("seq_gru", hidden=4, head=(6, 4, 1))


@pytest.fixture(scope="module")
def dhn_model():
    return DhnModel(SMALL_DHN, dhn_init(SMALL_DHN, seed=0))


@pytest.fixture(scope="module")
def scenes():
    return [gen_synthetic_sequences(SceneConfig(seed=s, length=12)) for s in range(3)]


def detections(frames, dims=DIMS, n_frames=None):
    tf = TrackFile(dims=dims, n_frames=n_frames, allow_duplicate_ids=True)
    for t, boxes in frames.items():
        for b in boxes:
            tf.add(t, -1, b)
    return tf


class TestRegressor:
    def test_zero_params_is_identity(self, rng):
        prev = np.column_stack([rng.uniform(0, 100, (5, 2)), rng.uniform(10, 40, (5, 2))])
        dets = prev + 3.0
        out = tracker_step(prev, dets, zero_params(), DIMS)
        np.testing.assert_array_equal(out.data, prev)

    def test_fresh_params_are_identity(self, rng):
        prev = np.column_stack([rng.uniform(0, 100, (3, 2)), rng.uniform(10, 40, (3, 2))])
        out = tracker_step(prev, prev + 2.0, init_params(8, seed=1), DIMS)
        np.testing.assert_array_equal(out.data, prev)

    def test_features(self):
        prev = np.array([[10.0, 20.0, 10.0, 20.0], [150.0, 100.0, 10.0, 10.0]])
        dets = np.array([[12.0, 22.0, 12.0, 20.0]])
        x = features(prev, dets, DIMS)
        np.testing.assert_allclose(x[0], [0.05, 20 / 150, 0.05, 20 / 150, 0.2, 0.1, 0.2, 0.0])
        # no overlapping detection: zero offset
        np.testing.assert_array_equal(x[1, 4:], 0.0)
        np.testing.assert_array_equal(features(prev, np.zeros((0, 4)), DIMS)[:, 4:], 0.0)

    def test_bias_moves_by_box_units(self):
        p = zero_params(4)
        p["b2"] = np.array([0.5, -0.25, 0.0, 0.1])
        out = tracker_step([[10.0, 10.0, 20.0, 40.0]], np.zeros((0, 4)), p, DIMS)
        np.testing.assert_allclose(out.data, [[20.0, 0.0, 20.0, 44.0]])

    def test_gradient_through_step_and_loss(self, scenes):
        params = init_params(6, seed=2)
        params["w2"] = np.random.default_rng(3).normal(0, 0.3, (6, 4))
        dhn_p = dhn_init(SMALL_DHN, seed=1)
        dhn = lambda D: dhn_forward(D, dhn_p, SMALL_DHN)
        s, t = training_instances(scenes)[4]
        init = scenes[s][0].frame(t)[1] + 1.7
        for name in PARAM_NAMES:
            def f(x, name=name):
                return instance_loss({**params, name: x}, scenes[s], t, init, dhn, LossConfig())
            assert ad.finite_diff_check(f, params[name], floor=1e-7) < 1e-3


class TestTraining:
    def test_lr_zero_leaves_params(self, scenes, dhn_model):
        start = init_params(8, seed=0)
        res = train_tracker(scenes, dhn_model, TrackerTrainConfig(lr=0.0, steps=5, hidden=8), params=start)
        for k in PARAM_NAMES:
            np.testing.assert_array_equal(res.params[k], start[k])

    def test_seeded_runs_repeat_exactly(self, scenes, dhn_model):
        cfg = TrackerTrainConfig(steps=15, hidden=8, seed=4)
        a = train_tracker(scenes, dhn_model, cfg)
        b = train_tracker(scenes, dhn_model, cfg)
        assert a.curve == b.curve
        for k in PARAM_NAMES:
            assert a.params[k].tobytes() == b.params[k].tobytes()

    def test_dhn_is_not_modified(self, scenes, dhn_model):
        before = dhn_model.checksum()
        train_tracker(scenes, dhn_model, TrackerTrainConfig(steps=10, hidden=8, lr=1e-2))
        assert dhn_model.checksum() == before

    def test_single_instance_loss_falls(self, dhn_model):
        scene = gen_synthetic_sequences(SceneConfig(seed=1, length=2, speed=(3.0, 4.0)))
        cfg = TrackerTrainConfig(steps=200, hidden=8, scale_range=(1.0, 1.0), max_offset=0.0, seed=0)
        res = train_tracker([scene], dhn_model, cfg)
        smooth = res.smoothed(20)
        assert smooth[-1] < smooth[0]
        assert res.curve[-1] < res.curve[0]

    def test_trained_beats_identity_on_moving_objects(self):
        cfg_scene = dict(length=15, speed=(3.0, 5.0), scale_range=(1.0, 1.0), max_offset=0.0,
                         drop_prob=0.0, clutter_rate=0.0, motion_noise=0.0)
        train = [gen_synthetic_sequences(SceneConfig(seed=s, **cfg_scene)) for s in range(4)]
        test = [gen_synthetic_sequences(SceneConfig(seed=100 + s, **cfg_scene)) for s in range(4)]
        # a monotone stand-in keeps this check independent of DHN training
        res = train_tracker(train, lambda D: 1.0 - D, TrackerTrainConfig(steps=400, hidden=8, lr=1e-2, seed=1))
        err_trained = err_static = 0.0
        for gt, det in test:
            for t in range(1, gt.length):
                prev, nxt = gt.frame(t)[1], gt.frame(t + 1)[1]
                pred = tracker_step(prev, det.frame(t + 1)[1], res.params, gt.dims).data
                err_trained += np.abs(pred - nxt).sum()
                err_static += np.abs(prev - nxt).sum()
        assert err_trained < err_static

    def test_no_instances(self, dhn_model):
        gt = TrackFile(dims=DIMS, n_frames=3)
        with pytest.raises(ValueError):
            train_tracker([(gt, gt)], dhn_model, TrackerTrainConfig(steps=1))

    def test_curve_csv(self, tmp_path, scenes, dhn_model):
        res = train_tracker(scenes, dhn_model, TrackerTrainConfig(steps=3, hidden=4))
        res.write_curve(tmp_path / "c.csv")
        assert len((tmp_path / "c.csv").read_text().splitlines()) == 4

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrackerTrainConfig(lr=-1.0)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        p = {k: v.astype(np.float32).astype(np.float64) for k, v in init_params(5, seed=3).items()}
        save_params(tmp_path / "t.ntf", p)
        back = load_params(tmp_path / "t.ntf")
        for k in PARAM_NAMES:
            np.testing.assert_array_equal(back[k], p[k])

    def test_rejects_other_checkpoints(self, tmp_path):
        DhnModel(SMALL_DHN, dhn_init(SMALL_DHN)).save(tmp_path / "d.ntf")
        with pytest.raises(ValueError):
            load_params(tmp_path / "d.ntf")


class TestManagement:
    box = np.array([50.0, 40.0, 20.0, 40.0])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ManagementConfig(birth_frames=0)
        with pytest.raises(ValueError):
            ManagementConfig(refine_iou=1.5)

    def test_no_detections(self):
        out = run_tracker(detections({}, n_frames=10), zero_params())
        assert out.n_boxes() == 0 and out.length == 10

    def test_stationary_object(self):
        out = run_tracker(detections({t: [self.box] for t in range(1, 11)}), zero_params())
        traj = out.trajectories()
        assert list(traj) == [1]
        assert sorted(traj[1]) == list(range(3, 11))
        np.testing.assert_array_equal(traj[1][10], self.box)

    def test_occlusion_keeps_identity(self):
        frames = {t: [self.box] for t in range(1, 21) if not 8 <= t <= 12}
        out = run_tracker(detections(frames, n_frames=20), zero_params())
        traj = out.trajectories()
        assert list(traj) == [1]
        assert sorted(traj[1]) == [*range(3, 8), *range(13, 21)]

    def test_track_dies_after_patience(self):
        frames = {t: [self.box] for t in (1, 2, 3)} | {t: [self.box] for t in (10, 11, 12, 13)}
        out = run_tracker(detections(frames, n_frames=13), zero_params(), ManagementConfig(patience=4))
        traj = out.trajectories()
        # the first track is gone by frame 10, so a new one is born at frame 12
        assert sorted(traj) == [1, 2]
        assert sorted(traj[1]) == [3] and sorted(traj[2]) == [12, 13]

    def test_refinement_averages(self):
        moved = self.box + np.array([2.0, 0.0, 0.0, 0.0])
        frames = {1: [self.box], 2: [self.box], 3: [self.box], 4: [moved]}
        out = run_tracker(detections(frames), zero_params())
        np.testing.assert_allclose(out.trajectories()[1][4], (self.box + moved) / 2)

    def test_birth_needs_overlap_chain(self):
        far = self.box + np.array([100.0, 0.0, 0.0, 0.0])
        frames = {1: [self.box], 2: [far], 3: [self.box], 4: [far]}
        assert run_tracker(detections(frames), zero_params()).n_boxes() == 0

    def test_needs_dims(self):
        with pytest.raises(ValueError):
            run_tracker(TrackFile(n_frames=2), zero_params())
