import numpy as np
import pytest

from ptztrack.baselines import (ControllerParams, KalmanBoxTracker,
                                KalmanConfig, KalmanRuleController,
                                NOISELESS_KALMAN, RandomController,
                                RelativeLocation, ZeroController,
                                bbox_from_relloc, box_to_measurement,
                                measurement_to_box, relloc_from_bbox,
                                rule_control, sample_params, tune_controller)
from ptztrack.camera import BoundingBox, PtzAction, Visibility
from ptztrack.envs import make_env_config, run_episode
from ptztrack.scene import make_stream


def box_from_uvsr(u, v, s, r):
    return measurement_to_box(np.array([u, v, s, r]))


class TestKalmanPredict:
    def test_linear_propagation(self):
        t = KalmanBoxTracker()
        t.update(box_from_uvsr(10, 10, 100, 1))
        t.x[4] = 2.0
        t.x[5] = 4.0
        box = t.predict(1)
        assert box.center == pytest.approx((12, 14))

    def test_zero_velocity_identity(self):
        t = KalmanBoxTracker()
        t.update(box_from_uvsr(10, 10, 100, 1))
        box = t.predict(1)
        assert box.center == pytest.approx((10, 10))
        assert box.area == pytest.approx(100)

    def test_predict_before_init_raises(self):
        with pytest.raises(RuntimeError):
            KalmanBoxTracker().predict()

    def test_two_point_exact_identification(self):
        # noiseless constant-velocity track: after two exact measurements
        # the filter must match the closed-form two-point linear fit
        t = KalmanBoxTracker(NOISELESS_KALMAN)
        t.update(box_from_uvsr(10, 10, 100, 1))
        t.predict(1)
        t.update(box_from_uvsr(12, 14, 100, 1))
        box = t.predict(1)
        u, v = box.center
        assert abs(u - 14) < 1e-6
        assert abs(v - 18) < 1e-6
        assert abs(box.area - 100) < 1e-6

    def test_multi_step_prediction(self):
        t = KalmanBoxTracker(NOISELESS_KALMAN)
        t.update(box_from_uvsr(10, 10, 100, 1))
        t.predict(1)
        t.update(box_from_uvsr(12, 14, 100, 1))
        box = t.predict(3)
        assert box.center == pytest.approx((18, 26), abs=1e-6)


class TestKalmanUpdate:
    def test_first_measurement_initializes(self):
        t = KalmanBoxTracker()
        t.update(box_from_uvsr(30, 40, 200, 2))
        assert t.x[:4] == pytest.approx([30, 40, 200, 2])
        assert t.x[4:] == pytest.approx([0, 0, 0])

    def test_miss_coasts(self):
        t = KalmanBoxTracker()
        t.update(box_from_uvsr(10, 10, 100, 1))
        before = t.x.copy()
        t.predict(1)
        predicted = t.x.copy()
        t.update(None)
        assert np.array_equal(t.x, predicted)
        assert not np.array_equal(t.x, before) or t.x[4] == 0

    def test_small_r_limit_matches_measurement(self):
        cfg = KalmanConfig(r_pos=1e-12, r_area=1e-12, r_aspect=1e-12)
        t = KalmanBoxTracker(cfg)
        t.update(box_from_uvsr(10, 10, 100, 1))
        t.predict(1)
        t.update(box_from_uvsr(17, 3, 140, 1.2))
        assert t.x[:4] == pytest.approx([17, 3, 140, 1.2], abs=1e-6)

    def test_covariance_stays_psd(self):
        rng = np.random.default_rng(0)
        t = KalmanBoxTracker()
        t.update(box_from_uvsr(60, 60, 100, 1))
        for i in range(10_000):
            t.predict(1)
            if rng.random() < 0.3:
                t.update(None)
            else:
                t.update(box_from_uvsr(rng.uniform(0, 120), rng.uniform(0, 120),
                                       rng.uniform(10, 2000),
                                       rng.uniform(0.5, 3.0)))
            if i % 500 == 0:
                assert np.allclose(t.P, t.P.T)
                assert np.linalg.eigvalsh(t.P).min() >= -1e-9
        assert np.linalg.eigvalsh(t.P).min() >= -1e-9


class TestRuleControl:
    PARAMS = ControllerParams(dead_zone_x=6, dead_zone_y=6,
                              zoom_low=0.15, zoom_high=0.5)

    def test_dead_zone_pan(self):
        box = BoundingBox(70, 50, 90, 70)  # center (80, 60)
        action = rule_control(box, False, self.PARAMS, 120, 120)
        assert (action.pan_delta, action.tilt_delta) == (2, 0)

    def test_zoom_in_when_small(self):
        box = BoundingBox(47, 47, 73, 73)  # centered, ratio ~0.047
        action = rule_control(box, False, self.PARAMS, 120, 120)
        assert action.fov_delta == -1
        assert action.pan_delta == action.tilt_delta == 0

    def test_clip_priority_zooms_out(self):
        box = BoundingBox(50, 50, 70, 70)
        action = rule_control(box, True, self.PARAMS, 120, 120)
        assert action.fov_delta == 1

    def test_centered_midband_is_noop(self):
        box = BoundingBox(30, 30, 90, 90)  # ratio 0.25 inside (0.15, 0.5)
        action = rule_control(box, False, self.PARAMS, 120, 120)
        assert action == PtzAction(0, 0, 0)

    def test_tilt_sign_reduces_offset(self):
        low = BoundingBox(50, 80, 70, 100)  # v center 90 -> look down
        assert rule_control(low, False, self.PARAMS, 120, 120).tilt_delta == -2
        high = BoundingBox(50, 20, 70, 40)
        assert rule_control(high, False, self.PARAMS, 120, 120).tilt_delta == 2

    def test_no_track_zooms_out(self):
        action = rule_control(None, False, self.PARAMS, 120, 120)
        assert action == PtzAction(0, 0, 1)

    def test_stateless(self):
        box = BoundingBox(70, 50, 90, 70)
        a = rule_control(box, False, self.PARAMS, 120, 120)
        b = rule_control(box, False, self.PARAMS, 120, 120)
        assert a == b


class TestRelativeLocation:
    def test_centered_quarter(self):
        box = BoundingBox(30, 30, 90, 90)
        rel = relloc_from_bbox(box, 120, 120)
        assert (rel.rel_x, rel.rel_y, rel.rel_zoom) == (0.0, 0.0, 0.25)

    def test_right_border(self):
        box = BoundingBox(110, 50, 130, 70)
        rel = relloc_from_bbox(box, 120, 120)
        assert rel.rel_x == pytest.approx(1.0)

    def test_full_frame(self):
        rel = relloc_from_bbox(BoundingBox(0, 0, 120, 120), 120, 120)
        assert rel.rel_zoom == 1.0

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            u, v = rng.uniform(10, 110, 2)
            s = rng.uniform(1, 2000)
            r = rng.uniform(0.3, 3.0)
            box = box_from_uvsr(u, v, s, r)
            rel = relloc_from_bbox(box, 120, 120)
            back = bbox_from_relloc(rel, 120, 120, aspect=r)
            assert back.center == pytest.approx(box.center)
            assert back.area == pytest.approx(box.area)


class TestTuner:
    def factory(self, cfg):
        return lambda p: KalmanRuleController(p, image_size=cfg.obs_size)

    def test_budget_zero_returns_defaults(self):
        cfg = make_env_config("sc1", episode_len=20)
        best, history = tune_controller(self.factory(cfg), cfg, 0, 1, 1)
        assert best == ControllerParams()
        assert history == []

    def test_best_so_far_monotone(self):
        cfg = make_env_config("sc1", episode_len=60)
        _, history = tune_controller(self.factory(cfg), cfg, 8, 1, 3)
        best = [row[3] for row in history]
        assert all(b2 >= b1 for b1, b2 in zip(best, best[1:]))
        assert history[-1][3] == max(row[2] for row in history)

    def test_deterministic(self):
        cfg = make_env_config("sc1", episode_len=40)
        a = tune_controller(self.factory(cfg), cfg, 5, 1, 7)
        b = tune_controller(self.factory(cfg), cfg, 5, 1, 7)
        assert a[0] == b[0]
        assert [r[2] for r in a[1]] == [r[2] for r in b[1]]

    def test_sampled_params_valid(self):
        rng = make_stream(0, "t")
        for _ in range(200):
            p = sample_params(rng)
            assert 0 < p.zoom_low < p.zoom_high < 1
            assert p.dead_zone_x >= 0 and p.dead_zone_y >= 0

    def test_params_json_round_trip(self, tmp_path):
        p = ControllerParams(dead_zone_x=3.5, dead_zone_y=1.25,
                             zoom_low=0.07, zoom_high=0.44,
                             clip_zoom_out=False)
        path = str(tmp_path / "p.json")
        p.save(path)
        assert ControllerParams.load(path) == p


class TestControllers:
    def test_zero(self):
        assert ZeroController().act(None) == PtzAction(0, 0, 0)

    def test_random_deterministic_per_seed(self):
        a = RandomController()
        b = RandomController()
        a.reset(9)
        b.reset(9)
        assert [a.act(None) for _ in range(20)] == \
            [b.act(None) for _ in range(20)]

    def test_kalman_rule_controller_reset_clears_track(self):
        c = KalmanRuleController()
        vis = Visibility(visible=True,
                         raw_box=BoundingBox(10, 10, 30, 30),
                         clipped_box=BoundingBox(10, 10, 30, 30))
        c.act((vis, None))
        assert c.track.initialized
        c.reset(0)
        assert not c.track.initialized

    def test_kalman_rule_controller_tracks_sc1(self):
        cfg = make_env_config("sc1", episode_len=400)
        scores = []
        for seed in range(5):
            _, m = run_episode(KalmanRuleController(image_size=cfg.obs_size),
                               cfg, seed)
            scores.append(m.pct_tracking)
        assert np.mean(scores) > 60.0
