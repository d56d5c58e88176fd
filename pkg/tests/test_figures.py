import os

from ptztrack import figures
from ptztrack.baselines import RandomController
from ptztrack.envs import make_env_config, run_episode


def test_figures_render_and_are_deterministic(tmp_path):
    per_episode = [
        {"pct_tracking": 90.0, "center_x": 0.8, "center_y": 0.7,
         "obj_size": 0.2, "episode_return": 100.0},
        {"pct_tracking": 70.0, "center_x": 0.6, "center_y": 0.9,
         "obj_size": 0.1, "episode_return": 50.0},
    ]
    a = str(tmp_path / "a.png")
    b = str(tmp_path / "b.png")
    figures.eval_metrics_figure(per_episode, a)
    figures.eval_metrics_figure(per_episode, b)
    assert open(a, "rb").read() == open(b, "rb").read()
    assert os.path.getsize(a) > 1000


def test_curve_and_tuning_figures(tmp_path):
    curve = [{"update": i, "mean_episode_return": float(i),
              "policy_loss": 0.1, "value_loss": 0.2, "entropy": 1.0}
             for i in range(1, 4)]
    figures.learning_curve_figure(curve, str(tmp_path / "c.png"))
    sup = [{"epoch": i, "train_loss": 1.0 / i, "val_loss": 1.5 / i}
           for i in range(1, 4)]
    figures.supervised_curve_figure(sup, 0.9, str(tmp_path / "s.png"))
    from ptztrack.baselines import ControllerParams
    history = [(i, ControllerParams(), float(i), float(i)) for i in range(5)]
    figures.tuning_figure(history, str(tmp_path / "t.png"))
    for name in ("c.png", "s.png", "t.png"):
        assert os.path.getsize(str(tmp_path / name)) > 1000


def test_trace_figure(tmp_path):
    cfg = make_env_config("sc1", episode_len=25)
    trace, _ = run_episode(RandomController(), cfg, 3)
    figures.trace_figure(trace, str(tmp_path / "tr.png"))
    assert os.path.getsize(str(tmp_path / "tr.png")) > 1000
