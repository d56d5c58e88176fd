"""Report figures rendered next to the delimited outputs. All figures are
written atomically as PNG so identical runs produce identical bytes."""

from __future__ import annotations

import io

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .ioutil import atomic_write_bytes
from .reward import METRIC_NAMES

DPI = 110


def _save(fig, path: str) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=DPI, metadata={"Software": "ptztrack"})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def eval_metrics_figure(per_episode: list[dict], path: str) -> None:
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))
    episodes = np.arange(1, len(per_episode) + 1)
    for ax, name in zip(axes.flat, METRIC_NAMES):
        values = np.array([m[name] for m in per_episode])
        ax.plot(episodes, values, marker="o", ms=3, lw=0.8, color="#336699")
        ax.axhline(values.mean(), color="#cc3333", lw=1,
                   label=f"mean {values.mean():.3g}")
        ax.set_title(name)
        ax.set_xlabel("episode")
        ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def learning_curve_figure(curve: list[dict], path: str) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    updates = [row["update"] for row in curve]
    returns = [row["mean_episode_return"] for row in curve]
    axes[0].plot(updates, returns, marker="o", ms=3, color="#336699")
    axes[0].set_xlabel("update")
    axes[0].set_ylabel("mean episode return")
    axes[0].set_title("training return")
    axes[1].plot(updates, [row["policy_loss"] for row in curve],
                 label="policy loss", color="#336699")
    axes[1].plot(updates, [row["value_loss"] for row in curve],
                 label="value loss", color="#cc8833")
    axes[1].plot(updates, [row["entropy"] for row in curve],
                 label="entropy", color="#33875e")
    axes[1].set_xlabel("update")
    axes[1].legend(fontsize=8)
    axes[1].set_title("diagnostics")
    fig.tight_layout()
    _save(fig, path)


def supervised_curve_figure(curve: list[dict], baseline: float,
                            path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [row["epoch"] for row in curve]
    ax.plot(epochs, [row["train_loss"] for row in curve], label="train",
            color="#336699")
    ax.plot(epochs, [row["val_loss"] for row in curve], label="validation",
            color="#cc8833")
    ax.axhline(baseline, color="#cc3333", ls="--", lw=1,
               label=f"mean predictor {baseline:.4g}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mse")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def tuning_figure(history, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    trials = [row[0] for row in history]
    scores = [row[2] for row in history]
    best = [row[3] for row in history]
    ax.plot(trials, scores, ".", ms=3, color="#888888", label="trial score")
    ax.plot(trials, best, color="#cc3333", label="best so far")
    ax.set_xlabel("trial")
    ax.set_ylabel("mean episode return")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def trace_figure(trace, path: str) -> None:
    fig, axes = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    steps = [r.step for r in trace.records]
    axes[0].plot(steps, [r.ptz.pan for r in trace.records], label="pan")
    axes[0].plot(steps, [r.ptz.tilt for r in trace.records], label="tilt")
    axes[0].plot(steps, [r.ptz.fov for r in trace.records], label="fov")
    axes[0].set_ylabel("degrees")
    axes[0].legend(fontsize=8, ncol=3)
    rewards = [r.reward for r in trace.records]
    axes[1].plot(steps, rewards, lw=0.7, color="#336699")
    axes[1].set_ylabel("step reward")
    axes[1].set_xlabel("step")
    fig.suptitle(f"{trace.scenario_id} seed {trace.seed}")
    fig.tight_layout()
    _save(fig, path)
