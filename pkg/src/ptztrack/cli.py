"""Command-line interface: evaluation, training, tuning, dataset
generation, trace replay, virtual PTZ on recorded frames, and the
environment protocol server.

Exit codes: 0 ok, 2 usage/configuration error, 3 I/O or file-format error,
4 protocol error. Every output file is written atomically and every
command is deterministic for fixed flags and seed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import baselines
from .controllers import BboxPolicyController, PolicyController, RellocController
from .envs import (EnvConfig, EpisodeTrace, TrackingEnv, evaluate)
from .ioutil import write_csv, write_pgm
from .nets import (HEADS_ACTOR_CRITIC, ModelFormatError, NetworkSpec,
                   TRUNK_BBOX, TRUNK_IMAGE, param_count_report, save_params)
from .ppo import PpoConfig, train_ppo
from .render import Frame
from .reward import METRIC_NAMES
from .scene import EVAL_VARIATIONS, SCENARIOS, ScenarioSpec, get_scenario
from .supervised import (TARGET_DIMS, generate_dataset, load_dataset,
                         save_dataset, supervised_train)
from .video import CropWindow, VideoPtzConfig, run_video_episode


class UsageError(Exception):
    exit_code = 2


class InputError(Exception):
    exit_code = 3


def _scenario(name: str) -> ScenarioSpec:
    if name.endswith(".json"):
        try:
            with open(name, "r", encoding="utf-8") as f:
                return ScenarioSpec.from_json(f.read())
        except OSError as e:
            raise InputError(f"cannot read scenario file: {e}")
        except (KeyError, ValueError) as e:
            raise UsageError(f"bad scenario file {name}: {e}")
    try:
        return get_scenario(name)
    except KeyError as e:
        raise UsageError(str(e.args[0]))


def _stem(path: str) -> str:
    root, _ext = os.path.splitext(path)
    return root


def build_controller(text: str, obs_size: int):
    """Parse --controller NAME[:FILE[:FILE]] into a controller instance."""
    parts = text.split(":")
    name = parts[0]
    args = parts[1:]
    try:
        if name == "zero" and not args:
            return baselines.ZeroController()
        if name == "random" and not args:
            return baselines.RandomController()
        if name == "perfectbb-kalman" and len(args) <= 1:
            params = (baselines.ControllerParams.load(args[0]) if args
                      else baselines.ControllerParams())
            return baselines.KalmanRuleController(params, image_size=obs_size)
        if name == "relloc-net" and 1 <= len(args) <= 2:
            rule = (baselines.ControllerParams.load(args[1]) if len(args) == 2
                    else baselines.ControllerParams())
            return RellocController.from_file(args[0], rule, obs_size)
        if name == "bbox-mlp" and len(args) == 1:
            return BboxPolicyController.from_file(args[0], obs_size)
        if name == "policy" and len(args) == 1:
            return PolicyController.from_file(args[0])
    except (OSError, ModelFormatError) as e:
        raise InputError(str(e))
    except ValueError as e:
        raise UsageError(str(e))
    raise UsageError(f"unknown controller spec {text!r}")


# ---------------------------------------------------------------------------
# Commands

def cmd_eval(args) -> int:
    scenario = _scenario(args.scenario)
    if args.variation not in EVAL_VARIATIONS:
        raise UsageError(f"unknown variation {args.variation!r}; "
                         f"valid: {EVAL_VARIATIONS}")
    cfg = EnvConfig(scenario=scenario, episode_len=args.episode_len,
                    variation=args.variation)
    controller = build_controller(args.controller, cfg.obs_size)
    keep = args.trace_dir is not None
    aggregate, per_episode, traces = evaluate(controller, cfg, args.episodes,
                                              args.seed, keep_traces=keep)
    stem = _stem(args.out)
    write_csv(args.out, ["metric", "mean", "std"],
              [[name, aggregate[name][0], aggregate[name][1]]
               for name in METRIC_NAMES + ("episode_return",)],
              comments=[f"scenario={scenario.id}", f"variation={args.variation}",
                        f"controller={args.controller}",
                        f"episodes={args.episodes}", f"seed={args.seed}"])
    ep_header = ["episode", "seed"] + list(METRIC_NAMES) + [
        "episode_return", "steps"]
    write_csv(stem + "_episodes.csv", ep_header,
              [[i + 1, m["seed"]] + [m[k] for k in METRIC_NAMES]
               + [m["episode_return"], m["steps"]]
               for i, m in enumerate(per_episode)])
    from . import figures
    figures.eval_metrics_figure(per_episode, stem + ".png")
    if keep:
        for i, trace in enumerate(traces):
            trace.to_csv(os.path.join(args.trace_dir,
                                      f"trace_ep{i + 1:04d}.csv"))
    for name in METRIC_NAMES + ("episode_return",):
        mean, std = aggregate[name]
        print(f"{name}: {mean:.4g} +- {std:.4g}")
    return 0


def cmd_train_ppo(args) -> int:
    scenario = _scenario(args.scenario)
    env_cfg = EnvConfig(scenario=scenario, episode_len=args.episode_len,
                        training_mode=True,
                        max_consecutive_lost=args.max_lost)
    trunk = TRUNK_IMAGE if args.policy == "image" else TRUNK_BBOX
    spec = NetworkSpec(trunk=trunk, ci_injection=scenario.dt_enabled,
                       heads=HEADS_ACTOR_CRITIC)
    ppo_cfg = PpoConfig(envs=args.envs, rollout_per_update=args.rollout,
                        minibatch=args.minibatch, epochs=args.epochs,
                        learning_rate=args.lr)
    dtype = np.float32 if args.dtype == "f32" else np.float64
    print(param_count_report(spec))
    stem = _stem(args.out)

    def on_update(update, result):
        row = result.curve[-1]
        print(f"update {update}/{args.updates} steps {row['steps']} "
              f"return {row['mean_episode_return']:.3f} "
              f"entropy {row['entropy']:.3f}", flush=True)
        if args.checkpoint_every and update % args.checkpoint_every == 0:
            save_params(spec, result.params, f"{stem}_ckpt{update:04d}.bin")

    result = train_ppo(env_cfg, spec, ppo_cfg, args.updates, args.seed,
                       dtype=dtype, on_update=on_update)
    save_params(spec, result.params, args.out)
    curve_header = list(result.curve[0].keys())
    write_csv(stem + "_curve.csv", curve_header,
              [[row[k] for k in curve_header] for row in result.curve])
    if result.episodes:
        ep_header = list(result.episodes[0].keys())
        write_csv(stem + "_episodes.csv", ep_header,
                  [[row[k] for k in ep_header] for row in result.episodes])
    from . import figures
    figures.learning_curve_figure(result.curve, stem + "_curve.png")
    print(f"model written to {args.out}")
    return 0


def cmd_train_supervised(args) -> int:
    try:
        ds = load_dataset(args.dataset)
    except (OSError, ValueError, KeyError) as e:
        raise InputError(f"cannot load dataset: {e}")
    if ds.task != args.task:
        raise UsageError(f"dataset holds task {ds.task!r}, not {args.task!r}")
    heads = "regression3" if args.task == "relloc" else "regression4"
    spec = NetworkSpec(trunk=TRUNK_IMAGE, heads=heads)
    result = supervised_train(
        spec, ds, args.epochs, args.seed, learning_rate=args.lr,
        batch=args.batch,
        on_epoch=lambda e, row: print(
            f"epoch {e}/{args.epochs} train {row['train_loss']:.5f} "
            f"val {row['val_loss']:.5f}", flush=True))
    save_params(spec, result.params, args.out)
    stem = _stem(args.out)
    write_csv(stem + "_curve.csv", ["epoch", "train_loss", "val_loss"],
              [[r["epoch"], r["train_loss"], r["val_loss"]]
               for r in result.curve],
              comments=[f"baseline_val_mse={result.baseline_val_mse!r}"])
    from . import figures
    figures.supervised_curve_figure(result.curve, result.baseline_val_mse,
                                    stem + "_curve.png")
    final = result.curve[-1]["val_loss"]
    print(f"baseline val mse {result.baseline_val_mse:.5f}, final {final:.5f}")
    return 0


def cmd_gen_dataset(args) -> int:
    scenario = _scenario(args.scenario)
    if args.task not in TARGET_DIMS:
        raise UsageError(f"unknown task {args.task!r}")
    cfg = EnvConfig(scenario=scenario)
    ds = generate_dataset(cfg, args.samples, args.task, args.seed)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} records to {args.out}")
    return 0


def cmd_tune(args) -> int:
    scenario = _scenario(args.scenario)
    cfg = EnvConfig(scenario=scenario, episode_len=args.episode_len,
                    variation=args.variation)
    parts = args.pipeline.split(":")
    if parts[0] == "perfectbb-kalman" and len(parts) == 1:
        def factory(params):
            return baselines.KalmanRuleController(params,
                                                  image_size=cfg.obs_size)
    elif parts[0] == "relloc-net" and len(parts) == 2:
        base = RellocController.from_file(parts[1], obs_size=cfg.obs_size)

        def factory(params):
            return RellocController(base.spec, base.params, params,
                                    cfg.obs_size)
    else:
        raise UsageError(f"unknown pipeline {args.pipeline!r}")
    best, history = baselines.tune_controller(factory, cfg, args.budget,
                                              args.episodes, args.seed)
    best.save(args.out)
    stem = _stem(args.out)
    rows = [[t, p.dead_zone_x, p.dead_zone_y, p.zoom_low, p.zoom_high,
             p.clip_zoom_out, s, b] for t, p, s, b in history]
    write_csv(stem + "_trials.csv",
              ["trial", "dead_zone_x", "dead_zone_y", "zoom_low", "zoom_high",
               "clip_zoom_out", "score", "best_so_far"], rows)
    if history:
        from . import figures
        figures.tuning_figure(history, stem + ".png")
        print(f"best score {history[-1][3]:.3f} after {len(history)} trials")
    print(f"best params written to {args.out}")
    return 0


def cmd_render_episode(args) -> int:
    try:
        trace = EpisodeTrace.from_csv(args.trace)
    except (OSError, ValueError, KeyError, IndexError) as e:
        raise InputError(f"cannot read trace: {e}")
    if not trace.records:
        raise InputError("trace has no steps")
    scenario = _scenario(trace.scenario_id)
    cfg = EnvConfig(scenario=scenario, episode_len=len(trace.records),
                    variation=trace.variation)
    env = TrackingEnv(cfg)
    obs = env.reset(trace.seed)
    os.makedirs(args.out_dir, exist_ok=True)

    def dump(frame: Frame, index: int):
        pix = np.clip(np.rint(frame.pixels * 255.0), 0, 255).astype(np.uint8)
        write_pgm(os.path.join(args.out_dir, f"frame_{index:06d}.pgm"), pix)

    dump(obs.image, 0)
    mismatches = 0
    for record in trace.records:
        result = env.step(record.action)
        if result.reward != record.reward:
            mismatches += 1
        dump(result.obs.image, record.step)
    from . import figures
    figures.trace_figure(trace, os.path.join(args.out_dir, "trace.png"))
    print(f"wrote {len(trace.records) + 1} frames to {args.out_dir}"
          + (f" ({mismatches} reward mismatches)" if mismatches else ""))
    return 0


def cmd_video_ptz(args) -> int:
    controller = build_controller(args.controller, 120)
    if controller.observation_kind == "oracle":
        raise UsageError("video-ptz controllers must consume images "
                         "(or run open-loop)")
    try:
        cx, cy, w = (float(v) for v in args.crop.split(","))
    except ValueError:
        raise UsageError("--crop must be cx,cy,w")
    cfg = VideoPtzConfig(fov_full=args.fov_full)
    try:
        trace = run_video_episode(args.frames, CropWindow(cx, cy, w),
                                  controller, cfg, out_csv=args.out_csv,
                                  out_frames_dir=args.out_frames)
    except (OSError, FileNotFoundError, ValueError) as e:
        raise InputError(str(e))
    print(f"processed {len(trace)} frames")
    return 0


def cmd_serve(args) -> int:
    from . import serve
    defaults = {}
    if args.episode_len:
        defaults["episode_len"] = args.episode_len
    try:
        if args.stdio:
            serve.serve_stdio(defaults)
        else:
            serve.serve_socket(args.host, args.port, defaults)
    except OSError as e:
        print(f"protocol server error: {e}", file=sys.stderr)
        return 4
    return 0


# ---------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ptztrack",
        description="PTZ tracking simulator: evaluation, training, tuning, "
                    "and the environment protocol server.")
    sub = parser.add_subparsers(dest="command", required=True)
    scenarios = ", ".join(sorted(SCENARIOS))

    def add_parser(name, **kw):
        return sub.add_parser(
            name, formatter_class=argparse.ArgumentDefaultsHelpFormatter, **kw)

    p = add_parser("eval", help="evaluate a controller over episodes")
    p.add_argument("--scenario", required=True,
                   help=f"scenario name ({scenarios}) or a JSON file")
    p.add_argument("--controller", required=True,
                   help="zero | random | perfectbb-kalman[:params.json] | "
                        "relloc-net:model[:params.json] | bbox-mlp:model | "
                        "policy:model")
    p.add_argument("--variation", default="as_trained",
                   help=f"scene override: {', '.join(EVAL_VARIATIONS)}")
    p.add_argument("--episodes", type=int, default=30)
    p.add_argument("--episode-len", type=int, default=2000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="eval.csv", help="aggregate CSV path")
    p.add_argument("--trace-dir", default=None,
                   help="also write one trace CSV per episode")
    p.set_defaults(func=cmd_eval)

    p = add_parser("train-ppo", help="train a policy with PPO")
    p.add_argument("--scenario", default="sc0_static")
    p.add_argument("--policy", choices=["image", "bbox"], default="image")
    p.add_argument("--envs", type=int, default=4)
    p.add_argument("--rollout", type=int, default=4096,
                   help="environment steps per update, across all envs")
    p.add_argument("--updates", type=int, default=15)
    p.add_argument("--episode-len", type=int, default=400,
                   help="training episode length (desk-scale default)")
    p.add_argument("--max-lost", type=int, default=5,
                   help="end a training episode after this many consecutive "
                        "steps with the target out of view")
    p.add_argument("--minibatch", type=int, default=256)
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--dtype", choices=["f32", "f64"], default="f32")
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="policy.bin")
    p.set_defaults(func=cmd_train_ppo)

    p = add_parser("train-supervised",
                       help="train a regression head with MSE")
    p.add_argument("--task", choices=sorted(TARGET_DIMS), required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="model.bin")
    p.set_defaults(func=cmd_train_supervised)

    p = add_parser("gen-dataset", help="generate a labeled dataset")
    p.add_argument("--scenario", default="sc3")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--task", choices=sorted(TARGET_DIMS), required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="dataset.bin")
    p.set_defaults(func=cmd_gen_dataset)

    p = add_parser("tune", help="random-search controller tuning")
    p.add_argument("--pipeline", default="perfectbb-kalman",
                   help="perfectbb-kalman | relloc-net:model")
    p.add_argument("--scenario", default="sc1")
    p.add_argument("--variation", default="as_trained")
    p.add_argument("--budget", type=int, default=200)
    p.add_argument("--episodes", type=int, default=3,
                   help="episodes per trial (shared seed set)")
    p.add_argument("--episode-len", type=int, default=2000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default="params.json")
    p.set_defaults(func=cmd_tune)

    p = add_parser("render-episode", help="replay a trace to PGM frames")
    p.add_argument("--trace", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_render_episode)

    p = add_parser("video-ptz",
                       help="virtual PTZ crop over recorded frames")
    p.add_argument("--frames", required=True,
                   help="directory of frame_%%06d.pgm/ppm files")
    p.add_argument("--controller", default="zero")
    p.add_argument("--crop", required=True, help="initial window: cx,cy,w")
    p.add_argument("--fov-full", type=float, default=90.0)
    p.add_argument("--out-csv", default="crops.csv")
    p.add_argument("--out-frames", default=None)
    p.set_defaults(func=cmd_video_ptz)

    p = add_parser("serve", help="serve the environment protocol")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--stdio", action="store_true")
    group.add_argument("--port", type=int)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--episode-len", type=int, default=0,
                   help="override the served episode length")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except ModelFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
