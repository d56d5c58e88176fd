"""Supervised pipelines: labeled dataset generation from the simulator
(relative-location and box-regression targets) and minibatch MSE training
with Adam on the shared trunks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .camera import ALL_ACTIONS, PtzState
from .envs import EnvConfig, TrackingEnv
from .ioutil import atomic_write_bytes, atomic_write_text
from .nets import (CHUNK, AdamState, Network, NetworkSpec, adam_step,
                   limit_blas_threads)
from .scene import make_stream

TASK_RELLOC = "relloc"     # targets (rel_x, rel_y, rel_zoom)
TASK_DETECTOR = "detector"  # targets normalized (xmin, ymin, xmax, ymax)
TARGET_DIMS = {TASK_RELLOC: 3, TASK_DETECTOR: 4}

RECENTER_EVERY = 25  # steps of random camera jitter between re-centerings


@dataclass
class Dataset:
    task: str
    obs_size: int
    images: np.ndarray   # (N, obs, obs) uint8
    targets: np.ndarray  # (N, D) float32

    def __len__(self):
        return self.images.shape[0]


def targets_from_box(task: str, box, obs_size: int) -> np.ndarray:
    if task == TASK_RELLOC:
        x, y = box.center
        half = obs_size / 2.0
        return np.array([(x - half) / half, (y - half) / half,
                         box.area / (obs_size * obs_size)], dtype=np.float32)
    return np.array([box.xmin, box.ymin, box.xmax, box.ymax],
                    dtype=np.float32) / obs_size


def _aim_at_target(env: TrackingEnv, rng) -> PtzState:
    """Point the camera at the target with some angular slack and a random
    zoom, so recorded scales and offsets stay diverse."""
    _, state = env.world.target
    cam = np.asarray(env.obs_rig.position)
    dx = state.position[0] - cam[0]
    dy = state.position[1] - cam[1]
    dist = math.hypot(dx, dy)
    pan = math.degrees(math.atan2(dx, dy)) + rng.uniform(-6.0, 6.0)
    # aim at roughly mid-object height (~1 m above ground)
    tilt = math.degrees(math.atan2(1.0 - cam[2], max(dist, 1.0)))
    tilt += rng.uniform(-6.0, 6.0)
    fov = int(rng.integers(10, 91))
    return PtzState(pan=int(np.clip(round(pan), -90, 90)),
                    tilt=int(np.clip(round(tilt), -60, 10)),
                    fov=fov)


def generate_dataset(env_cfg: EnvConfig, samples: int, task: str,
                     seed: int) -> Dataset:
    """Observe the target under random camera jitter with periodic
    re-centering; only frames with the target visible are recorded."""
    if task not in TARGET_DIMS:
        raise ValueError(f"unknown task {task!r}")
    rng = make_stream(seed, "dataset")
    obs_size = env_cfg.obs_size
    images = np.zeros((samples, obs_size, obs_size), dtype=np.uint8)
    targets = np.zeros((samples, TARGET_DIMS[task]), dtype=np.float32)
    collected = 0
    episode = 0
    while collected < samples:
        env = TrackingEnv(env_cfg)
        obs = env.reset(seed + 10_000 + episode)
        episode += 1
        since_recenter = 0
        # a bounded sweep per episode keeps scenes varied
        for _ in range(min(400, samples * 4)):
            vis = env.last_visibility
            if vis.visible:
                images[collected] = np.rint(obs.image.pixels * 255.0)
                targets[collected] = targets_from_box(task, vis.clipped_box,
                                                      obs_size)
                collected += 1
                if collected >= samples:
                    break
            since_recenter += 1
            if not vis.visible or since_recenter >= RECENTER_EVERY:
                env.ptz = _aim_at_target(env, rng)
                since_recenter = 0
            action = ALL_ACTIONS[int(rng.integers(0, len(ALL_ACTIONS)))]
            if env.done:
                break
            obs = env.step(action).obs
    return Dataset(task=task, obs_size=obs_size, images=images,
                   targets=targets)


# ---------------------------------------------------------------------------
# Dataset files: binary records plus a JSON sidecar

def save_dataset(ds: Dataset, path: str) -> None:
    records = bytearray()
    for i in range(len(ds)):
        records += ds.images[i].tobytes()
        records += ds.targets[i].astype("<f4").tobytes()
    atomic_write_bytes(path, bytes(records))
    sidecar = {
        "count": len(ds),
        "obs_size": ds.obs_size,
        "target_dim": ds.targets.shape[1],
        "task": ds.task,
    }
    atomic_write_text(path + ".json", json.dumps(sidecar, indent=2) + "\n")


def load_dataset(path: str) -> Dataset:
    with open(path + ".json", "r", encoding="utf-8") as f:
        meta = json.load(f)
    n = meta["count"]
    obs = meta["obs_size"]
    dim = meta["target_dim"]
    record = obs * obs + 4 * dim
    with open(path, "rb") as f:
        data = f.read()
    if len(data) != n * record:
        raise ValueError(f"{path}: expected {n * record} bytes, got {len(data)}")
    images = np.zeros((n, obs, obs), dtype=np.uint8)
    targets = np.zeros((n, dim), dtype=np.float32)
    for i in range(n):
        start = i * record
        images[i] = np.frombuffer(
            data[start:start + obs * obs], dtype=np.uint8).reshape(obs, obs)
        targets[i] = np.frombuffer(
            data[start + obs * obs:start + record], dtype="<f4")
    return Dataset(task=meta["task"], obs_size=obs, images=images,
                   targets=targets)


# ---------------------------------------------------------------------------
# Training

def split_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 80/20 split by a multiplicative hash of the index."""
    idx = np.arange(n, dtype=np.uint64)
    h = (idx * np.uint64(2654435761)) % np.uint64(2 ** 32)
    val = (h % np.uint64(5)) == 0
    return np.nonzero(~val)[0], np.nonzero(val)[0]


@dataclass
class SupervisedResult:
    params: np.ndarray
    spec: NetworkSpec
    curve: list  # per epoch: dict(train_loss, val_loss)
    baseline_val_mse: float


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((pred - target) ** 2))


def _forward_dataset(net, params, images, dtype, batch=128):
    outs = []
    for start in range(0, images.shape[0], batch):
        x = images[start:start + batch].astype(dtype) / dtype(255.0)
        outs.append(net.forward(params, x)["out"])
    return np.concatenate(outs, axis=0)


def supervised_train(spec: NetworkSpec, ds: Dataset, epochs: int, seed: int,
                     learning_rate: float = 1e-3, batch: int = 64,
                     dtype=np.float32, on_epoch=None) -> SupervisedResult:
    """Minibatch MSE with Adam on an 80/20 deterministic split. The
    constant train-mean predictor scored on the validation split is the
    reference every trained model must beat."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    limit_blas_threads()
    if TARGET_DIMS[ds.task] != {
            "regression3": 3, "regression4": 4}.get(spec.heads):
        raise ValueError(f"head {spec.heads} does not fit task {ds.task}")
    net = Network(spec)
    params = net.init_params(seed, dtype=dtype)
    opt = AdamState.for_params(params)
    rng = make_stream(seed, "supervised")
    train_idx, val_idx = split_indices(len(ds))
    targets = ds.targets.astype(dtype)

    train_mean = targets[train_idx].mean(axis=0)
    baseline = mse(np.broadcast_to(train_mean, targets[val_idx].shape),
                   targets[val_idx])

    curve = []
    for epoch in range(1, epochs + 1):
        perm = train_idx[rng.permutation(len(train_idx))]
        train_loss = 0.0
        for start in range(0, len(perm), batch):
            mb = perm[start:start + batch]
            b = len(mb)
            grads = np.zeros_like(params)
            for cstart in range(0, b, CHUNK):
                idx = mb[cstart:cstart + CHUNK]
                x = ds.images[idx].astype(dtype) / dtype(255.0)
                t = targets[idx]
                cache = []
                pred = net.forward(params, x, cache=cache)["out"]
                err = pred - t
                train_loss += float((err ** 2).sum())
                dout = 2.0 * err / (b * t.shape[1])
                grads += net.backward(params, cache, {"out": dout})
            adam_step(params, grads, opt, learning_rate)
        train_loss /= len(perm) * targets.shape[1]
        val_pred = _forward_dataset(net, params, ds.images[val_idx], dtype)
        val_loss = mse(val_pred, targets[val_idx])
        curve.append({"epoch": epoch, "train_loss": train_loss,
                      "val_loss": val_loss})
        if on_epoch is not None:
            on_epoch(epoch, curve[-1])
    return SupervisedResult(params=params, spec=spec, curve=curve,
                            baseline_val_mse=baseline)
