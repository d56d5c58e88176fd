"""Clipped-surrogate policy optimization with generalized advantage
estimation, collecting rollouts from several tracking environments stepped
in lockstep. Everything is deterministic for a fixed seed."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import PtzAction
from .envs import EnvConfig, Observation, TrackingEnv
from .nets import (CHUNK, AdamState, Network, NetworkSpec, TRUNK_IMAGE,
                   adam_step, batch_logprob_entropy, clip_grad_norm,
                   limit_blas_threads, log_softmax, sample_actions)
from .scene import make_stream


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch: int = 256
    rollout_per_update: int = 4096
    envs: int = 4
    learning_rate: float = 3e-4
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    grad_norm_clip: float = 0.5
    normalize_advantage: bool = True

    def __post_init__(self):
        if self.rollout_per_update % self.minibatch:
            raise ValueError("minibatch must divide rollout_per_update")
        if self.rollout_per_update % self.envs:
            raise ValueError("envs must divide rollout_per_update")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ValueError("gamma in (0,1], lambda in [0,1]")


def gae_advantages(rewards, values, dones, bootstrap_value, gamma, lam):
    """Exponentially weighted advantages over one env's trajectory.

    dones mask the bootstrap at terminal steps; the trailing segment
    bootstraps with the value of the state after the last step.
    """
    t_len = len(rewards)
    adv = np.zeros(t_len)
    next_value = bootstrap_value
    next_adv = 0.0
    for t in range(t_len - 1, -1, -1):
        cont = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * cont - values[t]
        next_adv = delta + gamma * lam * cont * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv


# ---------------------------------------------------------------------------
# Observation adapters (image pixels vs oracle boxes)

class ImageAdapter:
    """Policy input is the downsampled grayscale frame; storage is the
    byte-quantized image so buffers stay small and lossless."""

    needs_render = True
    store_dtype = np.uint8

    def __init__(self, obs_size: int):
        self.shape = (obs_size, obs_size)

    def extract(self, env: TrackingEnv, obs: Observation):
        return np.rint(obs.image.pixels * 255.0).astype(np.uint8)

    def to_input(self, stored: np.ndarray, dtype) -> np.ndarray:
        return stored.astype(dtype) / dtype(255.0)


class BoxAdapter:
    """Policy input is the oracle clipped box, normalized to [0, 1];
    all zeros when the target is not visible."""

    needs_render = False
    store_dtype = np.float64

    def __init__(self, obs_size: int):
        self.shape = (4,)
        self.obs_size = obs_size

    def extract(self, env: TrackingEnv, obs: Observation):
        vis = env.last_visibility
        if vis is None or not vis.visible:
            return np.zeros(4)
        b = vis.clipped_box
        return np.array([b.xmin, b.ymin, b.xmax, b.ymax]) / self.obs_size

    def to_input(self, stored: np.ndarray, dtype) -> np.ndarray:
        return stored.astype(dtype)


def adapter_for(spec: NetworkSpec, obs_size: int):
    return ImageAdapter(obs_size) if spec.trunk == TRUNK_IMAGE else BoxAdapter(obs_size)


# ---------------------------------------------------------------------------
# Rollout collection

@dataclass
class Rollout:
    inputs: np.ndarray     # (N, ...) stored observations, env-major order
    ci: np.ndarray | None  # (N,) contextual inputs when the spec uses them
    actions: np.ndarray    # (N, 3) head indices
    logprobs: np.ndarray   # (N,)
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    episode_returns: list = field(default_factory=list)  # completed episodes
    episode_steps: list = field(default_factory=list)


class RolloutCollector:
    """Runs K environments in lockstep and assembles fixed-size rollouts
    ordered by environment index, so updates are reproducible regardless
    of how the environments might be scheduled."""

    def __init__(self, env_cfg: EnvConfig, spec: NetworkSpec, ppo: PpoConfig,
                 seed: int, dtype=np.float64):
        self.env_cfg = env_cfg
        self.spec = spec
        self.ppo = ppo
        self.seed = seed
        self.dtype = dtype
        self.net = Network(spec)
        self.adapter = adapter_for(spec, env_cfg.obs_size)
        self.action_rng = make_stream(seed, "ppo-actions")
        self.envs = []
        self.episode_counts = []
        self.current = []       # current stored observation per env
        self.current_ci = []
        self.episode_return = []
        self.episode_len = []
        for k in range(ppo.envs):
            env = TrackingEnv(env_cfg, render_enabled=self.adapter.needs_render)
            obs = env.reset(self._env_seed(k, 0))
            self.envs.append(env)
            self.episode_counts.append(1)
            self.current.append(self.adapter.extract(env, obs))
            self.current_ci.append(0 if obs.ci is None else obs.ci)
            self.episode_return.append(0.0)
            self.episode_len.append(0)
        self.total_episodes = 0

    def _env_seed(self, k: int, episode: int) -> int:
        return self.seed + 100_000 * (k + 1) + episode

    def _policy(self, params, stored, cis):
        x = self.adapter.to_input(np.stack(stored), self.dtype)
        ci = (np.asarray(cis, dtype=self.dtype)
              if self.spec.ci_injection else None)
        out = self.net.forward(params, x, ci)
        return out["logits"], out["value"]

    def collect(self, params: np.ndarray) -> Rollout:
        ppo = self.ppo
        k_envs = ppo.envs
        t_len = ppo.rollout_per_update // k_envs
        shape = (k_envs, t_len) + self.adapter.shape
        inputs = np.zeros(shape, dtype=self.adapter.store_dtype)
        cis = np.zeros((k_envs, t_len), dtype=np.int64)
        actions = np.zeros((k_envs, t_len, 3), dtype=np.int64)
        logprobs = np.zeros((k_envs, t_len))
        rewards = np.zeros((k_envs, t_len))
        values = np.zeros((k_envs, t_len))
        dones = np.zeros((k_envs, t_len), dtype=bool)
        episode_returns = []
        episode_steps = []

        for t in range(t_len):
            logits, value = self._policy(params, self.current, self.current_ci)
            act_idx = sample_actions(logits, self.action_rng)
            logp, _ = batch_logprob_entropy(logits, act_idx)
            for k, env in enumerate(self.envs):
                inputs[k, t] = self.current[k]
                cis[k, t] = self.current_ci[k]
                actions[k, t] = act_idx[k]
                logprobs[k, t] = logp[k]
                values[k, t] = value[k]
                action = PtzAction.from_indices(*(int(i) for i in act_idx[k]))
                result = env.step(action)
                rewards[k, t] = result.reward
                dones[k, t] = result.done
                self.episode_return[k] += result.reward
                self.episode_len[k] += 1
                if result.done:
                    episode_returns.append(self.episode_return[k])
                    episode_steps.append(self.episode_len[k])
                    self.total_episodes += 1
                    self.episode_return[k] = 0.0
                    self.episode_len[k] = 0
                    obs = env.reset(self._env_seed(k, self.episode_counts[k]))
                    self.episode_counts[k] += 1
                    self.current[k] = self.adapter.extract(env, obs)
                    self.current_ci[k] = 0 if obs.ci is None else obs.ci
                else:
                    self.current[k] = self.adapter.extract(env, result.obs)

        _, bootstrap = self._policy(params, self.current, self.current_ci)
        advantages = np.zeros((k_envs, t_len))
        for k in range(k_envs):
            advantages[k] = gae_advantages(rewards[k], values[k], dones[k],
                                           float(bootstrap[k]),
                                           ppo.gamma, ppo.gae_lambda)
        returns = advantages + values

        def flat(a):
            return a.reshape((-1,) + a.shape[2:])

        return Rollout(
            inputs=flat(inputs),
            ci=flat(cis) if self.spec.ci_injection else None,
            actions=flat(actions), logprobs=flat(logprobs),
            rewards=flat(rewards), values=flat(values), dones=flat(dones),
            advantages=flat(advantages), returns=flat(returns),
            episode_returns=episode_returns, episode_steps=episode_steps)


# ---------------------------------------------------------------------------
# The update

@dataclass
class UpdateDiagnostics:
    policy_loss: float
    value_loss: float
    entropy: float
    mean_ratio: float
    clip_fraction: float
    grad_norm: float


def ppo_update(net: Network, params: np.ndarray, opt: AdamState,
               cfg: PpoConfig, rollout: Rollout, adapter,
               shuffle_rng: np.random.Generator,
               dtype=np.float64) -> UpdateDiagnostics:
    """Run the clipped-surrogate epochs over one rollout, updating params
    in place. Advantages are normalized once per update."""
    n = rollout.inputs.shape[0]
    adv = rollout.advantages.copy()
    if cfg.normalize_advantage:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    stats = np.zeros(6)
    batches = 0
    for _ in range(cfg.epochs):
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = perm[start:start + cfg.minibatch]
            diag = _minibatch_step(net, params, opt, cfg, rollout, adapter,
                                   adv, mb, dtype)
            stats += diag
            batches += 1
    stats /= batches
    return UpdateDiagnostics(policy_loss=float(stats[0]),
                             value_loss=float(stats[1]),
                             entropy=float(stats[2]),
                             mean_ratio=float(stats[3]),
                             clip_fraction=float(stats[4]),
                             grad_norm=float(stats[5]))


def _minibatch_step(net, params, opt, cfg, rollout, adapter, adv, mb, dtype):
    b = len(mb)
    grads = np.zeros_like(params)
    pg_sum = v_sum = ent_sum = ratio_sum = clip_sum = 0.0
    for start in range(0, b, CHUNK):
        idx = mb[start:start + CHUNK]
        x = adapter.to_input(rollout.inputs[idx], dtype)
        ci = (rollout.ci[idx].astype(dtype)
              if rollout.ci is not None and net.spec.ci_injection else None)
        cache = []
        out = net.forward(params, x, ci, cache=cache)
        logits = out["logits"]
        value = out["value"]

        a_idx = rollout.actions[idx]
        logp_new, entropy = batch_logprob_entropy(logits, a_idx)
        ratio = np.exp(logp_new - rollout.logprobs[idx])
        a = adv[idx]
        unclipped = ratio * a
        clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a
        pg_per = np.minimum(unclipped, clipped)
        verr = value - rollout.returns[idx]

        pg_sum += -pg_per.sum()
        v_sum += cfg.value_coef * (verr ** 2).sum()
        ent_sum += entropy.sum()
        ratio_sum += ratio.sum()
        clip_sum += (np.abs(ratio - 1.0) > cfg.clip_eps).sum()

        # analytic gradients of the minibatch-mean loss w.r.t. the heads
        active = unclipped <= clipped  # gradient flows when unclipped wins
        coeff = np.where(active, -a * ratio, 0.0) / b
        logp = log_softmax(logits, axis=2)
        p = np.exp(logp)
        onehot = np.zeros_like(p)
        rows = np.arange(len(idx))[:, None]
        heads = np.arange(3)[None, :]
        onehot[rows, heads, a_idx] = 1.0
        dlogits = coeff[:, None, None] * (onehot - p)
        # entropy bonus: d(-c_ent * H)/dz = c_ent * p * (logp + H)
        ent_h = -(p * logp).sum(axis=2, keepdims=True)
        dlogits += cfg.entropy_coef / b * p * (logp + ent_h)
        dvalue = 2.0 * cfg.value_coef * verr / b

        grads += net.backward(params, cache,
                              {"logits": dlogits, "value": dvalue})

    norm = clip_grad_norm(grads, cfg.grad_norm_clip)
    adam_step(params, grads, opt, cfg.learning_rate)
    return np.array([pg_sum / b, v_sum / b, ent_sum / b, ratio_sum / b,
                     clip_sum / b, norm])


# ---------------------------------------------------------------------------
# Training driver

@dataclass
class TrainResult:
    params: np.ndarray
    spec: NetworkSpec
    curve: list          # per update: dict of diagnostics
    episodes: list       # per completed episode: dict


def train_ppo(env_cfg: EnvConfig, spec: NetworkSpec, ppo_cfg: PpoConfig,
              updates: int, seed: int, dtype=np.float32,
              on_update=None) -> TrainResult:
    """Full training loop; on_update(update_index, result_so_far) can save
    checkpoints or print progress."""
    limit_blas_threads()
    net = Network(spec)
    params = net.init_params(seed, dtype=dtype)
    opt = AdamState.for_params(params)
    collector = RolloutCollector(env_cfg, spec, ppo_cfg, seed, dtype=dtype)
    shuffle_rng = make_stream(seed, "ppo-shuffle")
    curve = []
    episodes = []
    result = TrainResult(params=params, spec=spec, curve=curve,
                         episodes=episodes)
    for update in range(1, updates + 1):
        rollout = collector.collect(params)
        diag = ppo_update(net, params, opt, ppo_cfg, rollout,
                          collector.adapter, shuffle_rng, dtype)
        for ret, steps in zip(rollout.episode_returns, rollout.episode_steps):
            episodes.append({"episode": len(episodes) + 1, "update": update,
                             "episode_return": ret, "steps": steps})
        mean_ret = (float(np.mean(rollout.episode_returns))
                    if rollout.episode_returns else float("nan"))
        curve.append({
            "update": update,
            "steps": update * ppo_cfg.rollout_per_update,
            "mean_episode_return": mean_ret,
            "mean_step_reward": float(rollout.rewards.mean()),
            "policy_loss": diag.policy_loss,
            "value_loss": diag.value_loss,
            "entropy": diag.entropy,
            "mean_ratio": diag.mean_ratio,
            "clip_fraction": diag.clip_fraction,
            "grad_norm": diag.grad_norm,
        })
        if on_update is not None:
            on_update(update, result)
    return result
