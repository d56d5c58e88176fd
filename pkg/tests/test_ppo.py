import numpy as np
import pytest

from ptztrack.envs import make_env_config
from ptztrack.nets import (AdamState, Network, NetworkSpec,
                           batch_logprob_entropy, sample_actions, softmax)
from ptztrack.ppo import (BoxAdapter, PpoConfig, Rollout, RolloutCollector,
                          gae_advantages, ppo_update, train_ppo)
from ptztrack.scene import make_stream

BBOX_SPEC = NetworkSpec(trunk="bbox_mlp")


class TestGae:
    def test_one_step_td_when_lambda_zero(self):
        rewards = np.array([1.0, 2.0, 3.0])
        values = np.array([0.5, 1.5, 2.5])
        dones = np.array([False, False, False])
        adv = gae_advantages(rewards, values, dones, bootstrap_value=4.0,
                             gamma=1.0, lam=0.0)
        # advantage_t = r_t + V(s_{t+1}) - V(s_t)
        assert adv == pytest.approx([1.0 + 1.5 - 0.5, 2.0 + 2.5 - 1.5,
                                     3.0 + 4.0 - 2.5])

    def test_terminal_masks_bootstrap(self):
        adv = gae_advantages(np.array([1.0]), np.array([0.0]),
                             np.array([True]), bootstrap_value=100.0,
                             gamma=0.99, lam=0.95)
        assert adv[0] == pytest.approx(1.0)

    def test_full_gae_recursion(self):
        rng = np.random.default_rng(0)
        n = 50
        rewards = rng.normal(size=n)
        values = rng.normal(size=n)
        dones = rng.random(n) < 0.1
        boot = 0.7
        gamma, lam = 0.99, 0.95
        adv = gae_advantages(rewards, values, dones, boot, gamma, lam)
        # brute-force forward expansion
        vnext = np.append(values[1:], boot)
        deltas = rewards + gamma * vnext * (~dones) - values
        expected = np.zeros(n)
        for t in range(n):
            acc = 0.0
            w = 1.0
            for k in range(t, n):
                acc += w * deltas[k]
                if dones[k]:
                    break
                w *= gamma * lam
            expected[t] = acc
        assert adv == pytest.approx(expected, abs=1e-10)


def make_bandit_rollout(net, params, rng, n=256, target_action=2):
    """One-step bandit: +1 whenever the pan head picks target_action."""
    x = np.zeros((n, 4))
    out = net.forward(params, x)
    actions = sample_actions(np.repeat(out["logits"], n, axis=0)[:n], rng)
    logp, _ = batch_logprob_entropy(
        np.repeat(out["logits"], n, axis=0)[:n], actions)
    rewards = (actions[:, 0] == target_action).astype(float)
    values = np.repeat(out["value"], n)[:n]
    dones = np.ones(n, dtype=bool)
    adv = rewards - values  # gamma irrelevant: every episode is one step
    return Rollout(inputs=x, ci=None, actions=actions, logprobs=logp,
                   rewards=rewards, values=values, dones=dones,
                   advantages=adv, returns=rewards.copy())


class TestPpoUpdate:
    def test_zero_advantage_zero_coefs_is_noop(self):
        net = Network(BBOX_SPEC)
        params = net.init_params(0)
        before = params.copy()
        opt = AdamState.for_params(params)
        cfg = PpoConfig(envs=1, rollout_per_update=256, minibatch=256,
                        epochs=2, value_coef=0.0, entropy_coef=0.0)
        rng = make_stream(0, "bandit")
        rollout = make_bandit_rollout(net, params, rng)
        rollout.advantages[:] = 0.0
        ppo_update(net, params, opt, cfg, rollout, BoxAdapter(120),
                   make_stream(0, "shuffle"))
        assert np.array_equal(params, before)

    def test_ratio_one_first_epoch(self):
        net = Network(BBOX_SPEC)
        params = net.init_params(1)
        opt = AdamState.for_params(params)
        cfg = PpoConfig(envs=1, rollout_per_update=256, minibatch=256,
                        epochs=1, learning_rate=0.0)
        rng = make_stream(1, "bandit")
        rollout = make_bandit_rollout(net, params, rng)
        diag = ppo_update(net, params, opt, cfg, rollout, BoxAdapter(120),
                          make_stream(1, "shuffle"))
        assert diag.mean_ratio == pytest.approx(1.0, abs=1e-9)
        assert diag.clip_fraction == 0.0

    def test_bandit_policy_improvement(self):
        net = Network(BBOX_SPEC)
        params = net.init_params(2)
        opt = AdamState.for_params(params)
        cfg = PpoConfig(envs=1, rollout_per_update=256, minibatch=256,
                        epochs=4, learning_rate=3e-4)
        rng = make_stream(2, "bandit")
        shuffle = make_stream(2, "shuffle")

        def prob_target():
            out = net.forward(params, np.zeros((1, 4)))
            return softmax(out["logits"], axis=2)[0, 0, 2]

        p0 = prob_target()
        for _ in range(20):
            rollout = make_bandit_rollout(net, params, rng)
            ppo_update(net, params, opt, cfg, rollout, BoxAdapter(120),
                       shuffle)
        assert prob_target() > p0

    def test_update_deterministic(self):
        results = []
        for _ in range(2):
            net = Network(BBOX_SPEC)
            params = net.init_params(3)
            opt = AdamState.for_params(params)
            cfg = PpoConfig(envs=1, rollout_per_update=256, minibatch=128,
                            epochs=2)
            rng = make_stream(3, "bandit")
            rollout = make_bandit_rollout(net, params, rng)
            ppo_update(net, params, opt, cfg, rollout, BoxAdapter(120),
                       make_stream(3, "shuffle"))
            results.append(params.copy())
        assert np.array_equal(results[0], results[1])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PpoConfig(rollout_per_update=100, minibatch=256)
        with pytest.raises(ValueError):
            PpoConfig(envs=3, rollout_per_update=256)


class TestCollector:
    def test_collects_fixed_size_ordered_rollouts(self):
        env_cfg = make_env_config("sc0_static", episode_len=30,
                                  training_mode=True)
        ppo_cfg = PpoConfig(envs=2, rollout_per_update=128, minibatch=64)
        collector = RolloutCollector(env_cfg, BBOX_SPEC, ppo_cfg, seed=5)
        net = Network(BBOX_SPEC)
        params = net.init_params(5)
        rollout = collector.collect(params)
        assert rollout.inputs.shape == (128, 4)
        assert rollout.actions.shape == (128, 3)
        # episodes of 30 steps complete inside a 64-step-per-env rollout
        assert len(rollout.episode_returns) >= 2
        assert rollout.dones.sum() >= 2

    def test_collection_deterministic(self):
        env_cfg = make_env_config("sc0_static", episode_len=25,
                                  training_mode=True)
        ppo_cfg = PpoConfig(envs=2, rollout_per_update=64, minibatch=32)
        outs = []
        for _ in range(2):
            collector = RolloutCollector(env_cfg, BBOX_SPEC, ppo_cfg, seed=8)
            params = Network(BBOX_SPEC).init_params(8)
            r = collector.collect(params)
            outs.append((r.inputs.copy(), r.actions.copy(),
                         r.rewards.copy(), r.advantages.copy()))
        for a, b in zip(outs[0], outs[1]):
            assert np.array_equal(a, b)


class TestTrainLoop:
    def test_smoke_and_determinism(self):
        env_cfg = make_env_config("sc0_static", episode_len=25,
                                  training_mode=True)
        ppo_cfg = PpoConfig(envs=2, rollout_per_update=64, minibatch=32,
                            epochs=2)
        curves = []
        for _ in range(2):
            result = train_ppo(env_cfg, BBOX_SPEC, ppo_cfg, updates=2,
                               seed=4, dtype=np.float64)
            curves.append(result.curve)
            assert len(result.curve) == 2
            assert result.episodes
        assert curves[0] == curves[1]
