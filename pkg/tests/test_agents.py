import numpy as np
import pytest

from moderl.agents import (
    critic_mse_loss_grads,
    default_agent_config,
    make_agent,
)
from moderl.envs import make_env
from moderl.nets import MLP, Adam
from moderl.replay import Batch, Transition


def tiny_config(algorithm, env, **overrides):
    base = dict(hidden=(16, 16), batch_size=8, buffer_capacity=500)
    base.update(overrides)
    return default_agent_config(algorithm, env.spec, **base)


def drive(agent, env, steps, seed):
    """Collect with the agent's exploration policy and train every step."""
    s = env.reset(seed)
    for _ in range(steps):
        a = agent.act_explore(s)
        s_next, r, done = env.step(a)
        timeout = env.steps >= env.spec.max_episode_steps
        agent.train_step(
            Transition(
                s=np.asarray(s, dtype=np.float32),
                a=np.asarray(a, dtype=np.float32),
                r=r,
                s_next=np.asarray(s_next, dtype=np.float32),
                terminal=done and not timeout,
            )
        )
        s = env.reset() if done else s_next


def random_batch(rng, state_dim, action_dim, b=8):
    return Batch(
        s=rng.normal(size=(b, state_dim)).astype(np.float32),
        a=rng.uniform(-1, 1, size=(b, action_dim)).astype(np.float32),
        r=rng.normal(size=b).astype(np.float32),
        s_next=rng.normal(size=(b, state_dim)).astype(np.float32),
        terminal=np.zeros(b, dtype=np.float32),
    )


def all_params(agent):
    nets = agent._net_registry()
    return {name: [p.copy() for p in net.params] for name, net in nets.items()}


def params_equal(a, b):
    return all(
        np.array_equal(pa, pb) for name in a for pa, pb in zip(a[name], b[name])
    )


class TestActExplore:
    def test_zero_noise_is_exact_policy_action(self):
        env = make_env("pendulum")
        agent = make_agent(tiny_config("ddpg", env, exploration_noise=0.0), 0)
        s = env.reset(0)
        np.testing.assert_array_equal(agent.act_explore(s), agent.act_eval(s))

    def test_noise_std_monte_carlo(self):
        # Zeroed actor keeps the mean action at 0, so the pre-clip noise is
        # directly observable; 1e5 draws pin the std to 0.1 +- 0.005.
        env = make_env("pendulum")
        agent = make_agent(tiny_config("ddpg", env), 0)
        agent.actor.net.weights[-1][...] = 0.0
        agent.actor.net.biases[-1][...] = 0.0
        s = env.reset(0)
        draws = np.array([agent.act_explore(s)[0] for _ in range(100_000)])
        assert abs(draws.std() - 0.1) < 0.005
        assert abs(draws.mean()) < 0.005

    def test_actions_respect_bounds(self):
        env = make_env("pendulum")
        for algo in ("td3", "sac-minq", "tqc"):
            agent = make_agent(tiny_config(algo, env, exploration_noise=3.0), 1)
            s = env.reset(0)
            for _ in range(200):
                a = agent.act_explore(s)
                assert np.all(a >= env.spec.action_low - 1e-7)
                assert np.all(a <= env.spec.action_high + 1e-7)


class TestCriticUpdate:
    def test_self_consistent_targets_give_zero_loss_and_no_change(self, rng):
        env = make_env("pendulum")
        agent = make_agent(tiny_config("ddpg", env), 0)
        batch = random_batch(rng, 3, 1)
        # terminal transitions with r = Q(s,a) make y equal the current output
        batch.terminal[...] = 1.0
        batch.r = agent.critics[0].forward(
            np.concatenate([batch.s, batch.a], axis=1)
        )[:, 0].copy()
        before = all_params(agent)
        loss = agent.critic_update(batch)
        assert loss == 0.0
        assert params_equal(before, all_params(agent))

    def test_constant_target_regression_converges(self, rng):
        # Scalar critic regressed to a constant 2.0 on a frozen batch reaches
        # the target within 1e-2 in at most 5000 steps.
        net = MLP([4, 16, 16, 1], rng=np.random.default_rng(0), dtype=np.float64)
        opt = Adam(net.params, lr=1e-3)
        s = rng.normal(size=(8, 3))
        a = rng.uniform(-1, 1, size=(8, 1))
        y = np.full(8, 2.0)
        for step in range(5000):
            _, grads = critic_mse_loss_grads(net, s, a, y)
            opt.step(net.params, grads)
        q = net.forward(np.concatenate([s, a], axis=1))[:, 0]
        assert np.max(np.abs(q - 2.0)) < 1e-2


class TestActorUpdate:
    def test_loss_equals_negative_mean_q(self, rng):
        env = make_env("pendulum")
        agent = make_agent(tiny_config("mpg", env), 2)
        batch = random_batch(rng, 3, 1)
        loss, _ = agent.actor_loss_grads(batch)
        a = agent.actor.action(batch.s)
        q = agent.critics[0].forward(np.concatenate([batch.s, a], axis=1))[:, 0]
        assert loss == pytest.approx(-float(np.mean(q)))

    def test_action_independent_critic_gives_zero_gradient(self, rng):
        env = make_env("pendulum")
        agent = make_agent(tiny_config("ddpg", env), 3)
        # cut the action inputs out of the critic's first layer
        agent.critics[0].weights[0][3:, :] = 0.0
        batch = random_batch(rng, 3, 1)
        _, grads = agent.actor_loss_grads(batch)
        assert all(np.all(g == 0.0) for g in grads)

    def test_entropy_loss_at_zero_alpha_is_negative_q(self, rng):
        env = make_env("pendulum")
        agent = make_agent(tiny_config("mac", env), 4)
        agent.log_alpha[0] = -1000.0  # alpha underflows to exactly 0
        batch = random_batch(rng, 3, 1)
        eps = rng.normal(size=(8, 1)).astype(np.float32)
        loss, _, _ = agent.actor_loss_grads(batch, eps)
        a, _, _ = agent.actor.sample_with_eps(batch.s, eps)
        q = agent.critics[0].forward(np.concatenate([batch.s, a], axis=1))[:, 0]
        assert loss == pytest.approx(-float(np.mean(q)), rel=1e-6)


class TestTemperature:
    def test_zero_gradient_at_target_entropy(self):
        env = make_env("pointmass")
        agent = make_agent(tiny_config("sac-minq", env), 0)
        log_pi = np.full(32, -agent.target_entropy)
        assert agent.temperature_grad(log_pi) == 0.0

    def test_alpha_increases_when_entropy_below_target(self):
        env = make_env("pointmass")
        agent = make_agent(tiny_config("sac-minq", env), 0)
        alpha_before = agent.alpha
        log_pi = np.full(32, -agent.target_entropy + 5.0)  # too little entropy
        for _ in range(10):
            agent._apply_temperature(log_pi)
        assert agent.alpha > alpha_before

    def test_alpha_stays_positive(self, rng):
        env = make_env("pointmass")
        agent = make_agent(tiny_config("mac", env), 0)
        for _ in range(2000):
            agent._apply_temperature(rng.normal(size=8) * 10.0)
            assert agent.alpha > 0.0


class TestTrainStepSchedule:
    def test_delayed_actor_updates_only_on_multiples(self):
        env = make_env("noisybandit")
        agent = make_agent(tiny_config("mpg-sd", env, policy_delay=2, batch_size=4), 0)
        s = env.reset(0)
        actor_before = [p.copy() for p in agent.actor.params]
        changes = []
        for step in range(12):
            a = agent.act_explore(s)
            s2, r, done = env.step(a)
            agent.train_step(Transition(np.float32(s), np.float32(a), r, np.float32(s2), False))
            s = env.reset() if done else s2
            changed = not all(
                np.array_equal(p, q) for p, q in zip(actor_before, agent.actor.params)
            )
            changes.append((agent.u, changed))
            actor_before = [p.copy() for p in agent.actor.params]
        for u, changed in changes:
            if u == 0:
                assert not changed  # still collecting
            else:
                assert changed == (u % 2 == 0)

    def test_target_nets_move_only_with_soft_update(self):
        env = make_env("noisybandit")
        eta = 0.005
        agent = make_agent(tiny_config("td3", env, batch_size=4, eta=eta), 1)
        s = env.reset(0)
        for step in range(10):
            tgt_before = [p.copy() for p in agent.critic_targets[0].params]
            src_before = [p.copy() for p in agent.critics[0].params]
            a = agent.act_explore(s)
            s2, r, done = env.step(a)
            agent.train_step(Transition(np.float32(s), np.float32(a), r, np.float32(s2), False))
            s = env.reset() if done else s2
            if agent.u == 0 or agent.u % 2 != 0:
                for before, after in zip(tgt_before, agent.critic_targets[0].params):
                    np.testing.assert_array_equal(before, after)
            else:
                # exact soft-update blend against the post-step source
                for tb, after, src in zip(
                    tgt_before, agent.critic_targets[0].params, agent.critics[0].params
                ):
                    expected = tb * np.float32(1.0 - eta) + np.asarray(eta * src, dtype=np.float32)
                    np.testing.assert_allclose(after, expected, rtol=1e-6, atol=1e-7)


class TestGradientIsolation:
    def test_each_update_touches_only_its_nets(self, rng):
        env = make_env("pendulum")
        agent = make_agent(tiny_config("mpg", env), 5)
        batch = random_batch(rng, 3, 1)

        before = all_params(agent)
        agent.critic_update(batch)
        after = all_params(agent)
        assert not params_equal({"critic0": before["critic0"]}, {"critic0": after["critic0"]})
        for name in ("actor", "actor_target", "critic0_target", "protester"):
            assert params_equal({name: before[name]}, {name: after[name]})

        before = all_params(agent)
        agent.protester_update(batch)
        after = all_params(agent)
        assert not params_equal({"protester": before["protester"]}, {"protester": after["protester"]})
        for name in ("actor", "actor_target", "critic0", "critic0_target"):
            assert params_equal({name: before[name]}, {name: after[name]})

        before = all_params(agent)
        agent.actor_update(batch)
        after = all_params(agent)
        assert not params_equal({"actor": before["actor"]}, {"actor": after["actor"]})
        for name in ("critic0", "critic0_target", "actor_target", "protester"):
            assert params_equal({name: before[name]}, {name: after[name]})


class TestReductionIdentities:
    def test_mpg_equals_mpg_sd_with_unit_delay_no_smoothing(self):
        env_a, env_b = make_env("noisybandit"), make_env("noisybandit")
        cfg_a = tiny_config("mpg", env_a)
        cfg_b = tiny_config("mpg-sd", env_b, policy_delay=1, target_noise=0.0)
        agent_a = make_agent(cfg_a, 7)
        agent_b = make_agent(cfg_b, 7)
        drive(agent_a, env_a, 120, seed=7)
        drive(agent_b, env_b, 120, seed=7)
        pa, pb = all_params(agent_a), all_params(agent_b)
        assert set(pa) == set(pb)
        assert params_equal(pa, pb)

    def test_ddpg_and_mpg_omega_zero_share_critic_targets(self):
        env_a, env_b = make_env("noisybandit"), make_env("noisybandit")
        agent_a = make_agent(tiny_config("ddpg", env_a), 11)
        agent_b = make_agent(tiny_config("mpg", env_b, omega=0.0), 11)
        s_a, s_b = env_a.reset(11), env_b.reset(11)
        for _ in range(120):
            a_a, a_b = agent_a.act_explore(s_a), agent_b.act_explore(s_b)
            np.testing.assert_array_equal(a_a, a_b)
            s2a, ra, da = env_a.step(a_a)
            s2b, rb, db = env_b.step(a_b)
            agent_a.train_step(Transition(np.float32(s_a), np.float32(a_a), ra, np.float32(s2a), False))
            agent_b.train_step(Transition(np.float32(s_b), np.float32(a_b), rb, np.float32(s2b), False))
            if agent_a.last_targets is not None:
                np.testing.assert_array_equal(agent_a.last_targets, agent_b.last_targets)
            s_a = env_a.reset() if da else s2a
            s_b = env_b.reset() if db else s2b

    def test_tqc_and_mqc_omega_zero_share_target_atoms(self):
        env_a, env_b = make_env("noisybandit"), make_env("noisybandit")
        cfg_kw = dict(n_atoms=5, atoms_kept=4, batch_size=8)
        agent_a = make_agent(tiny_config("tqc", env_a, **cfg_kw), 13)
        agent_b = make_agent(tiny_config("mqc", env_b, omega=0.0, **cfg_kw), 13)
        drive(agent_a, env_a, 60, seed=13)
        drive(agent_b, env_b, 60, seed=13)
        assert agent_a.last_targets is not None
        np.testing.assert_array_equal(agent_a.last_targets, agent_b.last_targets)


class TestMeasureTargetQ:
    def test_zeroed_target_critics_measure_zero(self):
        env = make_env("pendulum")
        agent = make_agent(tiny_config("ddpg-minq", env), 0)
        for tgt in agent.critic_targets:
            tgt.weights[-1][...] = 0.0
            tgt.biases[-1][...] = 0.0
        probe = np.stack([env.reset(i) for i in range(4)])
        assert agent.measure_target_q(probe) == 0.0

    def test_identical_agents_identical_measure(self):
        env = make_env("pendulum")
        probe = np.stack([env.reset(i) for i in range(4)])
        values = [
            make_agent(tiny_config("mqc", env, n_atoms=5, atoms_kept=4), 21).measure_target_q(probe)
            for _ in range(2)
        ]
        assert values[0] == values[1]


class TestCheckpoints:
    def test_round_trip_restores_parameters(self, tmp_path):
        env = make_env("pointmass")
        cfg = tiny_config("mac", env)
        agent = make_agent(cfg, 3)
        drive(agent, env, 30, seed=3)
        agent.save_checkpoint(tmp_path / "ckpt")
        reference = all_params(agent)
        fresh = make_agent(cfg, 999)
        assert not params_equal(reference, all_params(fresh))
        fresh.load_checkpoint(tmp_path / "ckpt")
        restored = all_params(fresh)
        for name in reference:
            for a, b in zip(reference[name], restored[name]):
                np.testing.assert_array_equal(a, b)

    def test_mismatched_config_rejected(self, tmp_path):
        env = make_env("pointmass")
        agent = make_agent(tiny_config("mac", env), 3)
        agent.save_checkpoint(tmp_path / "ckpt")
        other = make_agent(tiny_config("mac", env, omega=0.31), 3)
        with pytest.raises(ValueError, match="hash"):
            other.load_checkpoint(tmp_path / "ckpt")
        different_algo = make_agent(tiny_config("sac-minq", env), 3)
        with pytest.raises(ValueError):
            different_algo.load_checkpoint(tmp_path / "ckpt")


class TestConfigValidation:
    def test_admissible_ranges_enforced(self):
        env = make_env("pendulum")
        good = tiny_config("mpg", env)
        for field, bad in (
            ("gamma", 1.0),
            ("eta", 0.0),
            ("omega", 1.2),
            ("tau", 0.5),
            ("policy_delay", 0),
            ("actor_lr", -1.0),
        ):
            with pytest.raises(ValueError):
                default_agent_config("mpg", env.spec, **{field: bad})
        assert good.omega == 0.2 and good.tau == 0.01

    def test_unknown_algorithm_rejected(self):
        env = make_env("pendulum")
        with pytest.raises(ValueError):
            default_agent_config("ppo", env.spec)

    def test_quantile_truncation_bounds(self):
        env = make_env("pendulum")
        with pytest.raises(ValueError):
            default_agent_config("tqc", env.spec, n_atoms=5, atoms_kept=6)
