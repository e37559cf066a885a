"""Toy continuous-control environments and the evaluation protocol.

Three environments stand in for heavyweight physics benchmarks:

* ``pendulum``      torque-limited swing-up; quadratic state/action cost.
* ``pointmass``     2-D double integrator steered toward the origin.
* ``noisybandit-K`` single-state task with K-dimensional actions and pure
                    N(0,1) reward noise (every true Q-value is zero), used to
                    expose overestimation in bootstrapped critics.

All episodes end by time limit only; there are no true terminal states, so
training loops store terminal=False and keep bootstrapping through resets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int
    state_low: np.ndarray = None
    state_high: np.ndarray = None

    def __post_init__(self):
        if not np.all(self.action_low < self.action_high):
            raise ValueError("action_low must be componentwise below action_high")


class Environment:
    """Single-threaded environment; owns its RNG.  ``reset(seed)`` reseeds,
    ``reset()`` continues the existing stream (next episode)."""

    spec: EnvSpec

    def __init__(self):
        self.rng = np.random.default_rng()
        self.steps = 0

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.steps = 0
        return self._sample_initial_state()

    def step(self, action):
        a = np.clip(
            np.asarray(action, dtype=np.float64).ravel(),
            self.spec.action_low,
            self.spec.action_high,
        )
        state, reward = self._advance(a)
        self.steps += 1
        done = self.steps >= self.spec.max_episode_steps
        return state, float(reward), done

    def _sample_initial_state(self):
        raise NotImplementedError

    def _advance(self, a):
        raise NotImplementedError


class PendulumEnv(Environment):
    """Torque-limited pendulum swing-up.

    State observation (cos th, sin th, th_dot); torque in [-2, 2]; dt=0.05,
    g=10, m=1, l=1, angular velocity clipped to [-8, 8].  Per-step reward is
    -(wrap(th)^2 + 0.1*th_dot^2 + 0.001*a^2) evaluated at the pre-step state,
    so the upright rest state under zero torque costs exactly 0.
    """

    G = 10.0
    M = 1.0
    L = 1.0
    DT = 0.05
    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0

    def __init__(self):
        super().__init__()
        self.spec = EnvSpec(
            state_dim=3,
            action_dim=1,
            action_low=np.array([-self.MAX_TORQUE]),
            action_high=np.array([self.MAX_TORQUE]),
            max_episode_steps=200,
            state_low=np.array([-1.0, -1.0, -self.MAX_SPEED]),
            state_high=np.array([1.0, 1.0, self.MAX_SPEED]),
        )
        self.th = 0.0
        self.th_dot = 0.0

    def _obs(self):
        return np.array([np.cos(self.th), np.sin(self.th), self.th_dot])

    def _sample_initial_state(self):
        self.th = self.rng.uniform(-np.pi, np.pi)
        self.th_dot = self.rng.uniform(-1.0, 1.0)
        return self._obs()

    def _advance(self, a):
        u = a[0]
        th_wrapped = ((self.th + np.pi) % (2.0 * np.pi)) - np.pi
        cost = th_wrapped**2 + 0.1 * self.th_dot**2 + 0.001 * u**2
        th_acc = 3.0 * self.G / (2.0 * self.L) * np.sin(self.th) + 3.0 / (
            self.M * self.L**2
        ) * u
        self.th_dot = np.clip(self.th_dot + th_acc * self.DT, -self.MAX_SPEED, self.MAX_SPEED)
        self.th = self.th + self.th_dot * self.DT
        return self._obs(), -cost


class PointMassEnv(Environment):
    """2-D double integrator: action is acceleration in [-1,1]^2, cost is
    quadratic in position, velocity and action.  dt=0.1; position and velocity
    are clipped to keep the state box bounded."""

    DT = 0.1
    MAX_V = 2.0
    MAX_P = 5.0

    def __init__(self):
        super().__init__()
        self.spec = EnvSpec(
            state_dim=4,
            action_dim=2,
            action_low=np.array([-1.0, -1.0]),
            action_high=np.array([1.0, 1.0]),
            max_episode_steps=100,
            state_low=np.array([-self.MAX_P, -self.MAX_P, -self.MAX_V, -self.MAX_V]),
            state_high=np.array([self.MAX_P, self.MAX_P, self.MAX_V, self.MAX_V]),
        )
        self.p = np.zeros(2)
        self.v = np.zeros(2)

    def _obs(self):
        return np.concatenate([self.p, self.v])

    def _sample_initial_state(self):
        self.p = self.rng.uniform(-1.0, 1.0, size=2)
        self.v = np.zeros(2)
        return self._obs()

    def _advance(self, a):
        cost = np.sum(self.p**2) + 0.1 * np.sum(self.v**2) + 0.001 * np.sum(a**2)
        self.v = np.clip(self.v + a * self.DT, -self.MAX_V, self.MAX_V)
        self.p = np.clip(self.p + self.v * self.DT, -self.MAX_P, self.MAX_P)
        return self._obs(), -cost


class NoisyBanditEnv(Environment):
    """Single-state environment with K-dimensional actions in [-1,1]^K and
    reward drawn from N(0,1) regardless of the action; episodes last one step.
    Every true Q-value is zero, so any persistent positive critic estimate is
    overestimation."""

    def __init__(self, action_dim=1):
        super().__init__()
        if action_dim < 1:
            raise ValueError("action_dim must be >= 1")
        self.spec = EnvSpec(
            state_dim=1,
            action_dim=action_dim,
            action_low=-np.ones(action_dim),
            action_high=np.ones(action_dim),
            max_episode_steps=1,
            state_low=np.zeros(1),
            state_high=np.zeros(1),
        )

    def _sample_initial_state(self):
        return np.zeros(1)

    def _advance(self, a):
        return np.zeros(1), self.rng.standard_normal()


def make_env(env_id):
    """Build an environment from its string id: "pendulum", "pointmass", or
    "noisybandit-K" with K the action dimension (plain "noisybandit" -> K=1)."""
    if env_id == "pendulum":
        return PendulumEnv()
    if env_id == "pointmass":
        return PointMassEnv()
    if env_id == "noisybandit":
        return NoisyBanditEnv(1)
    if env_id.startswith("noisybandit-"):
        try:
            k = int(env_id.split("-", 1)[1])
        except ValueError:
            raise ValueError(f"bad noisybandit id: {env_id!r}") from None
        return NoisyBanditEnv(k)
    raise ValueError(f"unknown environment id: {env_id!r}")


def evaluate_policy(env, policy, episodes, seed):
    """Average undiscounted return of a deterministic policy.

    Episode i resets the environment with seed+i, then follows
    ``policy(state) -> action`` to the time limit.  Returns (mean, population
    std) over the episode returns.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    returns = np.empty(episodes)
    for i in range(episodes):
        s = env.reset(seed + i)
        total = 0.0
        done = False
        while not done:
            s, r, done = env.step(policy(s))
            total += r
        returns[i] = total
    return float(returns.mean()), float(returns.std())
