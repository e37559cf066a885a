"""Training-step logic for the nine agents.

Three families share the machinery:

* deterministic policy family: ddpg, ddpg-minq, mpg, td3, mpg-sd.  One code
  path computes the bootstrapped target (min over two critics when present,
  moderated by the lower-expectile value net when present, target action
  perturbed by clipped smoothing noise), so the documented reductions between
  the variants hold exactly: mpg is mpg-sd with delay 1 and zero smoothing,
  ddpg is the single-critic path with omega pinned to 0.
* entropy-regularized family: sac-minq, mac.  Stochastic squashed-Gaussian
  actor; temperature optionally auto-tuned toward a -action_dim entropy
  target.  mac swaps the second critic for the lower-expectile value net and
  moderates the target with weight omega.
* quantile-critic family: tqc, mqc.  N critics emit M atoms each; targets
  pool, sort and truncate the atoms; critics train on the asymmetric Huber
  quantile loss.  mqc moderates every kept atom with the value net.

Per update: critic (and value-net) regressions happen every step; the actor
and the target networks move every ``policy_delay`` steps for the
deterministic family and every step otherwise.  The entropy and quantile
families compute all of a step's gradients from pre-step parameters, then
apply all optimizer steps together.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, asdict

import numpy as np

from .expectile import protester_loss_grads, min_atom_values
from .nets import MLP, Adam, soft_update, save_net, load_net
from .policies import DeterministicActor, SquashedGaussianActor
from .replay import ReplayBuffer, Transition
from .targets import clipped_noise

DETERMINISTIC_ALGOS = ("ddpg", "ddpg-minq", "mpg", "td3", "mpg-sd")
ENTROPY_ALGOS = ("sac-minq", "mac")
QUANTILE_ALGOS = ("tqc", "mqc")
ALGORITHMS = DETERMINISTIC_ALGOS + ENTROPY_ALGOS + QUANTILE_ALGOS

# Per-algorithm defaults (network widths, learning rates, update cadence,
# moderation weights).  Overridable per run.
_ALGO_DEFAULTS = {
    "ddpg": dict(hidden=(400, 300), lr=1e-3, n_critics=1, protester=False, omega=0.0,
                 policy_delay=1, target_noise=0.0),
    "ddpg-minq": dict(hidden=(400, 300), lr=1e-3, n_critics=2, protester=False, omega=0.0,
                      policy_delay=1, target_noise=0.0),
    "mpg": dict(hidden=(400, 300), lr=1e-3, n_critics=1, protester=True, omega=0.2,
                policy_delay=1, target_noise=0.0),
    "td3": dict(hidden=(400, 300), lr=1e-3, n_critics=2, protester=False, omega=0.0,
                policy_delay=2, target_noise=0.2),
    "mpg-sd": dict(hidden=(400, 300), lr=1e-3, n_critics=1, protester=True, omega=0.2,
                   policy_delay=2, target_noise=0.2),
    "sac-minq": dict(hidden=(256, 256), lr=3e-4, n_critics=2, protester=False, omega=0.0,
                     policy_delay=1, target_noise=0.0),
    "mac": dict(hidden=(256, 256), lr=3e-4, n_critics=1, protester=True, omega=0.13,
                policy_delay=1, target_noise=0.0),
    "tqc": dict(hidden=(256, 256), lr=3e-4, n_critics=2, protester=False, omega=0.0,
                policy_delay=1, target_noise=0.0),
    "mqc": dict(hidden=(256, 256), lr=3e-4, n_critics=2, protester=True, omega=0.01,
                policy_delay=1, target_noise=0.0),
}


@dataclass
class AgentConfig:
    algorithm: str
    state_dim: int
    action_dim: int
    action_low: tuple
    action_high: tuple
    hidden: tuple = (256, 256)
    gamma: float = 0.99
    eta: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    value_lr: float = 3e-4
    batch_size: int = 256
    buffer_capacity: int = 100_000
    n_critics: int = 2
    use_protester: bool = False
    omega: float = 0.0
    tau: float = 0.01
    exploration_noise: float = 0.1
    target_noise: float = 0.0
    target_noise_clip: float = 0.5
    policy_delay: int = 1
    alpha: float = 1.0
    alpha_autotune: bool = True
    n_atoms: int = 25
    atoms_kept: int = 23

    def __post_init__(self):
        self.action_low = tuple(float(x) for x in np.atleast_1d(self.action_low))
        self.action_high = tuple(float(x) for x in np.atleast_1d(self.action_high))
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0,1), got {self.gamma}")
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must be in (0,1), got {self.eta}")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must be in [0,1], got {self.omega}")
        if self.use_protester and not 0.0 < self.tau < 0.5:
            raise ValueError(f"tau must be in (0, 0.5), got {self.tau}")
        for name in ("actor_lr", "critic_lr", "value_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.algorithm in QUANTILE_ALGOS and not 1 <= self.atoms_kept <= self.n_atoms:
            raise ValueError(
                f"atoms_kept must be in [1, {self.n_atoms}], got {self.atoms_kept}"
            )
        if self.algorithm not in QUANTILE_ALGOS and self.n_critics not in (1, 2):
            raise ValueError(f"n_critics must be 1 or 2, got {self.n_critics}")
        if not (len(self.action_low) == len(self.action_high) == self.action_dim):
            raise ValueError("action bounds must match action_dim")

    def config_hash(self):
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def default_agent_config(algorithm, env_spec, **overrides):
    """Table-driven per-algorithm defaults bound to an environment's spec."""
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    d = _ALGO_DEFAULTS[algorithm]
    base = dict(
        algorithm=algorithm,
        state_dim=env_spec.state_dim,
        action_dim=env_spec.action_dim,
        action_low=tuple(env_spec.action_low),
        action_high=tuple(env_spec.action_high),
        hidden=d["hidden"],
        actor_lr=d["lr"],
        critic_lr=d["lr"],
        value_lr=d["lr"],
        n_critics=d["n_critics"],
        use_protester=d["protester"],
        omega=d["omega"],
        policy_delay=d["policy_delay"],
        target_noise=d["target_noise"],
    )
    base.update(overrides)
    return AgentConfig(**base)


def _child_rngs(seed, n=8):
    """Fixed role-indexed RNG streams so that algorithm variants which skip a
    component still draw identical streams for the components they share."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.default_rng(c) for c in children]


class _BaseAgent:
    """Shared plumbing: buffer, action bounds, role RNGs, checkpointing.

    Training runs in float32; float64 is available for gradient-oracle tests.
    """

    def __init__(self, cfg: AgentConfig, seed, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.low = np.asarray(cfg.action_low, dtype=dtype)
        self.high = np.asarray(cfg.action_high, dtype=dtype)
        rngs = _child_rngs(seed)
        # role order: actor init, critic inits (two slots), protester init,
        # exploration, target-side noise/sampling, replay, update-side sampling
        (self._rng_actor_init, self._rng_c1_init, self._rng_c2_init,
         self._rng_prot_init, self.rng_explore, self.rng_target,
         rng_replay, self.rng_update) = rngs
        self.buffer = ReplayBuffer(
            cfg.buffer_capacity, cfg.state_dim, cfg.action_dim, seed=rng_replay,
            dtype=self.dtype,
        )
        self.u = 0
        self.last_targets = None

    # -- environment-facing ------------------------------------------------
    def act_explore(self, state):
        raise NotImplementedError

    def act_eval(self, state):
        raise NotImplementedError

    def train_step(self, transition: Transition):
        """Push one transition; once the buffer covers a batch, run the
        algorithm's update and return its loss metrics."""
        self.buffer.push(transition)
        if len(self.buffer) < self.cfg.batch_size:
            return {"updated": False, "critic_loss": float("nan"),
                    "actor_loss": float("nan"), "protester_loss": float("nan"),
                    "alpha": self._alpha_metric()}
        self.u += 1
        batch = self.buffer.sample(self.cfg.batch_size)
        metrics = self._update(batch)
        metrics["updated"] = True
        return metrics

    def _alpha_metric(self):
        return float("nan")

    def _update(self, batch):
        raise NotImplementedError

    # -- checkpointing -------------------------------------------------------
    def _net_registry(self):
        raise NotImplementedError

    def save_checkpoint(self, directory):
        os.makedirs(directory, exist_ok=True)
        registry = self._net_registry()
        for name, net in registry.items():
            save_net(net, os.path.join(directory, f"{name}.bin"))
        manifest = {
            "algorithm": self.cfg.algorithm,
            "config_hash": self.cfg.config_hash(),
            "nets": sorted(registry),
        }
        with open(os.path.join(directory, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)

    def load_checkpoint(self, directory):
        with open(os.path.join(directory, "manifest.json")) as f:
            manifest = json.load(f)
        if manifest["algorithm"] != self.cfg.algorithm:
            raise ValueError(
                f"checkpoint is for {manifest['algorithm']!r}, agent is {self.cfg.algorithm!r}"
            )
        if manifest["config_hash"] != self.cfg.config_hash():
            raise ValueError("checkpoint config hash does not match agent config")
        for name, net in self._net_registry().items():
            loaded = load_net(os.path.join(directory, f"{name}.bin"), dtype=net.dtype)
            net.set_params(loaded.params)


def _q_value(critic, states, actions):
    return critic.forward(np.concatenate([states, actions], axis=1))[:, 0]


def critic_mse_loss_grads(critic, states, actions, y):
    """Squared TD-error regression toward fixed targets y; returns the loss
    and the critic's parameter gradients."""
    q = _q_value(critic, states, actions)
    diff = q - np.asarray(y, dtype=q.dtype)
    loss = float(np.mean(diff**2))
    grads, _ = critic.backward(((2.0 / q.shape[0]) * diff)[:, None])
    return loss, grads


class DeterministicPolicyAgent(_BaseAgent):
    """ddpg / ddpg-minq / mpg / td3 / mpg-sd."""

    def __init__(self, cfg, seed, dtype=np.float32):
        super().__init__(cfg, seed, dtype)
        sd, ad, h = cfg.state_dim, cfg.action_dim, cfg.hidden
        self.actor = DeterministicActor(
            sd, ad, h, self.low, self.high, self._rng_actor_init, dtype=dtype
        )
        self.actor_target = self.actor.copy()
        critic_rngs = [self._rng_c1_init, self._rng_c2_init]
        self.critics = [
            MLP([sd + ad] + list(h) + [1], rng=critic_rngs[i], dtype=dtype)
            for i in range(cfg.n_critics)
        ]
        self.critic_targets = [c.copy() for c in self.critics]
        self.protester = (
            MLP([sd] + list(h) + [1], rng=self._rng_prot_init, dtype=dtype)
            if cfg.use_protester
            else None
        )
        self.actor_opt = Adam(self.actor.params, cfg.actor_lr)
        self.critic_opts = [Adam(c.params, cfg.critic_lr) for c in self.critics]
        self.protester_opt = Adam(self.protester.params, cfg.value_lr) if self.protester else None

    def act_explore(self, state):
        a = self.actor.action(np.asarray(state, dtype=self.dtype)[None])[0]
        noise = self.cfg.exploration_noise * self.rng_explore.standard_normal(
            self.cfg.action_dim
        )
        return np.clip(a + noise.astype(self.dtype), self.low, self.high)

    def act_eval(self, state):
        return self.actor.action(np.asarray(state, dtype=self.dtype)[None])[0]

    def _target_values(self, batch):
        """One fused construction covering the whole family: smoothed target
        action, min over the available target critics, moderated by the value
        net when present.  Smoothing noise is drawn even at sigma=0 so sibling
        configurations consume identical RNG streams."""
        cfg = self.cfg
        a2 = self.actor_target.action(batch.s_next)
        eps = clipped_noise(
            self.rng_target, cfg.target_noise, cfg.target_noise_clip, a2.shape, dtype=a2.dtype
        )
        a2 = np.clip(a2 + eps, self.low, self.high)
        q2 = _q_value(self.critic_targets[0], batch.s_next, a2)
        if cfg.n_critics == 2:
            q2 = np.minimum(q2, _q_value(self.critic_targets[1], batch.s_next, a2))
        if self.protester is not None:
            boot = (1.0 - cfg.omega) * q2 + cfg.omega * self.protester.forward(batch.s_next)[:, 0]
        else:
            boot = q2
        return batch.r + cfg.gamma * (1.0 - batch.terminal) * boot

    def critic_update(self, batch):
        y = self._target_values(batch)
        self.last_targets = y
        losses = []
        for net, opt in zip(self.critics, self.critic_opts):
            loss, grads = critic_mse_loss_grads(net, batch.s, batch.a, y)
            losses.append(loss)
            opt.step(net.params, grads)
        return float(np.mean(losses))

    def protester_update(self, batch):
        q = _q_value(self.critics[0], batch.s, batch.a)
        loss, grads = protester_loss_grads(self.protester, batch.s, q, self.cfg.tau)
        self.protester_opt.step(self.protester.params, grads)
        return loss

    def actor_loss_grads(self, batch):
        """Loss -mean Q1(s, actor(s)) and its actor-parameter gradients; the
        critic is only traversed, never stepped."""
        b = len(batch)
        a = self.actor.action(batch.s)
        q = _q_value(self.critics[0], batch.s, a)
        loss = -float(np.mean(q))
        upstream = np.full((b, 1), -1.0 / b, dtype=self.dtype)
        _, grad_in = self.critics[0].backward(upstream)
        grad_a = grad_in[:, self.cfg.state_dim :]
        return loss, self.actor.backward_action(grad_a)

    def actor_update(self, batch):
        loss, grads = self.actor_loss_grads(batch)
        self.actor_opt.step(self.actor.params, grads)
        return loss

    def _update(self, batch):
        critic_loss = self.critic_update(batch)
        protester_loss_value = (
            self.protester_update(batch) if self.protester is not None else float("nan")
        )
        actor_loss = float("nan")
        if self.u % self.cfg.policy_delay == 0:
            actor_loss = self.actor_update(batch)
            soft_update(self.actor_target.params, self.actor.params, self.cfg.eta)
            for tgt, src in zip(self.critic_targets, self.critics):
                soft_update(tgt.params, src.params, self.cfg.eta)
        return {"critic_loss": critic_loss, "actor_loss": actor_loss,
                "protester_loss": protester_loss_value, "alpha": float("nan")}

    def measure_target_q(self, probe_states):
        probe = np.asarray(probe_states, dtype=self.dtype)
        a = self.actor.action(probe)
        q = _q_value(self.critic_targets[0], probe, a)
        if self.cfg.n_critics == 2:
            q = np.minimum(q, _q_value(self.critic_targets[1], probe, a))
        return float(np.mean(q))

    def _net_registry(self):
        reg = {"actor": self.actor.net, "actor_target": self.actor_target.net}
        for i, (c, t) in enumerate(zip(self.critics, self.critic_targets)):
            reg[f"critic{i}"] = c
            reg[f"critic{i}_target"] = t
        if self.protester is not None:
            reg["protester"] = self.protester
        return reg


class _StochasticAgentMixin:
    """Sampling-based action selection and temperature handling shared by the
    entropy and quantile families."""

    def _init_stochastic(self, cfg):
        self.actor = SquashedGaussianActor(
            cfg.state_dim, cfg.action_dim, cfg.hidden, self.low, self.high,
            self._rng_actor_init, dtype=self.dtype,
        )
        self.log_alpha = np.array([np.log(cfg.alpha)], dtype=np.float64)
        self.alpha_opt = Adam([self.log_alpha], cfg.actor_lr)
        self.target_entropy = -float(cfg.action_dim)

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha[0]))

    def _alpha_metric(self):
        return self.alpha

    def act_explore(self, state):
        s = np.asarray(state, dtype=self.dtype)[None]
        a, _, _ = self.actor.sample(s, self.rng_explore)
        return a[0]

    def act_eval(self, state):
        return self.actor.mean_action(np.asarray(state, dtype=self.dtype)[None])[0]

    def _sample_next(self, s_next):
        a2, log_pi, _ = self.actor.sample(s_next, self.rng_target)
        return a2, log_pi

    def temperature_grad(self, log_pi):
        """d/dlog(alpha) of -alpha * mean(log_pi + target_entropy): positive
        policy-entropy deficit pushes alpha up."""
        return -self.alpha * float(np.mean(log_pi + self.target_entropy))

    def _apply_temperature(self, log_pi):
        if self.cfg.alpha_autotune:
            self.alpha_opt.step([self.log_alpha], [np.array([self.temperature_grad(log_pi)])])


class EntropyActorCriticAgent(_StochasticAgentMixin, _BaseAgent):
    """sac-minq / mac.  All of a step's gradients are computed from pre-step
    parameters, then the optimizer steps are applied together."""

    def __init__(self, cfg, seed, dtype=np.float32):
        super().__init__(cfg, seed, dtype)
        sd, ad, h = cfg.state_dim, cfg.action_dim, cfg.hidden
        self._init_stochastic(cfg)
        critic_rngs = [self._rng_c1_init, self._rng_c2_init]
        self.critics = [
            MLP([sd + ad] + list(h) + [1], rng=critic_rngs[i], dtype=dtype)
            for i in range(cfg.n_critics)
        ]
        self.critic_targets = [c.copy() for c in self.critics]
        self.protester = (
            MLP([sd] + list(h) + [1], rng=self._rng_prot_init, dtype=dtype)
            if cfg.use_protester
            else None
        )
        self.actor_opt = Adam(self.actor.params, cfg.actor_lr)
        self.critic_opts = [Adam(c.params, cfg.critic_lr) for c in self.critics]
        self.protester_opt = Adam(self.protester.params, cfg.value_lr) if self.protester else None

    def _target_values(self, batch):
        cfg = self.cfg
        a2, log_pi = self._sample_next(batch.s_next)
        q2 = _q_value(self.critic_targets[0], batch.s_next, a2)
        if cfg.n_critics == 2:
            q2 = np.minimum(q2, _q_value(self.critic_targets[1], batch.s_next, a2))
        if self.protester is not None:
            v = self.protester.forward(batch.s_next)[:, 0]
            boot = (1.0 - cfg.omega) * q2 + cfg.omega * v - self.alpha * log_pi
        else:
            boot = q2 - self.alpha * log_pi
        return batch.r + cfg.gamma * (1.0 - batch.terminal) * boot

    def actor_loss_grads(self, batch, eps):
        """Entropy-regularized policy loss mean(alpha*log_pi - min_i Q_i) with
        the action reparameterized through the supplied noise."""
        b = len(batch)
        a, log_pi, cache = self.actor.sample_with_eps(batch.s, eps)
        qs = np.stack([_q_value(c, batch.s, a) for c in self.critics])
        sel = np.argmin(qs, axis=0)  # gradient flows through the minimizing critic
        loss = float(np.mean(self.alpha * log_pi - qs.min(axis=0)))
        grad_a = np.zeros_like(a)
        for i, c in enumerate(self.critics):
            mask = (sel == i).astype(self.dtype)
            if not mask.any():
                continue
            _, grad_in = c.backward((-mask / b)[:, None])
            grad_a += grad_in[:, self.cfg.state_dim :]
        grad_log_pi = np.full(b, self.alpha / b, dtype=self.dtype)
        grads = self.actor.backward_sample(cache, grad_a, grad_log_pi)
        return loss, grads, log_pi

    def _update(self, batch):
        cfg = self.cfg
        b = len(batch)
        # gradients from pre-step parameters
        y = self._target_values(batch)
        self.last_targets = y
        critic_grads = []
        critic_losses = []
        for net in self.critics:
            loss, grads = critic_mse_loss_grads(net, batch.s, batch.a, y)
            critic_losses.append(loss)
            critic_grads.append(grads)
        protester_pack = None
        if self.protester is not None:
            qv = _q_value(self.critics[0], batch.s, batch.a)
            protester_pack = protester_loss_grads(self.protester, batch.s, qv, cfg.tau)
        eps = self.rng_update.standard_normal((b, cfg.action_dim)).astype(self.dtype)
        actor_loss, actor_grads, log_pi = self.actor_loss_grads(batch, eps)
        # apply everything
        for net, opt, grads in zip(self.critics, self.critic_opts, critic_grads):
            opt.step(net.params, grads)
        if protester_pack is not None:
            self.protester_opt.step(self.protester.params, protester_pack[1])
        self.actor_opt.step(self.actor.params, actor_grads)
        self._apply_temperature(log_pi)
        for tgt, src in zip(self.critic_targets, self.critics):
            soft_update(tgt.params, src.params, cfg.eta)
        return {
            "critic_loss": float(np.mean(critic_losses)),
            "actor_loss": actor_loss,
            "protester_loss": protester_pack[0] if protester_pack else float("nan"),
            "alpha": self.alpha,
        }

    def measure_target_q(self, probe_states):
        probe = np.asarray(probe_states, dtype=self.dtype)
        a = self.actor.mean_action(probe)
        q = _q_value(self.critic_targets[0], probe, a)
        if self.cfg.n_critics == 2:
            q = np.minimum(q, _q_value(self.critic_targets[1], probe, a))
        return float(np.mean(q))

    def _net_registry(self):
        reg = {"actor": self.actor.net}
        for i, (c, t) in enumerate(zip(self.critics, self.critic_targets)):
            reg[f"critic{i}"] = c
            reg[f"critic{i}_target"] = t
        if self.protester is not None:
            reg["protester"] = self.protester
        return reg


def quantile_midpoints(m):
    """Quantile-regression midpoint levels (2i-1)/(2m), i = 1..m."""
    return (2.0 * np.arange(1, m + 1) - 1.0) / (2.0 * m)


def huber_quantile_loss_grads(pred_atoms, target_atoms, midpoints, kappa=1.0):
    """Asymmetric Huber quantile loss between predicted atoms (B, M) and target
    atoms (B, T): mean over the batch and target atoms, summed over prediction
    atoms.  Returns (loss, dloss/dpred).

    Computed in the dtype of the predictions; written with in-place updates
    and without np.where since this sits on the quantile critics' hot path.
    """
    pred = np.asarray(pred_atoms)
    tgt = np.asarray(target_atoms, dtype=pred.dtype)
    b, m = pred.shape
    t = tgt.shape[1]
    mid = np.asarray(midpoints, dtype=pred.dtype)
    flip = np.asarray(1.0 - 2.0 * mid, dtype=pred.dtype)
    delta = tgt[:, :, None] - pred[:, None, :]  # (B, T, M)
    abs_d = np.abs(delta)
    c = np.minimum(abs_d, kappa)
    # huber = 0.5*c^2 + kappa*(|delta| - c), with c = min(|delta|, kappa)
    huber = abs_d
    huber -= c
    huber *= kappa
    c *= c
    c *= 0.5
    huber += c
    # weight = |midpoint - 1{delta < 0}| = midpoint + 1{delta<0}*(1 - 2*midpoint)
    weight = (delta < 0).astype(pred.dtype)
    weight *= flip
    weight += mid
    loss = float(np.einsum("btm,btm->", weight, huber)) / (b * t * kappa)
    grad_pred = np.einsum("btm,btm->bm", weight, np.clip(delta, -kappa, kappa))
    grad_pred *= -1.0 / (b * t * kappa)
    return loss, grad_pred


class QuantileCriticAgent(_StochasticAgentMixin, _BaseAgent):
    """tqc / mqc.  Same pre-step gradient convention as the entropy family."""

    def __init__(self, cfg, seed, dtype=np.float32):
        super().__init__(cfg, seed, dtype)
        sd, ad, h = cfg.state_dim, cfg.action_dim, cfg.hidden
        self._init_stochastic(cfg)
        critic_rngs = [self._rng_c1_init, self._rng_c2_init]
        if cfg.n_critics > 2:
            critic_rngs += list(
                np.random.default_rng(np.random.SeedSequence([self.seed, 91])).spawn(
                    cfg.n_critics - 2
                )
            )
        self.critics = [
            MLP([sd + ad] + list(h) + [cfg.n_atoms], rng=critic_rngs[i], dtype=dtype)
            for i in range(cfg.n_critics)
        ]
        self.critic_targets = [c.copy() for c in self.critics]
        self.protester = (
            MLP([sd] + list(h) + [1], rng=self._rng_prot_init, dtype=dtype)
            if cfg.use_protester
            else None
        )
        self.actor_opt = Adam(self.actor.params, cfg.actor_lr)
        self.critic_opts = [Adam(c.params, cfg.critic_lr) for c in self.critics]
        self.protester_opt = Adam(self.protester.params, cfg.value_lr) if self.protester else None
        self.midpoints = quantile_midpoints(cfg.n_atoms)

    def _atoms(self, critics, states, actions):
        x = np.concatenate([states, actions], axis=1)
        return np.stack([c.forward(x) for c in critics], axis=1)  # (B, N, M)

    def _target_atoms(self, batch):
        """Pooled, sorted, truncated target atoms, moderated when the value net
        is present; shape (B, k*N)."""
        cfg = self.cfg
        a2, log_pi = self._sample_next(batch.s_next)
        atoms = self._atoms(self.critic_targets, batch.s_next, a2)
        b, n, m = atoms.shape
        pooled = np.sort(atoms.reshape(b, n * m), axis=1, kind="stable")
        z = pooled[:, : cfg.atoms_kept * n]
        if self.protester is not None:
            v = self.protester.forward(batch.s_next)[:, 0]
            boot = (1.0 - cfg.omega) * z + (cfg.omega * v - self.alpha * log_pi)[:, None]
        else:
            boot = z - (self.alpha * log_pi)[:, None]
        mask = (1.0 - batch.terminal)[:, None]
        return batch.r[:, None] + cfg.gamma * mask * boot

    def actor_loss_grads(self, batch, eps):
        """Policy loss mean(alpha*log_pi - mean over all online atoms)."""
        cfg = self.cfg
        b = len(batch)
        a, log_pi, cache = self.actor.sample_with_eps(batch.s, eps)
        x = np.concatenate([batch.s, a], axis=1)
        n, m = cfg.n_critics, cfg.n_atoms
        atom_mean = np.zeros(b, dtype=np.float64)
        grad_a = np.zeros_like(a)
        upstream = np.full((b, m), -1.0 / (b * n * m), dtype=self.dtype)
        for c in self.critics:
            out = c.forward(x)
            atom_mean += out.mean(axis=1) / n
            _, grad_in = c.backward(upstream)
            grad_a += grad_in[:, cfg.state_dim :]
        loss = float(np.mean(self.alpha * log_pi - atom_mean))
        grad_log_pi = np.full(b, self.alpha / b, dtype=self.dtype)
        grads = self.actor.backward_sample(cache, grad_a, grad_log_pi)
        return loss, grads, log_pi

    def _update(self, batch):
        cfg = self.cfg
        b = len(batch)
        y = self._target_atoms(batch)
        self.last_targets = y
        critic_grads = []
        critic_losses = []
        for net in self.critics:
            pred = net.forward(np.concatenate([batch.s, batch.a], axis=1))
            loss, grad_pred = huber_quantile_loss_grads(pred, y, self.midpoints)
            critic_losses.append(loss)
            grads, _ = net.backward(grad_pred.astype(self.dtype))
            critic_grads.append(grads)
        protester_pack = None
        if self.protester is not None:
            atoms = self._atoms(self.critics, batch.s, batch.a)
            qv = min_atom_values(atoms)
            protester_pack = protester_loss_grads(self.protester, batch.s, qv, cfg.tau)
        eps = self.rng_update.standard_normal((b, cfg.action_dim)).astype(self.dtype)
        actor_loss, actor_grads, log_pi = self.actor_loss_grads(batch, eps)
        for net, opt, grads in zip(self.critics, self.critic_opts, critic_grads):
            opt.step(net.params, grads)
        if protester_pack is not None:
            self.protester_opt.step(self.protester.params, protester_pack[1])
        self.actor_opt.step(self.actor.params, actor_grads)
        self._apply_temperature(log_pi)
        for tgt, src in zip(self.critic_targets, self.critics):
            soft_update(tgt.params, src.params, cfg.eta)
        return {
            "critic_loss": float(np.mean(critic_losses)),
            "actor_loss": actor_loss,
            "protester_loss": protester_pack[0] if protester_pack else float("nan"),
            "alpha": self.alpha,
        }

    def measure_target_q(self, probe_states):
        probe = np.asarray(probe_states, dtype=self.dtype)
        a = self.actor.mean_action(probe)
        atoms = self._atoms(self.critic_targets, probe, a)
        return float(np.mean(atoms))

    def _net_registry(self):
        reg = {"actor": self.actor.net}
        for i, (c, t) in enumerate(zip(self.critics, self.critic_targets)):
            reg[f"critic{i}"] = c
            reg[f"critic{i}_target"] = t
        if self.protester is not None:
            reg["protester"] = self.protester
        return reg


def make_agent(cfg: AgentConfig, seed, dtype=np.float32):
    if cfg.algorithm in DETERMINISTIC_ALGOS:
        return DeterministicPolicyAgent(cfg, seed, dtype)
    if cfg.algorithm in ENTROPY_ALGOS:
        return EntropyActorCriticAgent(cfg, seed, dtype)
    if cfg.algorithm in QUANTILE_ALGOS:
        return QuantileCriticAgent(cfg, seed, dtype)
    raise ValueError(f"unknown algorithm {cfg.algorithm!r}")
