"""Actor heads on top of the plain MLP.

Two shapes of policy appear in the algorithms here: a deterministic actor
(tanh output scaled to the action box) and a stochastic tanh-squashed
Gaussian actor sampled through the reparameterization a = squash(mu + sigma*eps).
Both expose the backward passes the agents need: given dL/da (and, for the
stochastic head, dL/dlogpi), produce gradients for the underlying network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import MLP

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def _softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def log1m_tanh_sq(u):
    """log(1 - tanh(u)^2), computed stably as 2*(log 2 - u - softplus(-2u))."""
    return 2.0 * (np.log(2.0) - u - _softplus(-2.0 * u))


class DeterministicActor:
    """MLP policy with tanh output mapped onto [low, high] per dimension."""

    def __init__(self, state_dim, action_dim, hidden, low, high, rng, dtype=np.float32):
        self.net = MLP([state_dim] + list(hidden) + [action_dim], rng=rng, dtype=dtype)
        low = np.asarray(low, dtype=dtype)
        high = np.asarray(high, dtype=dtype)
        self.center = (high + low) / 2.0
        self.scale = (high - low) / 2.0
        self._tanh = None

    @property
    def params(self):
        return self.net.params

    def action(self, states):
        t = np.tanh(self.net.forward(states))
        self._tanh = t
        return self.center + self.scale * t

    __call__ = action

    def backward_action(self, grad_action):
        """Gradients of the net parameters given dL/da from the last ``action`` call."""
        if self._tanh is None:
            raise RuntimeError("backward_action called before action")
        upstream = grad_action * self.scale * (1.0 - self._tanh**2)
        grads, _ = self.net.backward(upstream)
        return grads

    def copy(self):
        dup = DeterministicActor.__new__(DeterministicActor)
        dup.net = self.net.copy()
        dup.center = self.center.copy()
        dup.scale = self.scale.copy()
        dup._tanh = None
        return dup


@dataclass
class SampleCache:
    """Intermediates of one reparameterized sample, kept for the backward pass."""

    eps: np.ndarray
    u: np.ndarray
    tanh_u: np.ndarray
    sigma: np.ndarray
    clip_mask: np.ndarray  # 1 where log_std was inside its clamp range


class SquashedGaussianActor:
    """Stochastic policy: MLP emits per-dimension mean and log-std, actions are
    tanh-squashed Gaussian samples scaled onto [low, high].

    log-std is clamped to [-20, 2].  The log-density includes the tanh
    change-of-variables correction and the box scaling term.
    """

    def __init__(self, state_dim, action_dim, hidden, low, high, rng, dtype=np.float32):
        self.action_dim = action_dim
        self.net = MLP([state_dim] + list(hidden) + [2 * action_dim], rng=rng, dtype=dtype)
        low = np.asarray(low, dtype=dtype)
        high = np.asarray(high, dtype=dtype)
        self.center = (high + low) / 2.0
        self.scale = (high - low) / 2.0
        self._log_scale_sum = float(np.sum(np.log(self.scale)))

    @property
    def params(self):
        return self.net.params

    def dist_params(self, states):
        out = self.net.forward(states)
        mu = out[:, : self.action_dim]
        log_std_raw = out[:, self.action_dim :]
        log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
        clip_mask = ((log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)).astype(
            log_std_raw.dtype
        )
        return mu, log_std, clip_mask

    def sample_with_eps(self, states, eps):
        """Reparameterized sample with the noise supplied explicitly.

        Returns (action, log_pi, cache).  log_pi is the per-sample log-density
        of the squashed, scaled action.
        """
        mu, log_std, clip_mask = self.dist_params(states)
        sigma = np.exp(log_std)
        u = mu + sigma * eps
        tanh_u = np.tanh(u)
        action = self.center + self.scale * tanh_u
        log_normal = -_HALF_LOG_2PI - log_std - 0.5 * eps**2
        log_pi = np.sum(log_normal - log1m_tanh_sq(u), axis=1) - self._log_scale_sum
        cache = SampleCache(eps=eps, u=u, tanh_u=tanh_u, sigma=sigma, clip_mask=clip_mask)
        return action, log_pi, cache

    def sample(self, states, rng):
        eps = rng.standard_normal((states.shape[0], self.action_dim)).astype(
            self.net.dtype
        )
        return self.sample_with_eps(states, eps)

    def mean_action(self, states):
        mu, _, _ = self.dist_params(states)
        return self.center + self.scale * np.tanh(mu)

    def backward_sample(self, cache, grad_action, grad_log_pi):
        """Gradients of the net parameters for a loss depending on the last
        reparameterized sample through the action and/or its log-density.

        grad_action: (B, A) dL/da; grad_log_pi: (B,) dL/dlogpi.  Either may be
        all zeros.
        """
        glp = grad_log_pi[:, None]
        dact_du = self.scale * (1.0 - cache.tanh_u**2)
        # d log_pi / du = 2*tanh(u) from the change-of-variables term.
        du = grad_action * dact_du + glp * 2.0 * cache.tanh_u
        grad_mu = du
        grad_log_std = du * cache.sigma * cache.eps - glp
        grad_log_std = grad_log_std * cache.clip_mask
        upstream = np.concatenate([grad_mu, grad_log_std], axis=1)
        grads, _ = self.net.backward(upstream)
        return grads

    def copy(self):
        dup = SquashedGaussianActor.__new__(SquashedGaussianActor)
        dup.action_dim = self.action_dim
        dup.net = self.net.copy()
        dup.center = self.center.copy()
        dup.scale = self.scale.copy()
        dup._log_scale_sum = self._log_scale_sum
        return dup
