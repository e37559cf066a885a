"""TD-target constructions.

All functions operate on batches: rewards ``r`` (B,), next states ``s_next``
(B, S), and a ``terminal`` mask (B,) that is 1.0 at true terminal transitions.
Every construction multiplies its bracketed bootstrap term by (1 - terminal);
time-limit truncations are stored with terminal=0 upstream, so they bootstrap.

Value estimators are passed as callables so the constructions stay decoupled
from any particular network class:

* critic(s, a) -> (B,) scalar values
* actor(s) -> (B, A) deterministic actions
* value(s) -> (B,) protester (lower-expectile state value) estimates
* sample(s, rng) -> (a, log_pi) stochastic policy draw with log-density
* atoms(s, a) -> (B, N, M) per-critic quantile atoms
"""

from __future__ import annotations

import numpy as np


def _mask(terminal):
    return 1.0 - np.asarray(terminal)


def standard_target(r, s_next, terminal, gamma, critic_target, actor_target):
    """y = r + gamma * Q_target(s', actor_target(s')), masked at terminals."""
    a2 = actor_target(s_next)
    return r + gamma * _mask(terminal) * critic_target(s_next, a2)


def min_q_target(r, s_next, terminal, gamma, critics_target, actor_target):
    """Clipped double-Q: bootstrap from the pointwise minimum of two target critics."""
    if len(critics_target) != 2:
        raise ValueError("min_q_target requires exactly two target critics")
    a2 = actor_target(s_next)
    q = np.minimum(critics_target[0](s_next, a2), critics_target[1](s_next, a2))
    return r + gamma * _mask(terminal) * q


def moderate_target(r, s_next, terminal, gamma, omega, critic_target, protester, actor_target):
    """Convex mix of the bootstrapped critic value and the protester value:

        y = r + gamma * [(1-omega) * Q_target(s',a') + omega * V(s')]
    """
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must be in [0,1], got {omega}")
    a2 = actor_target(s_next)
    boot = (1.0 - omega) * critic_target(s_next, a2) + omega * protester(s_next)
    return r + gamma * _mask(terminal) * boot


def clipped_noise(rng, sigma, clip, shape, dtype=np.float64):
    """Target-smoothing noise: clip(N(0, sigma^2), -clip, clip), drawn even when
    sigma == 0 so that configurations differing only in sigma consume identical
    RNG streams."""
    eps = sigma * rng.standard_normal(shape)
    return np.clip(eps, -clip, clip).astype(dtype, copy=False)


def moderate_target_smoothed(
    r,
    s_next,
    terminal,
    gamma,
    omega,
    critic_target,
    protester,
    actor_target,
    sigma,
    noise_clip,
    action_low,
    action_high,
    rng,
):
    """Moderate target with smoothing: the target action is perturbed by
    clipped Gaussian noise, then clipped to the action bounds.  sigma=0 reduces
    exactly to ``moderate_target``."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if noise_clip <= 0:
        raise ValueError("noise_clip must be > 0")
    a2 = actor_target(s_next)
    eps = clipped_noise(rng, sigma, noise_clip, a2.shape, dtype=a2.dtype)
    a2 = np.clip(a2 + eps, action_low, action_high)
    boot = (1.0 - omega) * critic_target(s_next, a2) + omega * protester(s_next)
    return r + gamma * _mask(terminal) * boot


def sac_min_q_target(r, s_next, terminal, gamma, alpha, critics_target, sample, rng):
    """Entropy-regularized clipped double-Q target with a' sampled from the
    current stochastic policy:

        y = r + gamma * [min_i Q_i(s',a') - alpha * log pi(a'|s')]
    """
    if len(critics_target) != 2:
        raise ValueError("sac_min_q_target requires exactly two target critics")
    a2, log_pi = sample(s_next, rng)
    q = np.minimum(critics_target[0](s_next, a2), critics_target[1](s_next, a2))
    return r + gamma * _mask(terminal) * (q - alpha * log_pi)


def mac_target(r, s_next, terminal, gamma, omega, alpha, critic_target, protester, sample, rng):
    """Moderate target with entropy regularization, single critic:

        y = r + gamma * [(1-omega) Q(s',a') + omega V(s') - alpha log pi(a'|s')]
    """
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must be in [0,1], got {omega}")
    a2, log_pi = sample(s_next, rng)
    boot = (
        (1.0 - omega) * critic_target(s_next, a2)
        + omega * protester(s_next)
        - alpha * log_pi
    )
    return r + gamma * _mask(terminal) * boot


def _moderate_atom_core(
    r, s_next, terminal, gamma, omega, alpha, atoms_target, value_next, k, sample, rng
):
    """Pool target atoms at (s', a'~pi), keep the k*N smallest, and map each
    through the (possibly moderated) affine bootstrap."""
    a2, log_pi = sample(s_next, rng)
    atoms = atoms_target(s_next, a2)
    if atoms.ndim != 3:
        raise ValueError(f"expected atoms of shape (batch, critics, atoms), got {atoms.shape}")
    b, n, m = atoms.shape
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    pooled = np.sort(atoms.reshape(b, n * m), axis=1, kind="stable")
    z = pooled[:, : k * n]
    boot = (1.0 - omega) * z + (omega * value_next - alpha * log_pi)[:, None]
    return r[:, None] + gamma * (_mask(terminal) * 1.0)[:, None] * boot


def tqc_target_atoms(r, s_next, terminal, gamma, alpha, atoms_target, k, sample, rng):
    """Truncated-quantile target distribution: the k*N smallest pooled target
    atoms, each mapped through y_i = r + gamma*[z_(i) - alpha*log pi].
    Returned atoms are ascending along axis 1; shape (B, k*N)."""
    b = np.asarray(r).shape[0]
    zeros = np.zeros(b)
    return _moderate_atom_core(
        r, s_next, terminal, gamma, 0.0, alpha, atoms_target, zeros, k, sample, rng
    )


def mqc_target_atoms(
    r, s_next, terminal, gamma, omega, alpha, atoms_target, protester, k, sample, rng
):
    """Moderated truncated-quantile target distribution:

        y_i = r + gamma * [(1-omega) z_(i) + omega V(s') - alpha log pi(a'|s')]

    omega=0 coincides with ``tqc_target_atoms`` exactly.
    """
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must be in [0,1], got {omega}")
    return _moderate_atom_core(
        r, s_next, terminal, gamma, omega, alpha, atoms_target, protester(s_next), k, sample, rng
    )


def double_q_target(r, s_next, terminal, gamma, critic_pair, action_grid):
    """Discrete-probe double estimator: the second critic selects the action
    over a finite grid, the first evaluates it.

        a* = argmax_a Q2(s', a)   (ties -> lowest grid index)
        y  = r + gamma * Q1(s', a*)

    ``critic_pair`` is (Q1, Q2), each mapping (s_batch, action_grid) to a
    (B, G) value table.
    """
    action_grid = np.asarray(action_grid)
    if action_grid.size == 0:
        raise ValueError("empty action grid")
    q1, q2 = critic_pair
    table2 = q2(s_next, action_grid)
    pick = np.argmax(table2, axis=1)
    table1 = q1(s_next, action_grid)
    chosen = table1[np.arange(table1.shape[0]), pick]
    return r + gamma * _mask(terminal) * chosen


def greedy_target(r, s_next, terminal, gamma, critic, action_grid):
    """Plain maximizing target over a finite action grid (the construction the
    double estimator is compared against in bias probes)."""
    action_grid = np.asarray(action_grid)
    if action_grid.size == 0:
        raise ValueError("empty action grid")
    table = critic(s_next, action_grid)
    return r + gamma * _mask(terminal) * table.max(axis=1)
