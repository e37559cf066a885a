"""Finite-MDP laboratory: the moderated Bellman operator, contraction and
fixed-point checks, exact policy evaluation, and a noise-injection bias probe.

The moderated optimality operator mixes the per-state max and min backup:

    (T_w Q)(s,a) = R(s,a) + gamma * sum_s' P(s'|s,a) *
                   [(1-w) * max_a' Q(s',a') + w * min_a' Q(s',a')]

For any w in [0,1] this is a gamma-contraction in the sup norm, so it has a
unique fixed point reachable by iteration; both facts are verified numerically
by the functions here.  Everything in this module runs in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expectile import scalar_expectile_rows

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class MDPTable:
    """Explicit finite MDP: transition tensor P (S,A,S), reward table R (S,A),
    and discount gamma in (0,1)."""

    P: np.ndarray
    R: np.ndarray
    gamma: float

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        R = np.asarray(self.R, dtype=np.float64)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"P must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ValueError(f"R shape {R.shape} does not match P shape {P.shape}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0,1), got {self.gamma}")
        if np.any(P < 0):
            raise ValueError("transition probabilities must be nonnegative")
        row_sums = P.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > _ROW_SUM_TOL:
            raise ValueError("each P[s,a,:] must sum to 1")
        if not np.all(np.isfinite(R)):
            raise ValueError("rewards must be finite")

    @property
    def n_states(self):
        return self.P.shape[0]

    @property
    def n_actions(self):
        return self.P.shape[1]


def moderate_bellman_apply(m: MDPTable, Q, omega):
    """One application of the moderated optimality operator."""
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must be in [0,1], got {omega}")
    Q = np.asarray(Q, dtype=np.float64)
    v_mix = (1.0 - omega) * Q.max(axis=1) + omega * Q.min(axis=1)
    return m.R + m.gamma * (m.P @ v_mix)


def contraction_check(m: MDPTable, Q1, Q2, omega, slack=1e-10):
    """Evaluate the contraction inequality for one pair of Q tables.

    Returns (lhs, rhs, holds) with lhs = ||T_w Q1 - T_w Q2||_inf and
    rhs = gamma * ||Q1 - Q2||_inf.
    """
    Q1 = np.asarray(Q1, dtype=np.float64)
    Q2 = np.asarray(Q2, dtype=np.float64)
    if Q1.shape != Q2.shape:
        raise ValueError("Q tables must have matching shapes")
    lhs = float(
        np.max(np.abs(moderate_bellman_apply(m, Q1, omega) - moderate_bellman_apply(m, Q2, omega)))
    )
    rhs = float(m.gamma * np.max(np.abs(Q1 - Q2)))
    return lhs, rhs, lhs <= rhs + slack


def fixed_point(m: MDPTable, omega, tol=1e-10, q0=None, return_iterations=False):
    """Iterate the moderated operator to its fixed point.

    Starts from zeros (or ``q0``) and stops once successive iterates differ by
    less than tol*(1-gamma)/gamma in sup norm, which guarantees the returned
    table satisfies ||T_w Q - Q||_inf < tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    Q = (
        np.zeros((m.n_states, m.n_actions), dtype=np.float64)
        if q0 is None
        else np.asarray(q0, dtype=np.float64).copy()
    )
    stop = tol * (1.0 - m.gamma) / m.gamma
    iterations = 0
    while True:
        Q_next = moderate_bellman_apply(m, Q, omega)
        iterations += 1
        if np.max(np.abs(Q_next - Q)) < stop:
            Q = Q_next
            break
        Q = Q_next
    if return_iterations:
        return Q, iterations
    return Q


def policy_eval_exact(m: MDPTable, policy):
    """Exact Q^pi for a per-state action distribution, via the linear system

        Q = R + gamma * P  pi  Q.

    ``policy`` is (S, A) with rows summing to 1.
    """
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (m.n_states, m.n_actions):
        raise ValueError("policy shape must be (S, A)")
    if np.max(np.abs(policy.sum(axis=1) - 1.0)) > 1e-10 or np.any(policy < 0):
        raise ValueError("policy rows must be distributions")
    S, A = m.n_states, m.n_actions
    # Flattened (s,a) indexing: transition from (s,a) into (s',a') has
    # probability P[s,a,s'] * pi[s',a'].
    flow = m.P.reshape(S * A, S)[:, :, None] * policy[None, :, :]
    flow = flow.reshape(S * A, S * A)
    q = np.linalg.solve(np.eye(S * A) - m.gamma * flow, m.R.reshape(S * A))
    return q.reshape(S, A)


def random_mdp(rng, n_states, n_actions, gamma):
    """Random instance: Dirichlet(1,...,1) transition rows, rewards U(-1,1)."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return MDPTable(P=P, R=R, gamma=gamma)


def single_state_mdp(rewards, gamma):
    """One state, K self-loop actions with the given deterministic rewards."""
    rewards = np.asarray(rewards, dtype=np.float64)
    k = rewards.size
    return MDPTable(P=np.ones((1, k, 1)), R=rewards.reshape(1, k), gamma=gamma)


ESTIMATORS = ("greedy", "double", "min", "moderate")


def bias_probe(m: MDPTable, noise_std, trials, estimator, rng, omega=0.2, tau=0.01):
    """Mean next-state value bias of an estimator under additive critic noise.

    Per trial and state, noisy tables Q~ = Q* + N(0, noise_std^2) are drawn
    (two independent tables for the two-estimator schemes) and the estimator's
    state-value estimate is compared against max_a Q*(s,a):

    * greedy    max_a Q~(s,a)
    * double    Q~1(s, argmax_a Q~2(s,a))
    * min       min(Q~1, Q~2)(s, argmax_a Q~1(s,a))
    * moderate  (1-omega) * max_a Q~(s,a) + omega * expectile_tau(Q~(s,:))

    Returns the bias averaged over trials and states.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    q_star = fixed_point(m, 0.0, tol=1e-12)
    true_value = q_star.max(axis=1)  # (S,)
    S, A = q_star.shape

    total = 0.0
    chunk = max(1, min(trials, int(2e6) // (S * A)))
    remaining = trials
    while remaining > 0:
        t = min(chunk, remaining)
        noisy1 = q_star[None] + noise_std * rng.standard_normal((t, S, A))
        if estimator == "greedy":
            est = noisy1.max(axis=2)
        elif estimator == "double":
            noisy2 = q_star[None] + noise_std * rng.standard_normal((t, S, A))
            pick = noisy2.argmax(axis=2)
            est = np.take_along_axis(noisy1, pick[:, :, None], axis=2)[:, :, 0]
        elif estimator == "min":
            noisy2 = q_star[None] + noise_std * rng.standard_normal((t, S, A))
            pick = noisy1.argmax(axis=2)
            v1 = np.take_along_axis(noisy1, pick[:, :, None], axis=2)[:, :, 0]
            v2 = np.take_along_axis(noisy2, pick[:, :, None], axis=2)[:, :, 0]
            est = np.minimum(v1, v2)
        else:  # moderate
            ex = scalar_expectile_rows(noisy1.reshape(t * S, A), tau).reshape(t, S)
            est = (1.0 - omega) * noisy1.max(axis=2) + omega * ex
        total += float(np.sum(est - true_value[None, :]))
        remaining -= t
    return total / (trials * S)


def save_mdp(m: MDPTable, path):
    """Plain-text round trip: header "S A gamma", then the reward rows, then
    the transition rows P[s,a,:] in (s-major, a-minor) order."""
    with open(path, "w") as f:
        f.write(f"{m.n_states} {m.n_actions} {float(m.gamma)!r}\n")
        for s in range(m.n_states):
            f.write(" ".join(repr(float(x)) for x in m.R[s]) + "\n")
        for s in range(m.n_states):
            for a in range(m.n_actions):
                f.write(" ".join(repr(float(x)) for x in m.P[s, a]) + "\n")


def load_mdp(path):
    with open(path) as f:
        header = f.readline().split()
        S, A, gamma = int(header[0]), int(header[1]), float(header[2])
        R = np.array([[float(x) for x in f.readline().split()] for _ in range(S)])
        P = np.array(
            [[[float(x) for x in f.readline().split()] for _ in range(A)] for _ in range(S)]
        )
    return MDPTable(P=P, R=R, gamma=gamma)
