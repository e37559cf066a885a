"""Expectile loss, scalar expectiles, and the lower-expectile value ("protester") losses.

The expectile at level tau of a distribution is the minimizer of the
asymmetrically weighted squared error

    loss(y, x) = tau * (y - x)^2        if y >= x
                 (1 - tau) * (y - x)^2  otherwise

tau = 0.5 recovers the mean; small tau tracks the lower tail.  The protester
is a state-value network V(s) regressed with this loss against critic values,
so for small tau it estimates a per-state lower bound of the Q distribution.
"""

from __future__ import annotations

import numpy as np


def _check_tau(tau):
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0,1), got {tau}")


def expectile_loss(y, x, tau):
    """Asymmetric squared error; elementwise over array inputs.

    The y == x boundary belongs to the y >= x branch (weight tau); the loss is
    zero there so the choice only pins the subgradient.
    """
    _check_tau(tau)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    w = np.where(y >= x, tau, 1.0 - tau)
    return w * (y - x) ** 2


def expectile_loss_grad(y, x, tau):
    """d/dx of expectile_loss, elementwise."""
    _check_tau(tau)
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    w = np.where(y >= x, tau, 1.0 - tau)
    return -2.0 * w * (y - x)


def scalar_expectile(samples, tau, residual_tol=1e-10):
    """Expectile of a finite sample set, by bisection on the first-order condition.

    The minimizer x of mean expectile loss satisfies
        tau * sum_{y >= x} (y - x) = (1 - tau) * sum_{y < x} (x - y),
    a strictly decreasing condition in x, so bisection on [min, max] converges.
    Iterates until the condition residual is below ``residual_tol`` (or the
    bracket collapses to machine precision).
    """
    _check_tau(tau)
    y = np.asarray(samples, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty sample set")
    if not np.all(np.isfinite(y)):
        raise ValueError("samples must be finite")

    def residual(x):
        above = y >= x
        return tau * np.sum(y[above] - x) - (1.0 - tau) * np.sum(x - y[~above])

    lo, hi = float(y.min()), float(y.max())
    if lo == hi:
        return lo
    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:  # bracket collapsed to adjacent floats
            break
        r = residual(mid)
        if abs(r) < residual_tol:
            return mid
        if r > 0:  # condition still positive: expectile lies above mid
            lo = mid
        else:
            hi = mid
    return mid


def scalar_expectile_rows(samples, tau, iters=80):
    """Row-wise expectiles of a (rows, n) array, by vectorized bisection.

    Same first-order condition as ``scalar_expectile``; the fixed iteration
    count shrinks each bracket by 2^-iters of the row's range, far below the
    scalar version's residual tolerance for any reasonably scaled data.
    """
    _check_tau(tau)
    y = np.asarray(samples, dtype=float)
    if y.ndim != 2 or y.shape[1] == 0:
        raise ValueError("expected a (rows, n) array with n >= 1")
    lo = y.min(axis=1)
    hi = y.max(axis=1)
    mid = 0.5 * (lo + hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        d = y - mid[:, None]
        residual = tau * np.sum(np.maximum(d, 0.0), axis=1) - (1.0 - tau) * np.sum(
            np.maximum(-d, 0.0), axis=1
        )
        go_up = residual > 0
        lo = np.where(go_up, mid, lo)
        hi = np.where(go_up, hi, mid)
    return mid


def protester_loss(protester, states, critic_values, tau):
    """Mean expectile loss of V(s) against per-sample critic values.

    ``critic_values`` are treated as constants; no gradient flows toward the
    critic that produced them.
    """
    v = protester.forward(states)[:, 0]
    return float(np.mean(expectile_loss(critic_values, v, tau)))


def protester_loss_grads(protester, states, critic_values, tau):
    """Loss and parameter gradients for one protester regression step."""
    states = np.asarray(states)
    q = np.asarray(critic_values, dtype=float).ravel()
    if states.shape[0] != q.shape[0]:
        raise ValueError("batch size mismatch between states and critic values")
    if states.shape[0] == 0:
        raise ValueError("empty batch")
    v = protester.forward(states)[:, 0]
    loss = float(np.mean(expectile_loss(q, v, tau)))
    upstream = (expectile_loss_grad(q, v, tau) / q.shape[0])[:, None]
    grads, _ = protester.backward(upstream)
    return loss, grads


def min_atom_values(atoms):
    """Minimum over all critic atoms per sample: atoms has shape (B, N, M)."""
    atoms = np.asarray(atoms)
    if atoms.ndim != 3:
        raise ValueError(f"expected (batch, critics, atoms), got shape {atoms.shape}")
    return atoms.min(axis=(1, 2))


def protester_loss_distributional(protester, states, atoms, tau):
    """Distributional-critic variant: regression target is the minimum atom
    across all critics and atom slots (online critics, per sample)."""
    return protester_loss(protester, states, min_atom_values(atoms), tau)


def protester_loss_distributional_grads(protester, states, atoms, tau):
    return protester_loss_grads(protester, states, min_atom_values(atoms), tau)
