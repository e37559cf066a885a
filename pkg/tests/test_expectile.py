import numpy as np
import pytest

from moderl.expectile import (
    expectile_loss,
    min_atom_values,
    protester_loss,
    protester_loss_distributional,
    protester_loss_distributional_grads,
    protester_loss_grads,
    scalar_expectile,
    scalar_expectile_rows,
)
from moderl.nets import MLP, Adam

from conftest import assert_grads_close, finite_diff_grads


def grid_expectile(samples, tau, lo=None, hi=None, points=200_001):
    """Independent oracle: dense 1-D grid minimization of the mean loss."""
    samples = np.asarray(samples, dtype=float)
    lo = samples.min() if lo is None else lo
    hi = samples.max() if hi is None else hi
    grid = np.linspace(lo, hi, points)
    losses = np.mean(expectile_loss(samples[:, None], grid[None, :], tau), axis=0)
    return grid[np.argmin(losses)]


class TestExpectileLoss:
    def test_symmetric_case_is_half_squared_error(self):
        assert expectile_loss(2.0, 1.0, 0.5) == 0.5

    def test_branch_values(self):
        assert expectile_loss(2.0, 1.0, 0.01) == pytest.approx(0.01)
        assert expectile_loss(0.0, 1.0, 0.01) == pytest.approx(0.99)

    def test_zero_at_equality(self, rng):
        y = rng.normal(size=50)
        for tau in (0.01, 0.3, 0.5, 0.9):
            assert np.all(expectile_loss(y, y, tau) == 0.0)

    def test_nonnegative(self, rng):
        y = rng.normal(size=100)
        x = rng.normal(size=100)
        assert np.all(expectile_loss(y, x, 0.23) >= 0.0)

    def test_invalid_tau(self):
        with pytest.raises(ValueError):
            expectile_loss(1.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            expectile_loss(1.0, 0.0, 1.0)


class TestScalarExpectile:
    def test_symmetric_level_is_mean(self):
        assert scalar_expectile([1.0, 2.0, 3.0], 0.5) == pytest.approx(2.0, abs=1e-10)

    def test_two_point_set_equals_tau(self):
        # First-order condition tau*(1-x) = (1-tau)*x gives x = tau exactly;
        # cross-checked against the dense grid oracle.
        for tau in (0.01, 0.13, 0.5, 0.99):
            val = scalar_expectile([0.0, 1.0], tau)
            assert val == pytest.approx(tau, abs=1e-8)
            assert val == pytest.approx(grid_expectile([0.0, 1.0], tau), abs=1e-4)

    def test_monotone_in_tau_against_grid_oracle(self, rng):
        samples = rng.normal(size=40)
        taus = [0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99]
        values = [scalar_expectile(samples, t) for t in taus]
        assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))
        for t, v in zip(taus, values):
            assert v == pytest.approx(grid_expectile(samples, t), abs=2e-4)

    def test_bounded_by_sample_range(self, rng):
        for _ in range(20):
            samples = rng.normal(size=rng.integers(1, 30))
            tau = rng.uniform(0.01, 0.99)
            v = scalar_expectile(samples, tau)
            assert samples.min() - 1e-12 <= v <= samples.max() + 1e-12

    def test_mean_at_half_to_1e10(self, rng):
        for _ in range(50):
            samples = rng.normal(size=rng.integers(2, 50))
            assert abs(scalar_expectile(samples, 0.5) - samples.mean()) < 1e-10

    def test_small_tau_approaches_minimum(self, rng):
        # Executable limit form: the tau->0 expectile pinches onto the sample
        # minimum within a vanishing fraction of the range.
        for _ in range(20):
            samples = rng.normal(size=25)
            spread = samples.max() - samples.min()
            gap = scalar_expectile(samples, 1e-6) - samples.min()
            assert 0.0 <= gap < 1e-3 * spread

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            scalar_expectile([], 0.5)

    def test_rows_variant_matches_scalar(self, rng):
        rows = rng.normal(size=(15, 8))
        for tau in (0.01, 0.5, 0.9):
            batch = scalar_expectile_rows(rows, tau)
            single = [scalar_expectile(r, tau) for r in rows]
            np.testing.assert_allclose(batch, single, atol=1e-8)


class TestProtesterLoss:
    def test_zero_when_values_match(self, rng):
        net = MLP([2, 1], rng=rng, dtype=np.float64)
        states = rng.normal(size=(8, 2))
        q = net.forward(states)[:, 0]
        assert protester_loss(net, states, q, 0.01) == 0.0

    def test_constant_net_converges_to_scalar_expectile(self, rng):
        # Bias-only linear net on all-zero states reduces to scalar expectile
        # regression; Adam should land within 1e-3 of the bisection oracle.
        net = MLP([1, 1], rng=rng, dtype=np.float64)
        net.weights[0][...] = 0.0
        net.biases[0][...] = 0.0
        states = np.zeros((64, 1))
        q = rng.normal(size=64) * 2.0 + 1.0
        opt = Adam(net.params, lr=5e-3)
        tau = 0.01
        for _ in range(20_000):
            _, grads = protester_loss_grads(net, states, q, tau)
            opt.step(net.params, grads)
        target = scalar_expectile(q, tau)
        assert net.forward(states)[0, 0] == pytest.approx(target, abs=1e-3)

    def test_gradient_matches_finite_differences(self, rng):
        net = MLP([3, 10, 1], rng=rng, dtype=np.float64)
        states = rng.normal(size=(12, 3))
        q = rng.normal(size=12)
        _, analytic = protester_loss_grads(net, states, q, 0.01)
        numeric = finite_diff_grads(lambda: protester_loss(net, states, q, 0.01), net.params)
        assert_grads_close(analytic, numeric)


class TestDistributionalProtesterLoss:
    def test_min_over_enumerated_atoms(self):
        atoms = np.array([[[1.0, 4.0, 2.0], [3.0, 0.0, 5.0]]])
        assert min_atom_values(atoms)[0] == 0.0

    def test_single_atom_reduces_to_plain_loss(self, rng):
        net = MLP([2, 6, 1], rng=rng, dtype=np.float64)
        states = rng.normal(size=(10, 2))
        q = rng.normal(size=10)
        atoms = q.reshape(10, 1, 1)
        plain = protester_loss(net, states, q, 0.05)
        dist = protester_loss_distributional(net, states, atoms, 0.05)
        assert plain == dist

    def test_constant_atoms_regression(self, rng):
        net = MLP([1, 8, 1], rng=rng, dtype=np.float64)
        states = np.ones((32, 1))
        atoms = np.full((32, 2, 3), 2.5)
        opt = Adam(net.params, lr=1e-2)
        for _ in range(5_000):
            _, grads = protester_loss_distributional_grads(net, states, atoms, 0.01)
            opt.step(net.params, grads)
        assert net.forward(states)[0, 0] == pytest.approx(2.5, abs=1e-3)
