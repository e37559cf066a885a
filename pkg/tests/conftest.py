import numpy as np
import pytest


def finite_diff_grads(loss_fn, params, eps=1e-5):
    """Central-difference gradients of loss_fn() with respect to every entry of
    every array in ``params`` (mutated in place and restored)."""
    grads = []
    for p in params:
        g = np.zeros_like(p, dtype=np.float64)
        flat = p.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn()
            flat[i] = orig - eps
            lo = loss_fn()
            flat[i] = orig
            g.ravel()[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    """Relative-error check used by every gradient oracle test."""
    for i, (a, n) in enumerate(zip(analytic, numeric)):
        np.testing.assert_allclose(
            np.asarray(a, dtype=np.float64),
            np.asarray(n, dtype=np.float64),
            rtol=rtol,
            atol=atol,
            err_msg=f"gradient mismatch in parameter {i}",
        )


@pytest.fixture
def rng():
    return np.random.default_rng(42)
