"""Shared fixtures and an independent finite-difference oracle."""

import numpy as np
import pytest

from metadial import autodiff as ad


def numeric_grad(f, arrays, eps=1e-6):
    """Central differences of scalar ``f(arrays)`` w.r.t. every entry of every array.

    Written against plain numpy so it shares no code with the engine.
    """
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f(arrays)
            flat[i] = orig - eps
            down = f(arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        out.append(g)
    return out


def analytic_grad(build, arrays):
    """Gradients from the engine for ``build(*tensors) -> scalar Tensor``."""
    ts = [ad.param(a.copy()) for a in arrays]
    ad.backward(build(*ts))
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a))))


def check_op(build, arrays, tol=1e-6):
    """Max relative error between engine and finite-difference gradients."""
    def f(arrs):
        with ad.no_grad():
            return build(*[ad.tensor(x) for x in arrs]).item()
    ana = analytic_grad(build, arrays)
    num = numeric_grad(f, [a.copy() for a in arrays])
    return max(rel_err(x, y) for x, y in zip(ana, num))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# A configuration small enough to run the whole pipeline in seconds.
TINY = {
    "sizes": {"source_train": 6, "source_val": 3, "source_test": 3, "target_adapt": [1, 2],
              "target_val": 2, "target_test": 3},
    "model": {"emb_dim": 8, "hidden": 8},
    "train": {"max_epochs": 1, "batch_size": 16},
    "adapt": {"max_epochs": 1, "batch_size": 16},
    "experiment": {"seeds": [0], "compare_size": 1, "transfer_adapt_sizes": [1]},
}
