"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import ContractError, Tensor, backward, check_finite, no_grad, zero_grad


def grad_check(
    fn: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
    max_coords: int | None = 40,
    seed: int = 0,
) -> float:
    """Max over sampled coordinates of |analytic - numeric| / max(1, |analytic|).

    ``fn`` must rebuild the graph from ``params`` on every call and be
    deterministic.  Parameters are perturbed in place and restored.  Up to
    ``max_coords`` coordinates per tensor are sampled (all when None).
    """
    if not 0.0 < eps <= 1e-2:
        raise ContractError(f"eps must lie in (0, 1e-2], got {eps}")
    rng = np.random.default_rng(seed)
    zero_grad(params)
    with check_finite():
        loss = fn(params)
    backward(loss)
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}
    zero_grad(params)

    worst = 0.0
    with no_grad(), check_finite():
        for k, p in params.items():
            flat = p.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            for c in coords:
                orig = flat[c]
                flat[c] = orig + eps
                up = fn(params).item()
                flat[c] = orig - eps
                down = fn(params).item()
                flat[c] = orig
                numeric = (up - down) / (2.0 * eps)
                a = analytic[k].reshape(-1)[c]
                worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return float(worst)
