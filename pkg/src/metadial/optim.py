"""Optimizers over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .autodiff import ContractError, Tensor


class Adam:
    """Adam with bias correction; ``lr`` is mutable for schedule halving."""

    def __init__(self, params: dict[str, Tensor], lr=0.003, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, params: dict[str, Tensor]) -> None:
        """Update ``params`` in place from their ``.grad`` and clear the grads."""
        missing = [k for k in self.m if params[k].grad is None]
        if missing:
            raise ContractError(f"adam step: no gradient for {missing[:5]}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, p in params.items():
            g = p.grad
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype, copy=False)
            p.grad = None


def sgd_step(params: dict[str, Tensor], lr: float) -> dict[str, Tensor]:
    """Return fresh leaf tensors ``p - lr * p.grad``; the inputs are not touched."""
    out = {}
    for k, p in params.items():
        if p.grad is None:
            raise ContractError(f"sgd step: no gradient for {k!r}")
        out[k] = Tensor((p.data - lr * p.grad).astype(p.data.dtype, copy=False), requires_grad=True, name=k)
    return out


def clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: Tensor(p.data.copy(), requires_grad=True, name=k) for k, p in params.items()}
