"""Named parameter store and the Adam optimizer."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError

__all__ = ["ParamStore", "adam_step"]


class ParamStore:
    """Named learnable tensors plus per-parameter Adam moments."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, data) -> Tensor:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self):
        return list(self.params)

    def n_values(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grads(self):
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Collected gradients after a backward pass; missing grads are zeros."""
        out = {}
        for name, t in self.params.items():
            out[name] = np.zeros_like(t.data) if t.grad is None else t.grad
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for name, t in self.params.items():
            if name not in state:
                raise KeyError(f"missing parameter {name!r} in state dict")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ShapeError(f"parameter {name!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update; increments the store's step count."""
    missing = set(store.params) - set(grads)
    if missing:
        raise KeyError(f"missing gradient for parameters: {sorted(missing)}")
    unknown = set(grads) - set(store.params)
    if unknown:
        raise KeyError(f"gradients for unknown parameters: {sorted(unknown)}")
    store.step += 1
    bc1 = 1.0 - beta1**store.step
    bc2 = 1.0 - beta2**store.step
    for name, t in store.params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != t.data.shape:
            raise ShapeError(f"gradient for {name!r}: {g.shape} vs {t.data.shape}")
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        t.data = t.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
