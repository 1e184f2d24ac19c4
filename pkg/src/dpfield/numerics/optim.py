"""Parameter storage, gradient collection and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, ShapeError
from .tensor import Tensor


class ParameterStore:
    """Named trainable tensors in a fixed insertion order.

    The iteration order is part of the checkpoint format, so parameters are
    never re-sorted after creation.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name, value):
        if name in self._tensors:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(np.asarray(value))
        t.requires_grad = True
        self._tensors[name] = t
        return t

    def __getitem__(self, name) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def values(self):
        return self._tensors.values()

    @property
    def n_params(self):
        return sum(t.data.size for t in self._tensors.values())

    @property
    def dtype(self):
        return next(iter(self._tensors.values())).dtype

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = np.zeros_like(t.data)

    def astype(self, dtype):
        """Copy of the store with every tensor cast to ``dtype``."""
        out = ParameterStore()
        for name, t in self._tensors.items():
            out.add(name, Tensor(t.data.astype(dtype)))
        return out

    def copy(self):
        return self.astype(self.dtype)

    def state_arrays(self):
        return {name: t.data for name, t in self._tensors.items()}

    def load_arrays(self, arrays):
        """Overwrite values in place; names and shapes must match exactly."""
        if list(arrays) != self.names():
            raise ShapeError(f"parameter names differ: {list(arrays)} vs {self.names()}")
        for name, arr in arrays.items():
            t = self._tensors[name]
            if arr.shape != t.shape:
                raise ShapeError(f"parameter {name}: shape {arr.shape} vs {t.shape}")
            t.data = np.array(arr, dtype=t.dtype)


def backward_gradients(loss, params):
    """Populate ``grad`` of every parameter with d(loss)/d(param).

    Parameters that do not take part in ``loss`` end up with an exact zero
    gradient.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"loss must be a scalar tensor, got shape {shape}")
    params.zero_grad()
    loss.backward()


def global_grad_norm(params):
    return float(np.sqrt(sum(float(np.sum(t.grad.astype(np.float64) ** 2)) for t in params.values())))


def clip_grad_norm(params, max_norm):
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``."""
    norm = global_grad_norm(params)
    if max_norm is not None and max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for t in params.values():
            t.grad = (t.grad * scale).astype(t.dtype)
    return norm


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    ema_decay: float = 0.0  # 0 keeps no running average of the weights
    ema: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        for name, t in params.items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adam_update(params, state):
    """One bias-corrected Adam step, in place. Gradients are zeroed after."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, t in params.items():
        if t.grad is None:
            raise ContractError(f"parameter {name!r} has no gradient; call backward first")
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        g = t.grad
        m = state.m[name]
        v = state.v[name]
        if m.shape != t.shape:
            raise ShapeError(f"Adam moment for {name!r} has shape {m.shape}, parameter {t.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        t.data = (t.data - update).astype(t.dtype)
        t.grad = np.zeros_like(t.data)
        if state.ema_decay > 0:
            avg = state.ema.setdefault(name, t.data.copy())
            avg *= state.ema_decay
            avg += (1.0 - state.ema_decay) * t.data
