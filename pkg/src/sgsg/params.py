"""Named parameter storage, initialisation and the Adam optimizer."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, default_dtype


class ParamStore:
    """Ordered map name -> trainable Tensor, with matching gradients."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    @property
    def grads(self) -> dict[str, np.ndarray]:
        """Gradients by name; parameters the loss never reached get zeros."""
        return {n: (np.zeros_like(t.data) if t.grad is None else t.grad)
                for n, t in self.params.items()}

    def count(self, prefix: str = "") -> int:
        return int(sum(t.data.size for n, t in self.params.items() if n.startswith(prefix)))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = set(self.params) - set(state)
            extra = set(state) - set(self.params)
            raise KeyError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for n, t in self.params.items():
            if state[n].shape != t.shape:
                raise ValueError(f"{n}: shape {state[n].shape} != {t.shape}")
            t.data = np.array(state[n], dtype=t.dtype)

    def astype(self, dtype) -> None:
        for t in self.params.values():
            t.data = t.data.astype(dtype)
            t.grad = None


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(default_dtype())


def add_linear(store: ParamStore, rng, name: str, n_in: int, n_out: int) -> None:
    store.add(f"{name}.W", uniform_init(rng, (n_out, n_in), n_in))
    store.add(f"{name}.b", uniform_init(rng, (n_out,), n_in))


def add_lstm(store: ParamStore, rng, name: str, d_in: int, d_h: int) -> None:
    fan_in = d_in + d_h
    store.add(f"{name}.W_ih", uniform_init(rng, (4 * d_h, d_in), fan_in))
    store.add(f"{name}.W_hh", uniform_init(rng, (4 * d_h, d_h), fan_in))
    b = uniform_init(rng, (4 * d_h,), fan_in)
    b[d_h:2 * d_h] = 1.0  # forget gate
    store.add(f"{name}.b", b)


def add_conv(store: ParamStore, rng, name: str, c_in: int, c_out: int, k: int) -> None:
    fan_in = c_in * k * k
    store.add(f"{name}.K", uniform_init(rng, (c_out, c_in, k, k), fan_in))
    store.add(f"{name}.b", uniform_init(rng, (c_out,), fan_in))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, state: AdamState) -> None:
    """In-place Adam update with bias-corrected moments."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)
