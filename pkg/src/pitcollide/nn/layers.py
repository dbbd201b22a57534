"""Parameters, dense layers, time encoding and attention blocks."""
from __future__ import annotations

from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """Trainable leaf tensor. Frozen parameters never receive gradients."""

    def __init__(self, data, name: str = ""):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, value: bool):
        self._frozen = bool(value)
        self.requires_grad = not self._frozen
        if self._frozen:
            self.grad = None


class Module:
    """Container that discovers parameters in attributes, lists and sub-modules."""

    def named_parameters(self, prefix: str = "") -> List[tuple]:
        out = []
        for key, val in vars(self).items():
            out.extend(_collect(val, f"{prefix}{key}"))
        return out

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        named = dict(self.named_parameters())
        if set(named) != set(state):
            missing = sorted(set(named) ^ set(state))
            raise KeyError(f"parameter names differ: {missing[:5]}")
        for k, p in named.items():
            if p.data.shape != np.shape(state[k]):
                raise ValueError(f"shape mismatch for {k}: {p.data.shape} vs {np.shape(state[k])}")
            p.data = np.array(state[k], dtype=np.float64)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def freeze(self, flag: bool = True):
        for p in self.parameters():
            p.frozen = flag


def _collect(val, name):
    if isinstance(val, Parameter):
        return [(name, val)]
    if isinstance(val, Module):
        return val.named_parameters(name + ".")
    if isinstance(val, (list, tuple)):
        out = []
        for i, v in enumerate(val):
            out.extend(_collect(v, f"{name}.{i}"))
        return out
    return []


class Dense(Module):
    """Affine map x W + b with He-style uniform fan-in initialization."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 1.0):
        bound = gain * np.sqrt(6.0 / n_in)
        self.W = Parameter(rng.uniform(-bound, bound, size=(n_in, n_out)))
        self.b = Parameter(np.zeros(n_out))
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x) -> Tensor:
        return T.matmul(T.as_tensor(x), self.W) + self.b

    def freeze(self, flag: bool = True):
        self.W.frozen = flag
        self.b.frozen = flag


ACTIVATIONS = {"swish": T.swish, "tanh": T.tanh, "softplus": T.softplus, "identity": lambda x: x}


class MLP(Module):
    """Stack of dense layers with a shared hidden activation; the last layer is linear unless
    ``final_activation`` is set."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, activation: str = "swish",
                 final_activation: Optional[str] = None, final_gain: float = 1.0):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.layers = [Dense(a, b, rng, gain=final_gain if i == len(sizes) - 2 else 1.0)
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]
        self.activation = activation
        self.final_activation = final_activation

    def __call__(self, x) -> Tensor:
        act = ACTIVATIONS[self.activation]
        h = T.as_tensor(x)
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = act(h)
            elif self.final_activation:
                h = ACTIVATIONS[self.final_activation](h)
        return h


def time_encoding(t, d: int) -> np.ndarray:
    """Sinusoidal encoding with interleaved sin/cos: PE[2i] = sin(t / 10000^(2i/d)), PE[2i+1] = cos(...)."""
    if d % 2:
        raise ValueError("encoding dimension must be even")
    t = np.asarray(t, dtype=np.float64)
    freq = 1.0 / 10000.0 ** (2.0 * np.arange(d // 2) / d)
    ang = t[..., None] * freq
    out = np.empty(t.shape + (d,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


class Attention(Module):
    """Single-head scaled dot-product attention with learned projections.

    ``query`` has shape (..., n_q, d_q) and ``context`` (..., n_k, d_c); the
    output has shape (..., n_q, d_model).
    """

    def __init__(self, d_query: int, d_context: int, d_model: int, rng: np.random.Generator):
        self.Wq = Dense(d_query, d_model, rng)
        self.Wk = Dense(d_context, d_model, rng)
        self.Wv = Dense(d_context, d_model, rng)

    def __call__(self, query, context=None) -> Tensor:
        context = query if context is None else context
        return T.attention(self.Wq(query), self.Wk(context), self.Wv(context))


def freeze_leading(layers: Iterable[Dense], fraction: float = 0.6) -> int:
    """Freeze the first floor(fraction * L) layers; returns how many were frozen."""
    layers = list(layers)
    n = int(np.floor(fraction * len(layers) + 1e-9))
    for i, layer in enumerate(layers):
        layer.freeze(i < n)
    return n
