"""Dense layers, small MLP stacks and a GRU cell built on :mod:`value`."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .value import ShapeMismatch, Value, affine, as_value, parameter

ACTIVATIONS = ("none", "relu", "sigmoid", "tanh")


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def _activate(x: Value, activation: str) -> Value:
    if activation == "none":
        return x
    if activation == "relu":
        return x.relu()
    if activation == "sigmoid":
        return x.sigmoid()
    if activation == "tanh":
        return x.tanh()
    raise ValueError(f"unknown activation {activation!r}")


@dataclass
class DenseLayer:
    weight: Value  # (out, in)
    bias: Value  # (out,)
    activation: str = "none"

    @classmethod
    def create(cls, in_dim: int, out_dim: int, rng: np.random.Generator,
               activation: str = "none") -> "DenseLayer":
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        return cls(parameter(glorot_uniform(rng, out_dim, in_dim)),
                   parameter(np.zeros(out_dim)), activation)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def parameters(self, prefix: str = "") -> dict[str, Value]:
        return {f"{prefix}weight": self.weight, f"{prefix}bias": self.bias}

    def __call__(self, x) -> Value:
        return forward_dense(self, x)


def forward_dense(layer: DenseLayer, x) -> Value:
    """activation(W x + b) over the last axis of ``x``."""
    x = as_value(x)
    if x.shape[-1] != layer.in_dim:
        raise ShapeMismatch(f"expected last dimension {layer.in_dim}, got {x.shape[-1]}")
    return _activate(affine(x, layer.weight, layer.bias), layer.activation)


@dataclass
class Mlp:
    layers: list[DenseLayer] = field(default_factory=list)

    @classmethod
    def create(cls, sizes: list[int], rng: np.random.Generator, hidden_activation: str = "relu",
               output_activation: str = "none") -> "Mlp":
        layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            layers.append(DenseLayer.create(a, b, rng, output_activation if last else hidden_activation))
        return cls(layers)

    def parameters(self, prefix: str = "") -> dict[str, Value]:
        params = {}
        for i, layer in enumerate(self.layers):
            params.update(layer.parameters(f"{prefix}{i}/"))
        return params

    def __call__(self, x) -> Value:
        for layer in self.layers:
            x = forward_dense(layer, x)
        return x


@dataclass
class GruCell:
    """GRU with reset gate applied to the recurrent candidate term.

    r = sig(W_ir x + b_ir + W_hr h + b_hr)
    z = sig(W_iz x + b_iz + W_hz h + b_hz)
    n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h' = (1 - z) * n + z * h

    The three gates are stored stacked as (3*hidden, ·) in r, z, n order.
    """

    weight_ih: Value
    weight_hh: Value
    bias_ih: Value
    bias_hh: Value

    @classmethod
    def create(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "GruCell":
        w_ih = np.concatenate([glorot_uniform(rng, hidden_size, input_size) for _ in range(3)])
        w_hh = np.concatenate([glorot_uniform(rng, hidden_size, hidden_size) for _ in range(3)])
        return cls(parameter(w_ih), parameter(w_hh),
                   parameter(np.zeros(3 * hidden_size)), parameter(np.zeros(3 * hidden_size)))

    @property
    def hidden_size(self) -> int:
        return self.weight_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.weight_ih.shape[1]

    def parameters(self, prefix: str = "") -> dict[str, Value]:
        return {f"{prefix}weight_ih": self.weight_ih, f"{prefix}weight_hh": self.weight_hh,
                f"{prefix}bias_ih": self.bias_ih, f"{prefix}bias_hh": self.bias_hh}

    def initial_hidden(self, batch: int) -> Value:
        return Value(np.zeros((batch, self.hidden_size)))


def gru_step(cell: GruCell, x, h) -> Value:
    x, h = as_value(x), as_value(h)
    if x.shape[-1] != cell.input_size or h.shape[-1] != cell.hidden_size:
        raise ShapeMismatch(
            f"gru expects input {cell.input_size} / hidden {cell.hidden_size}, "
            f"got {x.shape[-1]} / {h.shape[-1]}")
    hs = cell.hidden_size
    gi = affine(x, cell.weight_ih, cell.bias_ih)
    gh = affine(h, cell.weight_hh, cell.bias_hh)
    r = (gi[..., :hs] + gh[..., :hs]).sigmoid()
    z = (gi[..., hs:2 * hs] + gh[..., hs:2 * hs]).sigmoid()
    n = (gi[..., 2 * hs:] + r * gh[..., 2 * hs:]).tanh()
    return n + z * (h - n)
