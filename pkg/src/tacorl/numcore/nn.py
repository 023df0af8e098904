"""Layers built on the autodiff core: dense, MLP, layer norm, attention, LSTM."""
from __future__ import annotations

import copy
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Container that discovers parameters and sub-modules by attribute."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for k, arr in state.items():
            if k not in own:
                continue
            if own[k].shape != arr.shape:
                raise T.ShapeError(f"{k}: expected shape {own[k].shape}, got {arr.shape}")
            own[k].data = np.array(arr, dtype=np.float64, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def clone(self) -> "Module":
        return copy.deepcopy(self)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = _param(_uniform(rng, bound, (n_in, n_out)))
        self.bias = _param(_uniform(rng, bound, (n_out,)))

    def forward(self, x) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class MLP(Module):
    """ReLU feed-forward stack; the output layer is linear unless ``final_act``."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, final_act: bool = False):
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
        self.final_act = final_act

    def forward(self, x) -> Tensor:
        n = len(self.layers)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < n - 1 or self.final_act:
                x = T.relu(x)
        return x


class LayerNorm(Module):
    def __init__(self, width: int):
        self.gain = _param(np.ones(width))
        self.bias = _param(np.zeros(width))

    def forward(self, x) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class SelfAttention(Module):
    """Multi-head self-attention with a key mask (True = real step)."""

    def __init__(self, width: int, heads: int, rng: np.random.Generator):
        if width % heads:
            raise ValueError(f"width {width} not divisible by heads {heads}")
        self.heads = heads
        self.qkv = Linear(width, 3 * width, rng)
        self.out = Linear(width, width, rng)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        b, n, w = x.shape
        h = self.heads
        dh = w // h
        qkv = self.qkv(x).reshape(b, n, 3, h, dh)
        # -> (3, b, h, n, dh)
        q = T.swapaxes(qkv[:, :, 0], 1, 2)
        k = T.swapaxes(qkv[:, :, 1], 1, 2)
        v = T.swapaxes(qkv[:, :, 2], 1, 2)
        scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
        # masked keys get a large negative bias; exp underflows to exactly 0
        bias = np.where(mask[:, None, None, :], 0.0, -1e30)
        attn = T.softmax(scores + bias, axis=-1)
        ctx = T.matmul(attn, v)  # b, h, n, dh
        ctx = T.swapaxes(ctx, 1, 2).reshape(b, n, w)
        return self.out(ctx)


class TransformerBlock(Module):
    def __init__(self, width: int, heads: int, ff: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(width)
        self.attn = SelfAttention(width, heads, rng)
        self.ln2 = LayerNorm(width)
        self.ff = MLP([width, ff, width], rng)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = x + self.attn(self.ln1(x), mask)
        return x + self.ff(self.ln2(x))


class LSTM(Module):
    """Stacked LSTM; gate order (input, forget, cell, output)."""

    def __init__(self, n_in: int, hidden: int, layers: int, rng: np.random.Generator):
        self.hidden = hidden
        self.cells = []
        for i in range(layers):
            width = n_in if i == 0 else hidden
            cell = Linear(width + hidden, 4 * hidden, rng)
            # forget-gate bias starts at 1
            cell.bias.data[hidden : 2 * hidden] = 1.0
            self.cells.append(cell)

    def initial_state(self, batch: int) -> list[tuple[Tensor, Tensor]]:
        z = np.zeros((batch, self.hidden))
        return [(Tensor(z), Tensor(z)) for _ in self.cells]

    def step(self, x: Tensor, state: list[tuple[Tensor, Tensor]]):
        new_state = []
        hsz = self.hidden
        for cell, (h, c) in zip(self.cells, state):
            hc = T.lstm_cell(cell(T.concat([x, h], axis=-1)), c)
            h, c = hc[:, :hsz], hc[:, hsz:]
            new_state.append((h, c))
            x = h
        return x, new_state
