"""Minimal module system and transformer building blocks."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Container that discovers parameters and sub-modules from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{path}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, arr in state.items():
            if name not in own:
                continue
            p = own[name]
            if p.shape != tuple(arr.shape):
                raise T.ShapeError(f"{name}: checkpoint shape {tuple(arr.shape)} != model shape {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)

    def to_dtype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=None) -> Parameter:
    bound = 1.0 / math.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape), dtype=dtype or T.get_default_dtype())


def zeros(shape, dtype=None) -> Parameter:
    return Parameter(np.zeros(shape), dtype=dtype or T.get_default_dtype())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = uniform_init(rng, (d_in, d_out), d_in)
        self.bias = zeros(d_out) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = Parameter(np.ones(d), dtype=T.get_default_dtype())
        self.bias = zeros(d)

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, scale: float = 0.02):
        self.weight = Parameter(rng.normal(0.0, scale, size=(n, d)), dtype=T.get_default_dtype())

    def forward(self, ids) -> Tensor:
        return T.take(self.weight, ids, axis=0)


class Mlp(Module):
    """Stack of Linear layers with GELU between them; ``dims=[d]`` is the identity."""

    def __init__(self, dims, rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.gelu(x)
        return x


def split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def merge_heads(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator):
        if d % heads:
            raise ValueError(f"width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)

    def forward(self, x_q: Tensor, x_kv: Tensor, key_mask: Optional[np.ndarray] = None) -> Tensor:
        """``key_mask`` is boolean [B, T_kv]; padded keys get no attention."""
        q = split_heads(self.q(x_q), self.heads)
        k = split_heads(self.k(x_kv), self.heads)
        v = split_heads(self.v(x_kv), self.heads)
        scores = T.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
        mask = None if key_mask is None else np.asarray(key_mask, bool)[:, None, None, :]
        attn = T.softmax(scores, axis=-1, mask=mask)
        return self.out(merge_heads(T.matmul(attn, v)))


class TransformerLayer(Module):
    """Pre-norm self-attention block."""

    def __init__(self, d: int, heads: int, d_ff: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.ln2 = LayerNorm(d)
        self.ff = Mlp([d, d_ff, d], rng)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, mask)
        return x + self.ff(self.ln2(x))


class TransformerEncoder(Module):
    """Learned absolute positions + a stack of pre-norm layers.

    With ``depth == 0`` this is just the positional-embedding add.
    """

    def __init__(self, d: int, depth: int, heads: int, max_len: int, rng: np.random.Generator,
                 d_ff: Optional[int] = None):
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(max_len, d)), dtype=T.get_default_dtype())
        self.layers = [TransformerLayer(d, heads, d_ff or 2 * d, rng) for _ in range(depth)]
        self.ln_out = LayerNorm(d) if depth else None

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        t = x.shape[-2]
        if t > self.pos.shape[0]:
            raise T.ShapeError(f"sequence length {t} exceeds positional table {self.pos.shape[0]}")
        if mask is not None and np.asarray(mask).shape != x.shape[:-1]:
            raise T.ShapeError(f"mask shape {np.asarray(mask).shape} does not match sequence {x.shape[:-1]}")
        x = x + self.pos[:t]
        for layer in self.layers:
            x = layer(x, mask)
        return self.ln_out(x) if self.ln_out is not None else x
