"""Neural layers built on the autodiff substrate.

Each layer is a :class:`Module` holding its parameters as Tensors; the math is
kept in plain functions (``swishrnn_forward``, ``sain`` ...) that take the module
as their parameter bundle, so the functions can be tested on hand-set weights.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import numerics as nx
from .numerics import Tensor


class Module:
    training = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in own.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()


def _init(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    return nx.parameter(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape))


def swish(x, alpha=1.0, beta=0.0) -> Tensor:
    """``sigmoid(alpha * x + beta) * x``, differentiable in all three arguments."""
    x = nx.as_tensor(x)
    return nx.mul(nx.sigmoid(nx.add(nx.mul(alpha, x), beta)), x)


def silu(x) -> Tensor:
    return swish(x, 1.0, 0.0)


def gated_activation(a, b) -> Tensor:
    return nx.mul(nx.tanh(a), nx.sigmoid(b))


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return nx.mul(x, keep)


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / dim)
    out = np.zeros((length, dim))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)[:, : dim - dim // 2]
    return out


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True, zero: bool = False):
        self.weight = nx.parameter(np.zeros((d_in, d_out))) if zero else _init(rng, d_in, (d_in, d_out))
        self.bias = nx.parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x, stable: bool = False) -> Tensor:
        y = nx.matmul(x, self.weight, stable=stable)
        return y if self.bias is None else nx.add(y, self.bias)


class Embedding(Module):
    def __init__(self, rng, count: int, dim: int, scale: float = 1.0):
        self.count = count
        self.table = nx.parameter(rng.normal(0.0, scale, size=(count, dim)))

    def __call__(self, ids) -> Tensor:
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        if ids.size and (ids.min() < 0 or ids.max() >= self.count):
            bad = ids[(ids < 0) | (ids >= self.count)]
            raise KeyError(f"embedding id(s) {bad.tolist()} outside [0, {self.count})")
        return nx.take_rows(self.table, ids)


class Conv1d(Module):
    def __init__(self, rng, c_in: int, c_out: int, kernel: int, zero: bool = False):
        if kernel % 2 != 1:
            raise ValueError(f"kernel must be odd for same-length output, got {kernel}")
        shape = (kernel, c_in, c_out)
        self.weight = nx.parameter(np.zeros(shape)) if zero else _init(rng, kernel * c_in, shape)
        self.bias = nx.parameter(np.zeros(c_out))

    def __call__(self, x) -> Tensor:
        return nx.conv1d(x, self.weight, self.bias)


def conv_block(x, weight, bias=None) -> Tensor:
    """Non-causal same-length convolution, kernel taken from ``weight.shape[0]``."""
    return nx.conv1d(x, weight, bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = nx.parameter(np.ones(dim))
        self.beta = nx.parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x) -> Tensor:
        return nx.add(nx.mul(layer_norm(x, self.eps), self.gamma), self.beta)


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize each row over its features (no affine)."""
    x = nx.as_tensor(x)
    mu = nx.mean(x, axis=-1, keepdims=True)
    v = nx.var(x, axis=-1, keepdims=True)
    return nx.mul(nx.sub(x, mu), nx.power(nx.add(v, eps), -0.5))


# ----------------------------------------------------------------------------
# SwishRNN
# ----------------------------------------------------------------------------

class SwishRNN(Module):
    """Gated recurrent cell with two input projections and a swish pooling scan."""

    def __init__(self, rng, d_in: int, hidden: int):
        self.hidden = hidden
        self.W1 = _init(rng, d_in, (d_in, hidden))
        self.W2 = _init(rng, d_in, (d_in, hidden))
        self.W3 = _init(rng, hidden, (hidden, hidden))
        self.b_c = nx.parameter(np.zeros(hidden))
        self.b_sigma = nx.parameter(np.zeros(hidden))
        self.b_3 = nx.parameter(np.zeros(hidden))
        self.alpha = nx.parameter(np.array(1.0))
        self.beta = nx.parameter(np.array(0.0))

    def __call__(self, X, c0=None, stable: bool = False) -> Tensor:
        return swishrnn_forward(X, self, c0, stable=stable)


def swishrnn_states(X, p: SwishRNN, c0=None, stable: bool = False):
    """Run the recurrence; returns (C, X2) where C stacks the pooled states."""
    X = nx.as_tensor(X)
    if X.ndim != 2 or X.shape[1] != p.W1.shape[0]:
        raise nx.ShapeError(f"swishrnn: input {X.shape} does not match W1 {p.W1.shape}")
    x1 = nx.matmul(X, p.W1, stable=stable)
    x2 = nx.matmul(X, p.W2, stable=stable)
    if c0 is None:
        c0 = np.zeros(p.hidden)
    C = nx.swish_scan(x1, c0, p.alpha, p.beta)
    return C, x2


def swishrnn_output(C, x2, p: SwishRNN, stable: bool = False) -> Tensor:
    gated = nx.mul(nx.add(C, p.b_c), nx.sigmoid(nx.add(x2, p.b_sigma)))
    return nx.add(nx.matmul(gated, p.W3, stable=stable), p.b_3)


def swishrnn_forward(X, p: SwishRNN, c0=None, stable: bool = False) -> Tensor:
    C, x2 = swishrnn_states(X, p, c0, stable)
    return swishrnn_output(C, x2, p, stable)


# ----------------------------------------------------------------------------
# attention
# ----------------------------------------------------------------------------

class MultiHeadAttention(Module):
    def __init__(self, rng, hidden: int, heads: int):
        if hidden % heads:
            raise ValueError(f"hidden {hidden} not divisible by heads {heads}")
        self.heads = heads
        self.Wq = _init(rng, hidden, (hidden, hidden))
        self.Wk = _init(rng, hidden, (hidden, hidden))
        self.Wv = _init(rng, hidden, (hidden, hidden))
        self.bq = nx.parameter(np.zeros(hidden))
        self.bk = nx.parameter(np.zeros(hidden))
        self.bv = nx.parameter(np.zeros(hidden))
        self.Wo = _init(rng, hidden, (hidden, hidden))
        self.bo = nx.parameter(np.zeros(hidden))

    def __call__(self, X, mask=None) -> Tensor:
        return multi_head_attention(X, self, mask)


def multi_head_attention(X, p: MultiHeadAttention, mask=None, return_weights: bool = False):
    """Scaled dot-product self-attention; ``mask[j]`` False hides key position j."""
    X = nx.as_tensor(X)
    length, hidden = X.shape
    if mask is None:
        mask = np.ones(length, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (length,):
        raise ValueError(f"mask length {mask.shape} does not match sequence length {length}")
    bias = np.where(mask, 0.0, -1e30)[None, :]
    dh = hidden // p.heads
    Q = nx.add(nx.matmul(X, p.Wq), p.bq)
    K = nx.add(nx.matmul(X, p.Wk), p.bk)
    V = nx.add(nx.matmul(X, p.Wv), p.bv)
    heads, weights = [], []
    for h in range(p.heads):
        sl = (slice(None), slice(h * dh, (h + 1) * dh))
        q, k, v = nx.getitem(Q, sl), nx.getitem(K, sl), nx.getitem(V, sl)
        scores = nx.add(nx.mul(nx.matmul(q, nx.transpose(k)), 1.0 / np.sqrt(dh)), bias)
        w = nx.softmax(scores, axis=-1)
        weights.append(w)
        heads.append(nx.matmul(w, v))
    out = nx.add(nx.matmul(nx.concat(heads, axis=1), p.Wo), p.bo)
    if return_weights:
        return out, weights
    return out


# ----------------------------------------------------------------------------
# style-adaptive instance normalization
# ----------------------------------------------------------------------------

class SAIN(Module):
    """Per-utterance, per-channel normalization with style-predicted gain and bias.

    ``eps`` floors the channel variance, so channels with variance above it are
    normalized exactly and constant channels collapse to the bias.
    """

    def __init__(self, rng, style_dim: int, channels: int, eps: float = 1e-5):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.G_proj = nx.parameter(rng.normal(0.0, 0.1 / np.sqrt(style_dim), size=(style_dim, channels)))
        self.G_bias = nx.parameter(np.ones(channels))
        self.B_proj = nx.parameter(rng.normal(0.0, 0.1 / np.sqrt(style_dim), size=(style_dim, channels)))
        self.B_bias = nx.parameter(np.zeros(channels))
        self.eps = eps

    def gain_bias(self, s) -> tuple[Tensor, Tensor]:
        s = nx.reshape(nx.as_tensor(s), (1, -1))
        G = nx.add(nx.matmul(s, self.G_proj), self.G_bias)
        B = nx.add(nx.matmul(s, self.B_proj), self.B_bias)
        return G, B

    def __call__(self, x, s) -> Tensor:
        return sain(x, s, self)


def instance_normalize(x, eps: float) -> Tensor:
    x = nx.as_tensor(x)
    mu = nx.mean(x, axis=0, keepdims=True)
    v = nx.maximum(nx.var(x, axis=0, keepdims=True), eps)
    return nx.mul(nx.sub(x, mu), nx.power(v, -0.5))


def sain(x, s, p: SAIN) -> Tensor:
    G, B = p.gain_bias(s)
    return nx.add(nx.mul(G, instance_normalize(x, p.eps)), B)
