"""Phoneme-level SwishRNN-Transformer encoder and the SAIN-conditioned frame encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .alignment import SymbolSequence
from .layers import (SAIN, Conv1d, Embedding, LayerNorm, Module, MultiHeadAttention, SwishRNN,
                     dropout, sinusoidal_positions)
from .numerics import Tensor


@dataclass
class LinguisticEncoderConfig:
    vocab_size: int = 18
    blocks: int = 4
    hidden: int = 256
    heads: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")


@dataclass
class FrameEncoderConfig:
    blocks: int = 4
    hidden: int = 256
    heads: int = 2
    conv_layers: int = 2
    kernel: int = 9
    dropout: float = 0.1
    sain_eps: float = 1e-5

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ValueError(f"kernel must be odd, got {self.kernel}")


class SwishRNNTransformerBlock(Module):
    """attention -> add & norm -> SwishRNN -> add & norm."""

    def __init__(self, rng, hidden: int, heads: int, p_drop: float):
        self.attn = MultiHeadAttention(rng, hidden, heads)
        self.norm1 = LayerNorm(hidden)
        self.rnn = SwishRNN(rng, hidden, hidden)
        self.norm2 = LayerNorm(hidden)
        self.p_drop = p_drop

    def __call__(self, x, rng=None) -> Tensor:
        x = self.norm1(nx.add(x, dropout(self.attn(x), self.p_drop, rng, self.training)))
        return self.norm2(nx.add(x, dropout(self.rnn(x), self.p_drop, rng, self.training)))


class LinguisticEncoder(Module):
    def __init__(self, rng, cfg: LinguisticEncoderConfig):
        self.cfg = cfg
        self.embed = Embedding(rng, cfg.vocab_size, cfg.hidden, scale=1.0)
        self.blocks = [SwishRNNTransformerBlock(rng, cfg.hidden, cfg.heads, cfg.dropout)
                       for _ in range(cfg.blocks)]

    def __call__(self, seq: SymbolSequence, rng=None) -> Tensor:
        return linguistic_encode(seq, self, rng)


def linguistic_encode(seq: SymbolSequence, enc: LinguisticEncoder, rng=None) -> Tensor:
    x = nx.add(enc.embed(seq.symbols), sinusoidal_positions(seq.N, enc.cfg.hidden))
    for block in enc.blocks:
        x = block(x, rng)
    return x


class ConvSAINBlock(Module):
    """attention -> add & SAIN -> conv stack -> add & SAIN."""

    def __init__(self, rng, cfg: FrameEncoderConfig):
        self.attn = MultiHeadAttention(rng, cfg.hidden, cfg.heads)
        self.sain1 = SAIN(rng, cfg.hidden, cfg.hidden, cfg.sain_eps)
        self.convs = [Conv1d(rng, cfg.hidden, cfg.hidden, cfg.kernel) for _ in range(cfg.conv_layers)]
        self.sain2 = SAIN(rng, cfg.hidden, cfg.hidden, cfg.sain_eps)
        self.p_drop = cfg.dropout

    def __call__(self, x, s, rng=None) -> Tensor:
        x = self.sain1(nx.add(x, dropout(self.attn(x), self.p_drop, rng, self.training)), s)
        y = x
        for i, conv in enumerate(self.convs):
            y = conv(y)
            if i < len(self.convs) - 1:
                y = nx.relu(y)
        return self.sain2(nx.add(x, dropout(y, self.p_drop, rng, self.training)), s)


class FrameEncoder(Module):
    def __init__(self, rng, cfg: FrameEncoderConfig):
        self.cfg = cfg
        self.blocks = [ConvSAINBlock(rng, cfg) for _ in range(cfg.blocks)]

    def __call__(self, e, s, rng=None) -> Tensor:
        return frame_encode(e, s, self, rng)


def frame_encode(e, s, enc: FrameEncoder, rng=None) -> Tensor:
    """Encode the expanded frame sequence ``e`` conditioned on style vector ``s``."""
    e = nx.as_tensor(e)
    if e.shape[0] < 1:
        raise ValueError("frame_encode needs at least one frame")
    x = nx.add(e, sinusoidal_positions(e.shape[0], e.shape[1]))
    for block in enc.blocks:
        x = block(x, s, rng)
    return x
