"""Autoregressive mel decoder: prenet on the previous frame, one SwishRNN layer, linear head.

All projections use the row-stable matmul so that ``decode_sequence`` with
teacher forcing is bit-identical to looping ``decode_step`` over the targets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .layers import Linear, Module, SwishRNN, silu, swishrnn_output
from .numerics import Tensor


@dataclass
class DecoderState:
    c: Tensor             # recurrent pooled state (hidden,)
    prev_frame: Tensor    # previous mel frame (channels,)

    @classmethod
    def initial(cls, hidden: int, channels: int) -> "DecoderState":
        return cls(nx.Tensor(np.zeros(hidden)), nx.Tensor(np.zeros(channels)))


class ARDecoder(Module):
    def __init__(self, rng, cond_dim: int, channels: int, prenet_dim: int = 128, hidden: int = 256):
        self.channels = channels
        self.hidden = hidden
        self.prenet1 = Linear(rng, channels, prenet_dim)
        self.prenet2 = Linear(rng, prenet_dim, prenet_dim)
        self.rnn = SwishRNN(rng, prenet_dim + cond_dim, hidden)
        self.proj = Linear(rng, hidden, channels)

    def initial_state(self) -> DecoderState:
        return DecoderState.initial(self.hidden, self.channels)

    def _prenet(self, prev):
        return silu(self.prenet2(silu(self.prenet1(prev, stable=True)), stable=True))

    def _frames(self, prev, e, c0) -> tuple[Tensor, Tensor]:
        p = self.rnn
        z = nx.concat([self._prenet(prev), e], axis=1)
        x1 = nx.matmul(z, p.W1, stable=True)
        x2 = nx.matmul(z, p.W2, stable=True)
        C = nx.swish_scan(x1, c0, p.alpha, p.beta)
        h = swishrnn_output(C, x2, p, stable=True)
        return self.proj(h, stable=True), C


def decode_step(e_t, state: DecoderState, dec: ARDecoder) -> tuple[Tensor, DecoderState]:
    """One AR step: returns the new frame (channels,) and the updated state."""
    e_t = nx.reshape(nx.as_tensor(e_t), (1, -1))
    prev = nx.reshape(state.prev_frame, (1, -1))
    frame, C = dec._frames(prev, e_t, state.c)
    frame = nx.reshape(frame, (-1,))
    return frame, DecoderState(nx.reshape(C, (-1,)), frame)


def decode_sequence(e, dec: ARDecoder, targets=None) -> Tensor:
    """Decode ``len(e)`` frames.

    With ``targets`` the previous-frame input is the ground truth (teacher
    forcing, evaluated in parallel); without, each step feeds back its own output.
    """
    e = nx.as_tensor(e)
    T = e.shape[0]
    if targets is not None:
        targets = nx.as_tensor(targets)
        if targets.shape != (T, dec.channels):
            raise ValueError(f"targets shape {targets.shape} != ({T}, {dec.channels})")
        prev = np.concatenate([np.zeros((1, dec.channels)), targets.data[:-1]], axis=0)
        frames, _ = dec._frames(prev, e, np.zeros(dec.hidden))
        return frames
    state = dec.initial_state()
    frames = []
    for t in range(T):
        frame, state = decode_step(nx.getitem(e, t), state, dec)
        frames.append(nx.reshape(frame, (1, -1)))
    return nx.concat(frames, axis=0)


def reconstruction_loss(pred, target) -> Tensor:
    """Mean absolute error over all cells."""
    pred, target = nx.as_tensor(pred), nx.as_tensor(target)
    if pred.shape != target.shape:
        raise nx.ShapeError(f"reconstruction_loss: shapes {pred.shape} and {target.shape}")
    return nx.mean(nx.absolute(nx.sub(pred, target)))
