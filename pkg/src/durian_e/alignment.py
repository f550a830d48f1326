"""Phoneme-to-frame bridge: skip selection, length regulation, variance adaptors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .layers import Conv1d, Embedding, LayerNorm, Linear, Module
from .numerics import Tensor


@dataclass
class SymbolSequence:
    symbols: list[int]
    is_boundary: list[bool]

    def __post_init__(self):
        if len(self.symbols) != len(self.is_boundary):
            raise ValueError("symbols and is_boundary differ in length")
        if not any(not b for b in self.is_boundary):
            raise ValueError("sequence contains no phonemes (all boundary symbols)")

    @property
    def N(self) -> int:
        return len(self.symbols)

    @property
    def N_phonemes(self) -> int:
        return sum(1 for b in self.is_boundary if not b)

    def phoneme_index(self) -> np.ndarray:
        return np.flatnonzero(~np.asarray(self.is_boundary, dtype=bool))


@dataclass
class DurationAlignment:
    durations: np.ndarray

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=np.int64)
        if np.any(self.durations < 0):
            raise ValueError("durations must be non-negative")
        if self.total < 1:
            raise ValueError("durations sum to zero frames")

    @property
    def total(self) -> int:
        return int(self.durations.sum())

    def frame_index(self) -> np.ndarray:
        """Phoneme index of every output frame."""
        return np.repeat(np.arange(len(self.durations)), self.durations)


@dataclass
class VarianceTargets:
    duration: np.ndarray
    pitch: np.ndarray
    pitch_range: np.ndarray


def skip_select(h, seq: SymbolSequence) -> Tensor:
    h = nx.as_tensor(h)
    if h.shape[0] != seq.N:
        raise ValueError(f"hidden rows {h.shape[0]} != sequence length {seq.N}")
    return nx.take_rows(h, seq.phoneme_index())


def length_regulate(h, d: DurationAlignment | np.ndarray) -> Tensor:
    if not isinstance(d, DurationAlignment):
        d = DurationAlignment(d)
    h = nx.as_tensor(h)
    if len(d.durations) != h.shape[0]:
        raise ValueError(f"{len(d.durations)} durations for {h.shape[0]} phoneme rows")
    return nx.take_rows(h, d.frame_index())


def expand_values(values: np.ndarray, d: DurationAlignment | np.ndarray) -> np.ndarray:
    durations = d.durations if isinstance(d, DurationAlignment) else np.asarray(d, dtype=np.int64)
    return np.repeat(np.asarray(values, dtype=np.float64), durations)


def quantize_durations(pred) -> DurationAlignment:
    """Round half up, clamp at zero; an all-zero result gets one frame on the first phoneme."""
    pred = np.asarray(nx.as_tensor(pred).data, dtype=np.float64).reshape(-1)
    d = np.maximum(np.floor(pred + 0.5), 0).astype(np.int64)
    if d.sum() == 0:
        d[0] = 1
    return DurationAlignment(d)


class VariancePredictor(Module):
    """conv(k=3) -> relu -> norm -> conv(k=3) -> relu -> norm -> linear scalar head."""

    def __init__(self, rng, hidden: int, filters: int | None = None, kernel: int = 3):
        filters = filters or hidden
        self.conv1 = Conv1d(rng, hidden, filters, kernel)
        self.norm1 = LayerNorm(filters)
        self.conv2 = Conv1d(rng, filters, filters, kernel)
        self.norm2 = LayerNorm(filters)
        self.head = Linear(rng, filters, 1)

    def __call__(self, h) -> Tensor:
        x = self.norm1(nx.relu(self.conv1(h)))
        x = self.norm2(nx.relu(self.conv2(x)))
        return nx.reshape(self.head(x), (-1,))


class VarianceAdaptor(Module):
    """Duration/pitch/range predictors plus the embeddings added at frame level."""

    def __init__(self, rng, hidden: int, n_styles: int, n_speakers: int):
        self.duration = VariancePredictor(rng, hidden)
        self.pitch = VariancePredictor(rng, hidden)
        self.pitch_range = VariancePredictor(rng, hidden)
        self.pitch_embed = Linear(rng, 1, hidden)
        self.range_embed = Linear(rng, 1, hidden)
        self.style_table = Embedding(rng, n_styles, hidden, scale=0.3)
        self.speaker_table = Embedding(rng, n_speakers, hidden, scale=0.3)

    def style_vector(self, style_id: int) -> Tensor:
        return nx.reshape(self.style_table(style_id), (-1,))

    def predict(self, h) -> tuple[Tensor, Tensor, Tensor]:
        return predict_variances(h, self)


def predict_variances(h, p: VarianceAdaptor) -> tuple[Tensor, Tensor, Tensor]:
    return p.duration(h), p.pitch(h), p.pitch_range(h)


def add_variance_embeddings(e, pitch, pitch_range, style_id: int, speaker_id: int,
                            p: VarianceAdaptor) -> Tensor:
    """Frame-level ``e + pitch_embed + range_embed + style + speaker``.

    ``pitch`` and ``pitch_range`` are frame-level scalars (already expanded).
    """
    e = nx.as_tensor(e)
    frames = e.shape[0]
    pitch = nx.reshape(nx.as_tensor(pitch), (frames, 1))
    pitch_range = nx.reshape(nx.as_tensor(pitch_range), (frames, 1))
    style = p.style_table(style_id)
    speaker = p.speaker_table(speaker_id)
    out = nx.add(e, p.pitch_embed(pitch))
    out = nx.add(out, p.range_embed(pitch_range))
    out = nx.add(out, style)
    return nx.add(out, speaker)


def mse(pred, target) -> Tensor:
    pred, target = nx.as_tensor(pred), nx.as_tensor(target)
    if pred.shape != target.shape:
        raise nx.ShapeError(f"mse: shapes {pred.shape} and {target.shape}")
    diff = nx.sub(pred, target)
    return nx.mean(nx.mul(diff, diff))


duration_loss = mse
pitch_loss = mse
range_loss = mse
