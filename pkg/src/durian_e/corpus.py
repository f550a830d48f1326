"""Deterministic synthetic corpus and its binary record format.

Record layout (little-endian)::

    b"DRNE" | u32 version | u32 N | u32 N' | u32 T | u32 channels
    | N x u32 symbol ids | N x u8 boundary flags | N' x u32 durations
    | N' x f64 pitch | N' x f64 pitch range | u32 style | u32 speaker
    | T*channels x f64 mel (row-major)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alignment import SymbolSequence
from .config import BOUNDARIES, N_PHONEMES, N_SPEAKERS, STYLES

MAGIC = b"DRNE"
VERSION = 1


class CorpusFormatError(ValueError):
    pass


@dataclass
class Utterance:
    symbols: np.ndarray        # (N,) token ids
    is_boundary: np.ndarray    # (N,) bool
    durations: np.ndarray      # (N',) frames per phoneme
    pitch: np.ndarray          # (N',)
    pitch_range: np.ndarray    # (N',)
    style: int
    speaker: int
    mel: np.ndarray            # (T, channels)

    @property
    def sequence(self) -> SymbolSequence:
        return SymbolSequence([int(s) for s in self.symbols], [bool(b) for b in self.is_boundary])

    @property
    def frames(self) -> int:
        return int(self.mel.shape[0])


@dataclass
class SyntheticCorpusSpec:
    utterances: int = 8
    mel_channels: int = 16
    n_phonemes: int = N_PHONEMES
    n_styles: int = len(STYLES)
    n_speakers: int = N_SPEAKERS
    min_phonemes: int = 5
    max_phonemes: int = 15
    min_duration: int = 1
    max_duration: int = 6
    boundary_prob: float = 0.25
    seed: int = 0


def token_names(n_phonemes: int = N_PHONEMES) -> list[str]:
    return [f"p{i}" for i in range(n_phonemes)] + list(BOUNDARIES)


def parse_text(text: str, n_phonemes: int = N_PHONEMES) -> SymbolSequence:
    """``"p3 p7 #1 p2"`` -> SymbolSequence; unknown tokens raise KeyError."""
    names = token_names(n_phonemes)
    lookup = {n: i for i, n in enumerate(names)}
    toks = text.split()
    if not toks:
        raise ValueError("empty phoneme string")
    unknown = [t for t in toks if t not in lookup]
    if unknown:
        raise KeyError(f"unknown phoneme symbol(s): {unknown}")
    ids = [lookup[t] for t in toks]
    return SymbolSequence(ids, [i >= n_phonemes for i in ids])


def style_offsets(n_styles: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, n_styles)


def phoneme_templates(spec: SyntheticCorpusSpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 1])
    raw = rng.normal(0.0, 0.6, size=(spec.n_phonemes, spec.mel_channels))
    # smooth across channels so templates look like spectral envelopes
    kernel = np.array([0.25, 0.5, 0.25])
    return np.stack([np.convolve(np.pad(r, 1, mode="edge"), kernel, mode="valid") for r in raw])


def render_mel(phonemes: np.ndarray, durations: np.ndarray, pitch: np.ndarray,
               pitch_range: np.ndarray, style: int, templates: np.ndarray,
               n_styles: int) -> np.ndarray:
    """Target mel: style-scaled phoneme template plus a pitch-driven ripple over frames."""
    channels = templates.shape[1]
    scale = 1.0 + 0.2 * style_offsets(n_styles)[style]
    ch_phase = 2.0 * np.pi * np.arange(channels) / channels
    rows = []
    for p, d, f0, rng_ in zip(phonemes, durations, pitch, pitch_range):
        j = np.arange(d)[:, None]
        ripple = 0.1 * (0.5 + rng_) * np.sin((0.6 + 0.3 * f0) * j + ch_phase[None, :])
        rows.append(scale * templates[p][None, :] + ripple)
    return np.concatenate(rows, axis=0)


def gen_corpus(spec: SyntheticCorpusSpec) -> list[Utterance]:
    templates = phoneme_templates(spec)
    rng = np.random.default_rng([spec.seed, 2])
    out = []
    for _ in range(spec.utterances):
        n = int(rng.integers(spec.min_phonemes, spec.max_phonemes + 1))
        phonemes = rng.integers(0, spec.n_phonemes, size=n)
        symbols, flags = [], []
        for i, p in enumerate(phonemes):
            symbols.append(int(p))
            flags.append(False)
            if i < n - 1 and rng.random() < spec.boundary_prob:
                symbols.append(spec.n_phonemes + int(rng.integers(0, 2)))
                flags.append(True)
        durations = rng.integers(spec.min_duration, spec.max_duration + 1, size=n)
        pitch = np.clip(rng.normal(0.0, 1.0, size=n), -2.0, 2.0)
        pitch_range = rng.uniform(0.0, 1.0, size=n)
        style = int(rng.integers(0, spec.n_styles))
        speaker = int(rng.integers(0, spec.n_speakers))
        mel = render_mel(phonemes, durations, pitch, pitch_range, style, templates, spec.n_styles)
        out.append(Utterance(np.array(symbols, dtype=np.int64), np.array(flags, dtype=bool),
                             durations.astype(np.int64), pitch, pitch_range, style, speaker, mel))
    return out


# ----------------------------------------------------------------------------
# binary records
# ----------------------------------------------------------------------------

def encode_record(u: Utterance) -> bytes:
    n, n_ph = len(u.symbols), len(u.durations)
    T, ch = u.mel.shape
    parts = [MAGIC, struct.pack("<5I", VERSION, n, n_ph, T, ch),
             np.asarray(u.symbols, dtype="<u4").tobytes(),
             np.asarray(u.is_boundary, dtype="u1").tobytes(),
             np.asarray(u.durations, dtype="<u4").tobytes(),
             np.asarray(u.pitch, dtype="<f8").tobytes(),
             np.asarray(u.pitch_range, dtype="<f8").tobytes(),
             struct.pack("<2I", u.style, u.speaker),
             np.ascontiguousarray(u.mel, dtype="<f8").tobytes()]
    return b"".join(parts)


def decode_record(buf: bytes) -> Utterance:
    if buf[:4] != MAGIC:
        raise CorpusFormatError(f"bad magic {buf[:4]!r}")
    version, n, n_ph, T, ch = struct.unpack_from("<5I", buf, 4)
    if version != VERSION:
        raise CorpusFormatError(f"unsupported record version {version}")
    off = 24

    def take(dtype, count):
        nonlocal off
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr

    try:
        symbols = take("<u4", n).astype(np.int64)
        flags = take("u1", n).astype(bool)
        durations = take("<u4", n_ph).astype(np.int64)
        pitch = take("<f8", n_ph).astype(np.float64)
        pitch_range = take("<f8", n_ph).astype(np.float64)
        style, speaker = struct.unpack_from("<2I", buf, off)
        off += 8
        mel = take("<f8", T * ch).astype(np.float64).reshape(T, ch)
    except (ValueError, struct.error) as exc:
        raise CorpusFormatError(f"truncated record: {exc}") from None
    if off != len(buf):
        raise CorpusFormatError(f"{len(buf) - off} trailing bytes after record")
    return Utterance(symbols, flags, durations, pitch, pitch_range, style, speaker, mel)


def write_record(path: str | Path, u: Utterance):
    path = Path(path)
    try:
        path.write_bytes(encode_record(u))
    except OSError as exc:
        raise OSError(f"cannot write record {path}: {exc}") from exc


def read_record(path: str | Path) -> Utterance:
    path = Path(path)
    try:
        return decode_record(path.read_bytes())
    except OSError as exc:
        raise OSError(f"cannot read record {path}: {exc}") from exc


def save_corpus(corpus: list[Utterance], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create corpus directory {out_dir}: {exc}") from exc
    paths = []
    for i, u in enumerate(corpus):
        p = out_dir / f"utt_{i:04d}.drne"
        write_record(p, u)
        paths.append(p)
    return paths


def load_corpus(in_dir: str | Path) -> list[Utterance]:
    paths = sorted(Path(in_dir).glob("utt_*.drne"))
    if not paths:
        raise FileNotFoundError(f"no utt_*.drne records in {in_dir}")
    return [read_record(p) for p in paths]
