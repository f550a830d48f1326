"""Inference from a checkpoint to mel files.

Output mels use the corpus record framing: the file is a ``DRNE`` record of the
synthesized utterance, carrying the predicted durations and pitch values along
with the mel payload, so :func:`durian_e.corpus.read_record` reads it back.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .alignment import SymbolSequence
from .config import STYLES
from .corpus import Utterance, parse_text, write_record
from .model import DurianE, Synthesis
from .train import load_model


def resolve_style(style: str | int, n_styles: int = len(STYLES)) -> int:
    """Style label (``"happy"``) or integer id -> id; unknown values raise KeyError."""
    if isinstance(style, str) and not style.lstrip("-").isdigit():
        if style not in STYLES:
            raise KeyError(f"unknown style {style!r}; choose from {list(STYLES)}")
        return STYLES.index(style)
    sid = int(style)
    if not 0 <= sid < n_styles:
        raise KeyError(f"style id {sid} outside [0, {n_styles})")
    return sid


def resolve_speaker(speaker: int | str, n_speakers: int) -> int:
    sid = int(speaker)
    if not 0 <= sid < n_speakers:
        raise KeyError(f"speaker id {sid} outside [0, {n_speakers})")
    return sid


def as_record(seq: SymbolSequence, syn: Synthesis, style: int, speaker: int, mel: np.ndarray) -> Utterance:
    return Utterance(np.asarray(seq.symbols, dtype=np.int64), np.asarray(seq.is_boundary, dtype=bool),
                     np.asarray(syn.durations, dtype=np.int64), syn.pitch.copy(), syn.pitch_range.copy(),
                     style, speaker, mel)


def synthesize_text(model: DurianE, text: str, style: str | int, speaker: int | str,
                    seed: int = 0) -> tuple[SymbolSequence, Synthesis, int, int]:
    cfg = model.cfg
    seq = parse_text(text, cfg.vocab_size - 2)
    sid = resolve_style(style, cfg.n_styles)
    spk = resolve_speaker(speaker, cfg.n_speakers)
    syn = model.synthesize(seq, sid, spk, np.random.default_rng(seed))
    return seq, syn, sid, spk


def synth_to_files(checkpoint: str | Path, text: str, style: str | int, speaker: int | str,
                   out_dir: str | Path, seed: int = 0, emit_predenoiser: bool = False,
                   name: str = "synth") -> dict[str, Path]:
    """Write ``<name>.mel.drne`` (post-denoiser) and optionally ``<name>.pre.mel.drne``."""
    model, _ = load_model(checkpoint)
    seq, syn, sid, spk = synthesize_text(model, text, style, speaker, seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"post": out_dir / f"{name}.mel.drne"}
    write_record(paths["post"], as_record(seq, syn, sid, spk, syn.post))
    if emit_predenoiser:
        paths["pre"] = out_dir / f"{name}.pre.mel.drne"
        write_record(paths["pre"], as_record(seq, syn, sid, spk, syn.pre))
    return paths
