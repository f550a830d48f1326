"""Model/training configuration and the named presets.

``paper`` carries the published architecture constants; ``desk`` is a reduced
model that trains on one CPU core in minutes.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

STYLES = ("neutral", "happy", "sad", "angry", "exciting", "annoying", "amazing",
          "doubtful", "cunning", "solemn", "enchanting", "taunting")
N_SPEAKERS = 7
N_PHONEMES = 16
BOUNDARIES = ("#1", "#2")


@dataclass
class ModelConfig:
    vocab_size: int = N_PHONEMES + len(BOUNDARIES)
    n_styles: int = len(STYLES)
    n_speakers: int = N_SPEAKERS
    hidden: int = 256
    heads: int = 2
    linguistic_blocks: int = 4
    frame_blocks: int = 4
    frame_conv_layers: int = 2
    frame_kernel: int = 9
    mel_channels: int = 80
    prenet_dim: int = 128
    decoder_hidden: int = 256
    residual_channels: int = 256
    residual_blocks: int = 20
    denoiser_kernel: int = 3
    step_embed_dim: int = 128
    T_total: int = 70
    S_shallow: int = 30
    beta_min: float = 1e-4
    beta_max: float = 0.06
    grad_scale: float = 0.1
    dropout: float = 0.1
    sain_eps: float = 1e-5
    denoiser_sain_at: str = "cond"
    renoise_shallow_start: bool = False


@dataclass
class TrainConfig:
    preset: str = "desk"
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 1
    steps: int = 2000
    checkpoint_every: int = 500
    diffusion_draws: int = 1
    seed: int = 0
    w_l1: float = 1.0
    w_duration: float = 1.0
    w_pitch: float = 1.0
    w_range: float = 1.0
    w_diffusion: float = 1.0


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        return cls(ModelConfig(**d.get("model", {})), TrainConfig(**d.get("train", {})))


PRESETS = {
    "paper": {"model": {}, "train": {"preset": "paper"}},
    "desk": {
        "model": {
            "hidden": 64, "linguistic_blocks": 2, "frame_blocks": 2, "mel_channels": 16,
            "prenet_dim": 64, "decoder_hidden": 64, "residual_channels": 64,
            "residual_blocks": 8, "step_embed_dim": 32,
        },
        "train": {"preset": "desk", "diffusion_draws": 4},
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        out[k] = _merge(out.get(k, {}), v) if isinstance(v, dict) else v
    return out


def preset(name: str, **overrides) -> Config:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return Config.from_dict(_merge(PRESETS[name], overrides))


def load_config(path: str | Path | None = None, preset_name: str | None = None) -> Config:
    """Preset (default desk, or the file's ``preset`` key) overlaid with a JSON file."""
    override = json.loads(Path(path).read_text()) if path else {}
    name = preset_name or override.pop("preset", None) or "desk"
    override.pop("preset", None)
    return preset(name, **override)
