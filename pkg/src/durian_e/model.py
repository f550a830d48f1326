"""Full acoustic model: linguistic encoder -> skip -> variance adaptor -> frame
encoder -> AR decoder -> shallow-diffusion denoiser."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .alignment import (DurationAlignment, SymbolSequence, VarianceAdaptor, add_variance_embeddings,
                        expand_values, length_regulate, mse, predict_variances, quantize_durations,
                        skip_select)
from .config import ModelConfig
from .corpus import Utterance
from .decoder import ARDecoder, decode_sequence, reconstruction_loss
from .diffusion import Denoiser, diffusion_loss, make_schedule, shallow_sample
from .encoders import FrameEncoder, FrameEncoderConfig, LinguisticEncoder, LinguisticEncoderConfig
from .layers import Module
from .numerics import Tensor

LOSS_NAMES = ("l1", "dur_l2", "pitch_l2", "range_l2", "diff_mse")


@dataclass
class ForwardResult:
    losses: dict[str, Tensor]
    total: Tensor
    mel: Tensor
    draws: list[tuple[int, np.ndarray]]   # (t, eps) of each diffusion draw
    variance_source: dict[str, str] = field(default_factory=dict)


@dataclass
class Synthesis:
    pre: np.ndarray
    post: np.ndarray
    durations: np.ndarray
    pitch: np.ndarray
    pitch_range: np.ndarray
    variance_source: dict[str, str] = field(default_factory=dict)


class DurianE(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng([seed, 0])
        self.cfg = cfg
        self.linguistic = LinguisticEncoder(rng, LinguisticEncoderConfig(
            cfg.vocab_size, cfg.linguistic_blocks, cfg.hidden, cfg.heads, cfg.dropout))
        self.variance = VarianceAdaptor(rng, cfg.hidden, cfg.n_styles, cfg.n_speakers)
        self.frame = FrameEncoder(rng, FrameEncoderConfig(
            cfg.frame_blocks, cfg.hidden, cfg.heads, cfg.frame_conv_layers, cfg.frame_kernel,
            cfg.dropout, cfg.sain_eps))
        self.decoder = ARDecoder(rng, cfg.hidden, cfg.mel_channels, cfg.prenet_dim, cfg.decoder_hidden)
        self.denoiser = Denoiser(rng, cfg.mel_channels, cfg.hidden, cfg.hidden, cfg.residual_channels,
                                 cfg.residual_blocks, cfg.denoiser_kernel, cfg.step_embed_dim,
                                 cfg.sain_eps, cfg.denoiser_sain_at)
        self.schedule = make_schedule(cfg.T_total, cfg.S_shallow, cfg.beta_min, cfg.beta_max)

    def phoneme_states(self, seq: SymbolSequence, style: int, speaker: int, rng=None):
        """Skip-selected encoder states and the style/speaker-conditioned predictor input."""
        h = skip_select(self.linguistic(seq, rng), seq)
        cond = nx.add(nx.add(h, self.variance.style_table(style)), self.variance.speaker_table(speaker))
        return h, cond

    def teacher_condition(self, h, utt: Utterance, rng=None) -> tuple[Tensor, Tensor]:
        """Style vector and frame-encoder output built from ground-truth variances."""
        align = DurationAlignment(utt.durations)
        e = add_variance_embeddings(length_regulate(h, align), expand_values(utt.pitch, align),
                                    expand_values(utt.pitch_range, align), utt.style, utt.speaker,
                                    self.variance)
        s = self.variance.style_vector(utt.style)
        return s, self.frame(e, s, rng)

    def forward_train(self, utt: Utterance, rng: np.random.Generator | None = None,
                      weights: dict[str, float] | None = None, t: int | None = None,
                      eps: np.ndarray | None = None, draws: int = 1) -> ForwardResult:
        """Teacher-forced pass: ground-truth variances and previous frames.

        The diffusion term averages ``draws`` independent (t, eps) samples; passing
        ``t``/``eps`` replays a single fixed draw instead.
        """
        rng = rng if rng is not None else np.random.default_rng(0)
        seq = utt.sequence
        h, cond = self.phoneme_states(seq, utt.style, utt.speaker, rng)
        dur_hat, pitch_hat, range_hat = predict_variances(cond, self.variance)
        losses = {
            "dur_l2": mse(dur_hat, utt.durations.astype(np.float64)),
            "pitch_l2": mse(pitch_hat, utt.pitch),
            "range_l2": mse(range_hat, utt.pitch_range),
        }
        s, c = self.teacher_condition(h, utt, rng)
        mel = decode_sequence(c, self.decoder, targets=utt.mel)
        losses["l1"] = reconstruction_loss(mel, utt.mel)
        scale = self.cfg.grad_scale
        s_in, c_in = nx.scale_gradient(s, scale), nx.scale_gradient(c, scale)
        n = 1 if (t is not None or eps is not None) else draws
        diff, sampled = None, []
        for _ in range(n):
            term, t_k, eps_k = diffusion_loss(utt.mel, s_in, c_in, self.denoiser, self.schedule, rng,
                                              t=t, eps=eps)
            sampled.append((t_k, eps_k))
            diff = term if diff is None else nx.add(diff, term)
        losses["diff_mse"] = nx.mul(diff, 1.0 / n) if n > 1 else diff
        weights = weights or {}
        total = None
        for name in LOSS_NAMES:
            term = nx.mul(losses[name], weights.get(name, 1.0))
            total = term if total is None else nx.add(total, term)
        source = {"duration": "target", "pitch": "target", "range": "target"}
        return ForwardResult({k: losses[k] for k in LOSS_NAMES}, total, mel, sampled, source)

    def synthesize(self, seq: SymbolSequence, style: int, speaker: int,
                   rng: np.random.Generator | None = None,
                   durations: np.ndarray | None = None) -> Synthesis:
        """Inference: predicted variances, free-running decoder, shallow diffusion.

        ``durations`` overrides the predicted alignment (forced-alignment
        synthesis); the variance source records it as ``"override"``.
        """
        rng = rng if rng is not None else np.random.default_rng(0)
        self.eval()
        with nx.no_grad():
            h, cond = self.phoneme_states(seq, style, speaker)
            dur_hat, pitch_hat, range_hat = predict_variances(cond, self.variance)
            source = {"duration": "predicted", "pitch": "predicted", "range": "predicted"}
            if durations is None:
                align = quantize_durations(dur_hat)
            else:
                align = DurationAlignment(durations)
                source["duration"] = "override"
            e = add_variance_embeddings(length_regulate(h, align), expand_values(pitch_hat.data, align),
                                        expand_values(range_hat.data, align), style, speaker,
                                        self.variance)
            s = self.variance.style_vector(style)
            c = self.frame(e, s)
            pre = decode_sequence(c, self.decoder).data
            post = shallow_sample(pre, s, c, self.denoiser, self.schedule, rng,
                                  renoise=self.cfg.renoise_shallow_start)
        return Synthesis(pre, post, align.durations, pitch_hat.data.copy(), range_hat.data.copy(), source)
