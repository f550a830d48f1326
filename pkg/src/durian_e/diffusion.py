"""Shallow-diffusion DDPM denoiser for mel-spectrograms.

Steps are 1-indexed throughout: ``t`` in ``1..T_total``; ``alpha_bar(0) == 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import numerics as nx
from .layers import SAIN, Conv1d, Linear, Module, gated_activation, silu
from .numerics import Tensor, scale_gradient  # noqa: F401  (re-exported)


@dataclass(frozen=True)
class DiffusionSchedule:
    T_total: int
    S_shallow: int
    betas: np.ndarray

    def __post_init__(self):
        b = self.betas
        if len(b) != self.T_total:
            raise ValueError("betas length must equal T_total")
        if not (np.all(b > 0) and np.all(b < 1) and np.all(np.diff(b) >= 0)):
            raise ValueError("betas must lie in (0, 1) and be nondecreasing")
        if not 0 <= self.S_shallow <= self.T_total:
            raise ValueError(f"S_shallow={self.S_shallow} outside [0, T_total={self.T_total}]")

    @cached_property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @cached_property
    def alpha_bars(self) -> np.ndarray:
        """``[abar_0 = 1, abar_1, ..., abar_T]`` built by the running product."""
        out = np.empty(self.T_total + 1)
        out[0] = 1.0
        for t in range(1, self.T_total + 1):
            out[t] = out[t - 1] * (1.0 - self.betas[t - 1])
        return out

    @cached_property
    def sigmas(self) -> np.ndarray:
        """Posterior std per step, index t-1; zero at t=1."""
        ab = self.alpha_bars
        var = (1.0 - ab[:-1]) / (1.0 - ab[1:]) * self.betas
        return np.sqrt(var)

    def beta(self, t: int) -> float:
        self._check(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        return 1.0 - self.beta(t)

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check(t)
        return float(self.alpha_bars[t])

    def sigma(self, t: int) -> float:
        self._check(t)
        return float(self.sigmas[t - 1])

    def _check(self, t: int):
        if not 1 <= t <= self.T_total:
            raise ValueError(f"step {t} outside [1, {self.T_total}]")


def make_schedule(T_total: int = 70, S_shallow: int = 30, beta_min: float = 1e-4,
                  beta_max: float = 0.06) -> DiffusionSchedule:
    """Linearly spaced betas."""
    if not (0 < beta_min <= beta_max < 1):
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    if T_total < 1:
        raise ValueError("T_total must be >= 1")
    if not 0 <= S_shallow <= T_total:
        raise ValueError(f"S_shallow={S_shallow} outside [0, T_total={T_total}]")
    betas = np.linspace(beta_min, beta_max, T_total) if T_total > 1 else np.array([beta_min])
    return DiffusionSchedule(T_total, S_shallow, betas)


def q_sample(m0, t: int, eps, sched: DiffusionSchedule):
    """Closed-form forward marginal ``sqrt(abar_t) m0 + sqrt(1 - abar_t) eps``."""
    if t < 1:
        raise ValueError(f"step {t} outside [1, T_total]")
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * m0 + np.sqrt(1.0 - ab) * eps


def q_step(x_prev, t: int, z, sched: DiffusionSchedule):
    """Single forward transition from step t-1 to t."""
    b = sched.beta(t)
    return np.sqrt(1.0 - b) * x_prev + np.sqrt(b) * z


def step_embedding(t: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])[None, :]


class ResidualBlock(Module):
    """Gated residual block.  ``sain_at`` places the style normalization either
    on the gated activation (``"gate"``) or on the condition branch (``"cond"``)."""

    def __init__(self, rng, channels: int, cond_dim: int, style_dim: int, kernel: int, sain_eps: float,
                 sain_at: str = "cond"):
        if sain_at not in ("gate", "cond"):
            raise ValueError(f"sain_at must be 'gate' or 'cond', got {sain_at!r}")
        self.step_proj = Linear(rng, channels, channels)
        self.conv = Conv1d(rng, channels, 2 * channels, kernel)
        self.cond_proj = Linear(rng, cond_dim, 2 * channels)
        self.sain = SAIN(rng, style_dim, channels if sain_at == "gate" else cond_dim, sain_eps)
        self.out_proj = Linear(rng, channels, 2 * channels)
        self.channels = channels
        self.sain_at = sain_at

    def __call__(self, x, temb, cond, s) -> tuple[Tensor, Tensor]:
        C = self.channels
        h = nx.add(x, self.step_proj(temb))
        if self.sain_at == "cond":
            cond = self.sain(cond, s)
        y = nx.add(self.conv(h), self.cond_proj(cond))
        g = gated_activation(y[:, :C], y[:, C:])
        if self.sain_at == "gate":
            g = self.sain(g, s)
        o = self.out_proj(g)
        residual = nx.mul(nx.add(x, o[:, :C]), 1.0 / np.sqrt(2.0))
        return residual, o[:, C:]


class Denoiser(Module):
    """Non-causal WaveNet-style noise predictor with step encoder and SAIN per block."""

    def __init__(self, rng, mel_channels: int, cond_dim: int, style_dim: int, channels: int = 256,
                 blocks: int = 20, kernel: int = 3, step_dim: int = 128, sain_eps: float = 1e-5,
                 sain_at: str = "cond"):
        self.step_dim = step_dim
        self.in_proj = Linear(rng, mel_channels, channels)
        self.step_mlp1 = Linear(rng, step_dim, 4 * channels)
        self.step_mlp2 = Linear(rng, 4 * channels, channels)
        self.blocks = [ResidualBlock(rng, channels, cond_dim, style_dim, kernel, sain_eps, sain_at)
                       for _ in range(blocks)]
        self.skip_proj = Linear(rng, channels, channels)
        self.out = Linear(rng, channels, mel_channels, zero=True)

    def encode_step(self, t: int) -> Tensor:
        return self.step_mlp2(silu(self.step_mlp1(step_embedding(t, self.step_dim))))

    def __call__(self, m_t, s, c, t: int) -> Tensor:
        return denoise_predict(m_t, s, c, t, self)


def denoise_predict(m_t, s, c, t: int, p: Denoiser) -> Tensor:
    """Predict the noise in ``m_t`` given style vector ``s`` and frame condition ``c``."""
    m_t, c = nx.as_tensor(m_t), nx.as_tensor(c)
    if m_t.shape[0] != c.shape[0]:
        raise ValueError(f"mel frames {m_t.shape[0]} != condition frames {c.shape[0]}")
    x = p.in_proj(m_t)
    temb = p.encode_step(t)
    skip = None
    for block in p.blocks:
        x, sk = block(x, temb, c, s)
        skip = sk if skip is None else nx.add(skip, sk)
    skip = nx.mul(skip, 1.0 / np.sqrt(len(p.blocks)))
    return p.out(silu(p.skip_proj(skip)))


def diffusion_loss(m0, s, c, p: Denoiser, sched: DiffusionSchedule, rng: np.random.Generator,
                   t: int | None = None, eps: np.ndarray | None = None):
    """Simplified noise-regression objective (unit weight per step).

    ``p`` is any callable ``(m_t, s, c, t) -> predicted noise``, normally a Denoiser.

    Returns ``(loss, t, eps)`` so the draw can be replayed.
    """
    m0 = np.asarray(nx.as_tensor(m0).data)
    if t is None:
        t = int(rng.integers(1, sched.T_total + 1))
    if eps is None:
        eps = rng.standard_normal(m0.shape)
    m_t = q_sample(m0, t, eps, sched)
    pred = p(m_t, s, c, t)
    diff = nx.sub(pred, eps)
    return nx.mean(nx.mul(diff, diff)), t, eps


def reverse_step(m_t, eps_hat, t: int, z, sched: DiffusionSchedule):
    """One ancestral step from t to t-1; noise is dropped at t == 1."""
    if not 1 <= t <= sched.T_total:
        raise ValueError(f"step {t} outside [1, {sched.T_total}]")
    a, ab = sched.alpha(t), sched.alpha_bar(t)
    mean = (m_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)
    if t == 1:
        return mean
    return mean + sched.sigma(t) * z


def shallow_sample(decoder_out, s, c, p: Denoiser, sched: DiffusionSchedule,
                   rng: np.random.Generator, renoise: bool = False) -> np.ndarray:
    """Refine a decoder mel by running the reverse chain from step S down to 1.

    The decoder output is taken as the step-S sample as is; ``renoise=True``
    instead draws it from the forward marginal at S first.
    """
    m = np.array(nx.as_tensor(decoder_out).data, dtype=np.float64)
    S = sched.S_shallow
    if S == 0:
        return m
    with nx.no_grad():
        if renoise:
            m = q_sample(m, S, rng.standard_normal(m.shape), sched)
        for t in range(S, 0, -1):
            eps_hat = nx.as_tensor(p(m, s, c, t)).data
            z = rng.standard_normal(m.shape) if t > 1 else np.zeros_like(m)
            m = reverse_step(m, eps_hat, t, z, sched)
    return m


# ----------------------------------------------------------------------------
# ELBO diagnostics
# ----------------------------------------------------------------------------

def posterior_mean_var(x0, x_t, t: int, sched: DiffusionSchedule):
    """Mean and variance of q(x_{t-1} | x_t, x_0)."""
    ab, ab_prev, b, a = sched.alpha_bar(t), sched.alpha_bar(t - 1), sched.beta(t), sched.alpha(t)
    mean = (np.sqrt(ab_prev) * b / (1.0 - ab)) * x0 + (np.sqrt(a) * (1.0 - ab_prev) / (1.0 - ab)) * x_t
    return mean, (1.0 - ab_prev) / (1.0 - ab) * b


def gaussian_kl(mu_q, var_q, mu_p, var_p) -> float:
    """KL(N(mu_q, var_q) || N(mu_p, var_p)) summed over dimensions."""
    mu_q, mu_p = np.asarray(mu_q, dtype=float), np.asarray(mu_p, dtype=float)
    var_q = np.broadcast_to(np.asarray(var_q, dtype=float), mu_q.shape)
    var_p = np.broadcast_to(np.asarray(var_p, dtype=float), mu_q.shape)
    return float(np.sum(0.5 * np.log(var_p / var_q) + (var_q + (mu_q - mu_p) ** 2) / (2 * var_p) - 0.5))


def elbo_terms(m0, eps_model, sched: DiffusionSchedule, rng: np.random.Generator,
               model_var: str = "posterior") -> list[float]:
    """Per-step KL(q(x_{t-1}|x_t,x_0) || p(x_{t-1}|x_t)) for t = 2..T, one x_t draw each.

    ``eps_model(x_t, t)`` returns the predicted noise.  ``model_var`` picks the
    reverse variance: ``"posterior"`` (matches the sampler) or ``"beta"``.
    The t=1 term is degenerate (zero posterior variance) and is omitted.
    """
    m0 = np.asarray(m0, dtype=float)
    terms = []
    for t in range(2, sched.T_total + 1):
        eps = rng.standard_normal(m0.shape)
        x_t = q_sample(m0, t, eps, sched)
        mu_q, var_q = posterior_mean_var(m0, x_t, t, sched)
        a, ab = sched.alpha(t), sched.alpha_bar(t)
        mu_p = (x_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps_model(x_t, t)) / np.sqrt(a)
        var_p = var_q if model_var == "posterior" else sched.beta(t)
        terms.append(gaussian_kl(mu_q, var_q, mu_p, var_p))
    return terms
