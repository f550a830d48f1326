"""Expressive duration-informed TTS acoustic model with a shallow-diffusion denoiser."""

__version__ = "0.1.0"
