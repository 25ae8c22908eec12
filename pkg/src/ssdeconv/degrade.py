"""Synthetic forward model: PSF blur, mixed noise, quantization.

Pipeline order is blur -> Poisson -> Gaussian -> salt-and-pepper (2D only)
-> quantization.  The Poisson stage uses the scaled-count model
``y = alpha * Poisson(x / alpha)``, which preserves the mean and has
variance ``alpha * x``.  Everything is deterministic given the config seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import Image, PSFKernel, SeededRng
from .fftconv import ConvBackend, convolve

__all__ = [
    "DegradeConfig",
    "blur",
    "add_poisson",
    "add_gaussian",
    "add_salt_pepper",
    "quantize",
    "degrade",
]


@dataclass(frozen=True)
class DegradeConfig:
    poisson_alpha: float = 0.001
    gaussian_sigma: float = 0.1
    sp_prob: float = 0.01  # applied to 2D images only
    quant_bits: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.poisson_alpha < 0:
            raise ValueError("poisson_alpha must be >= 0")
        if self.gaussian_sigma < 0:
            raise ValueError("gaussian_sigma must be >= 0")
        if not 0.0 <= self.sp_prob <= 1.0:
            raise ValueError("sp_prob must be in [0, 1]")
        if self.quant_bits < 1:
            raise ValueError("quant_bits must be >= 1")


def blur(img: Image, psf: PSFKernel) -> Image:
    """Convolve with the PSF, reflect-padded, preserving shape and mean."""
    if img.ndim != psf.ndim:
        raise ValueError(f"image is {img.ndim}D but PSF is {psf.ndim}D")
    return convolve(img, psf, backend=ConvBackend.AUTO, padding="reflect")


def _clip_unit(data: np.ndarray, what: str, tol: float = 1e-4) -> np.ndarray:
    lo, hi = float(data.min()), float(data.max())
    if lo < -tol or hi > 1.0 + tol:
        warnings.warn(f"{what}: values outside [0, 1] (min {lo:.4g}, max {hi:.4g}); clipping", stacklevel=3)
    return np.clip(data, 0.0, 1.0)


def add_poisson(img: Image, alpha: float, rng: SeededRng) -> Image:
    """Scaled-count shot noise; alpha = 0 is the identity."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return img
    x = _clip_unit(img.data.astype(np.float64), "add_poisson")
    counts = rng.generator.poisson(x / alpha)
    return img.with_data((alpha * counts).astype(np.float32))


def add_gaussian(img: Image, sigma: float, rng: SeededRng) -> Image:
    """Additive i.i.d. N(0, sigma^2) noise; sigma = 0 is the identity."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return img
    noise = rng.generator.standard_normal(img.shape, dtype=np.float32) * np.float32(sigma)
    return img.with_data(img.data + noise)


def add_salt_pepper(img: Image, p: float, rng: SeededRng) -> Image:
    """Impulse noise: each pixel independently becomes 0 or 1 with prob p."""
    if img.ndim != 2:
        raise ValueError("salt-and-pepper is 2D-only")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    if p == 0:
        return img
    gen = rng.generator
    corrupt = gen.random(img.shape) < p
    salt = gen.random(img.shape) < 0.5
    out = img.data.copy()
    out[corrupt] = salt[corrupt].astype(np.float32)
    return img.with_data(out)


def quantize(img: Image, bits: int) -> Image:
    """Clip to [0, 1] and round to ``2**bits`` uniform levels.  Idempotent."""
    if bits < 1:
        raise ValueError("bits must be >= 1")
    levels = float(2**bits - 1)
    data = np.clip(img.data, 0.0, 1.0)
    return img.with_data((np.round(data * levels) / levels).astype(np.float32), value_range=(0.0, 1.0))


def degrade(img: Image, psf: PSFKernel, cfg: DegradeConfig) -> Image:
    """Full forward model; bitwise deterministic for a fixed cfg.seed."""
    if img.ndim == 3 and cfg.sp_prob > 0:
        raise ValueError("sp_prob must be 0 for 3D images (salt-and-pepper is 2D-only)")
    rng = SeededRng(cfg.seed)
    out = blur(img, psf)
    out = add_poisson(out, cfg.poisson_alpha, rng.child("poisson"))
    out = add_gaussian(out, cfg.gaussian_sigma, rng.child("gaussian"))
    if img.ndim == 2 and cfg.sp_prob > 0:
        out = add_salt_pepper(out, cfg.sp_prob, rng.child("salt-pepper"))
    return quantize(out, cfg.quant_bits)
