"""PSF kernels: loaded from measured-kernel files or synthesized Gaussians.

Measured kernels (e.g. computed externally for a specific objective) enter
through :func:`load_psf`; when none is available, :func:`gaussian_psf` builds
an isotropic stand-in.  Both return validated, unit-mass, odd-sided kernels.
"""

from __future__ import annotations

import warnings

import numpy as np

from .core import PSFKernel
from .io import read_array

__all__ = ["load_psf", "gaussian_psf", "delta_psf"]

# negative mass above this fraction of total indicates a genuinely broken file
CLIP_WARN_FRACTION = 1e-3


def load_psf(path) -> PSFKernel:
    """Load a kernel from a .npy or .tif/.tiff file and normalize it.

    Negative entries (noise floors in measured kernels) are clipped to zero;
    a warning is emitted when the clipped mass exceeds a thousandth of the
    kernel's absolute mass.  Even-sided or all-zero kernels are rejected.
    """
    raw = np.asarray(read_array(path), dtype=np.float64)
    if raw.ndim not in (2, 3):
        raise ValueError(f"{path}: PSF must be 2D or 3D, got {raw.ndim}D")
    if any(d % 2 == 0 for d in raw.shape):
        raise ValueError(f"{path}: PSF must have odd side lengths, got {raw.shape}")
    negative_mass = float(-raw[raw < 0].sum())
    total_mass = float(np.abs(raw).sum())
    if total_mass == 0.0:
        raise ValueError(f"{path}: PSF is all zero")
    if negative_mass / total_mass > CLIP_WARN_FRACTION:
        warnings.warn(
            f"{path}: clipped negative PSF mass {negative_mass:.3e} "
            f"({negative_mass / total_mass:.2%} of total)",
            stacklevel=2,
        )
    clipped = np.clip(raw, 0.0, None)
    s = clipped.sum()
    if s <= 0:
        raise ValueError(f"{path}: PSF has no positive mass after clipping")
    return PSFKernel(clipped / s)


def gaussian_psf(dims: int, side: int, sigma: float) -> PSFKernel:
    """Isotropic discretized Gaussian kernel, centered and normalized.

    ``side`` must be odd and >= 3; the kernel is symmetric under every axis
    flip and invariant under axis permutation.
    """
    if dims not in (2, 3):
        raise ValueError(f"dims must be 2 or 3, got {dims}")
    if side < 3 or side % 2 == 0:
        raise ValueError(f"side must be an odd integer >= 3, got {side}")
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    half = (side - 1) // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    grids = np.meshgrid(*([offsets] * dims), indexing="ij")
    r2 = sum(g * g for g in grids)
    kernel = np.exp(-r2 / (2.0 * sigma * sigma))
    return PSFKernel(kernel / kernel.sum())


def delta_psf(dims: int, side: int = 1) -> PSFKernel:
    """Identity kernel (single unit impulse at the center)."""
    if side % 2 == 0:
        raise ValueError("side must be odd")
    kernel = np.zeros((side,) * dims, dtype=np.float64)
    kernel[(side // 2,) * dims] = 1.0
    return PSFKernel(kernel)
