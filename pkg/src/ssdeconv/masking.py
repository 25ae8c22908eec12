"""Blind-spot pixel sets and masked-input construction.

The masked forward pass sees the input with a small random pixel subset J
perturbed by Gaussian noise.  Default semantics add N(0, sigma^2) to the
original standardized value; ``mode="replace"`` substitutes a pure
N(0, sigma^2) draw instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Image, SeededRng, as_array

__all__ = ["MaskSet", "sample_mask", "apply_mask"]


@dataclass(eq=False)
class MaskSet:
    """Pixel coordinate set J plus its replacement-noise sigma."""

    indices: np.ndarray  # (n, ndim) int64, unique rows
    shape: tuple[int, ...]
    fraction: float
    noise_sigma: float

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[1] != len(self.shape):
            raise ValueError(f"indices must be (n, {len(self.shape)}), got {idx.shape}")
        if idx.shape[0] < 1:
            raise ValueError("mask must contain at least one pixel")
        if len(np.unique(np.ravel_multi_index(idx.T, self.shape))) != idx.shape[0]:
            raise ValueError("mask indices must be unique")
        if np.any(idx < 0) or np.any(idx >= np.array(self.shape)):
            raise ValueError("mask coordinate out of range")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.indices.shape[0]

    def coords(self) -> tuple[np.ndarray, ...]:
        """Index tuple usable for fancy indexing into an array of self.shape."""
        return tuple(self.indices[:, d] for d in range(self.indices.shape[1]))

    def to_grid(self) -> np.ndarray:
        grid = np.zeros(self.shape, dtype=bool)
        grid[self.coords()] = True
        return grid


def sample_mask(shape, fraction: float, rng: SeededRng, noise_sigma: float = 0.2) -> MaskSet:
    """Draw |J| = max(1, round(fraction * npixels)) coordinates uniformly
    without replacement."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    shape = tuple(int(s) for s in shape)
    m = int(np.prod(shape))
    n = max(1, round(fraction * m))
    flat = rng.generator.choice(m, size=n, replace=False)
    indices = np.stack(np.unravel_index(flat, shape), axis=1)
    return MaskSet(indices=indices, shape=shape, fraction=fraction, noise_sigma=noise_sigma)


def apply_mask(x_std, mask: MaskSet, rng: SeededRng, mode: str = "additive"):
    """Perturb exactly the masked pixels of a standardized image.

    Pixels outside J are returned bitwise unchanged.
    """
    if mode not in ("additive", "replace"):
        raise ValueError(f"mode must be 'additive' or 'replace', got {mode!r}")
    data = as_array(x_std)
    if data.shape != mask.shape:
        raise ValueError(f"image shape {data.shape} does not match mask shape {mask.shape}")
    out = data.copy()
    noise = rng.generator.normal(0.0, mask.noise_sigma, size=len(mask)).astype(data.dtype)
    coords = mask.coords()
    if mode == "additive":
        out[coords] = out[coords] + noise
    else:
        out[coords] = noise
    if isinstance(x_std, Image):
        return x_std.with_data(out)
    return out
