"""Prediction from a trained model: unmasked pass, PSF never applied.

Large volumes are predicted by overlapping tiles blended with pyramid
(separable tent) weights, which removes seam artifacts; the weight grid is
strictly positive, so the normalizing division is always well defined.
Images no larger than one tile take the untiled path exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from itertools import product

import numpy as np
import torch

from .core import Image, NormStats
from .unet import UNet

__all__ = ["TileConfig", "pyramid_weights", "predict"]


@dataclass(frozen=True)
class TileConfig:
    tile_size: int = 128
    overlap: int = 32
    enabled: bool = True

    def __post_init__(self):
        if self.overlap < 0 or 2 * self.overlap >= self.tile_size:
            raise ValueError(
                f"need 0 <= 2*overlap < tile_size, got overlap={self.overlap}, tile_size={self.tile_size}"
            )


def pyramid_weights(shape) -> np.ndarray:
    """Separable tent profile peaking at 1 in the center, positive everywhere."""
    shape = tuple(int(s) for s in shape)
    if any(s < 2 for s in shape):
        raise ValueError(f"all dims must be >= 2, got {shape}")
    profiles = []
    for n in shape:
        i = np.arange(n, dtype=np.float64)
        tent = np.minimum(i + 1, n - i)
        profiles.append(tent / tent.max())
    return reduce(np.multiply.outer, profiles).astype(np.float32)


def _forward_whole(model: UNet, arr: np.ndarray) -> np.ndarray:
    """Single forward pass, reflect-padding to the model's divisibility."""
    div = 2**model.config.depth
    pads = [(0, (-d) % div) for d in arr.shape]
    padded = np.pad(arr, pads, mode="reflect") if any(p[1] for p in pads) else arr
    with torch.no_grad():
        out = model(torch.from_numpy(padded[None, None].copy()))
    out = out[0, 0].numpy()
    return out[tuple(slice(0, d) for d in arr.shape)]


def predict(
    model: UNet,
    img: Image,
    stats: NormStats,
    tiles: TileConfig | None = None,
    clip: bool = True,
) -> Image:
    """Deconvolved estimate: destandardize(f(standardize(img))).

    Standardization reuses the training-time ``stats``.  No masking and no
    PSF convolution happen here.  ``clip=False`` returns the raw unbounded
    output instead of clamping to the image's nominal range.
    """
    if img.ndim != model.config.dims:
        raise ValueError(f"model is {model.config.dims}D but image is {img.ndim}D")
    model.eval()
    x = ((img.data.astype(np.float64) - stats.mean) / stats.std).astype(np.float32)

    use_tiles = tiles is not None and tiles.enabled and any(d > tiles.tile_size for d in x.shape)
    if not use_tiles:
        out = _forward_whole(model, x)
    else:
        div = 2**model.config.depth
        if tiles.tile_size < div or tiles.tile_size % div:
            raise ValueError(f"tile_size {tiles.tile_size} must be a positive multiple of 2^depth = {div}")
        tile = tiles.tile_size
        stride = tile - tiles.overlap
        counts = [1 + math.ceil(max(d - tile, 0) / stride) for d in x.shape]
        padded_shape = [(c - 1) * stride + tile for c in counts]
        xp = np.pad(x, [(0, p - d) for p, d in zip(padded_shape, x.shape)], mode="reflect")
        weights = pyramid_weights((tile,) * x.ndim).astype(np.float64)
        acc = np.zeros(padded_shape, dtype=np.float64)
        norm = np.zeros(padded_shape, dtype=np.float64)
        with torch.no_grad():
            for origin in product(*(range(c) for c in counts)):
                sl = tuple(slice(o * stride, o * stride + tile) for o in origin)
                pred = model(torch.from_numpy(xp[sl][None, None].copy()))[0, 0].numpy()
                acc[sl] += pred * weights
                norm[sl] += weights
        out = (acc / norm)[tuple(slice(0, d) for d in x.shape)].astype(np.float32)

    restored = out.astype(np.float64) * stats.std + stats.mean
    if clip:
        lo, hi = img.value_range
        restored = np.clip(restored, lo, hi)
    return Image(restored.astype(np.float32), value_range=img.value_range)
