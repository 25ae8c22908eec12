"""Shared data types: intensity grids, PSF kernels, normalization stats, seeded RNG.

All heavy compute runs in float32; statistics are accumulated in float64.
Every type here is an immutable value after construction and safe to share
across threads.  A :class:`SeededRng` is the one exception: it is a mutable
stream and must be owned by a single consumer.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Image",
    "PSFKernel",
    "NormStats",
    "SeededRng",
    "standardize",
    "destandardize",
    "as_array",
]

# std below this fraction of the declared value range counts as degenerate
DEGENERATE_STD_FRACTION = 1e-8


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float32)
    out.flags.writeable = False
    return out


@dataclass(eq=False)
class Image:
    """Single-channel 2D or 3D intensity grid with a declared nominal range."""

    data: np.ndarray
    value_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        data = _freeze(self.data)
        if data.ndim not in (2, 3):
            raise ValueError(f"images must be 2D or 3D, got {data.ndim}D")
        if any(d < 1 for d in data.shape):
            raise ValueError(f"all image dims must be >= 1, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "value_range", (float(self.value_range[0]), float(self.value_range[1])))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def with_data(self, data: np.ndarray, value_range: tuple[float, float] | None = None) -> "Image":
        return Image(data, self.value_range if value_range is None else value_range)


@dataclass(eq=False)
class PSFKernel:
    """Non-negative, odd-sided convolution kernel normalized to unit mass.

    Acts as the fixed forward blur operator.  Instances are immutable, which
    lets the convolution engine cache their spectra keyed by object identity.
    """

    data: np.ndarray

    def __post_init__(self):
        data = _freeze(self.data)
        if data.ndim not in (2, 3):
            raise ValueError(f"PSF kernels must be 2D or 3D, got {data.ndim}D")
        if any(d % 2 == 0 for d in data.shape):
            raise ValueError(f"PSF kernels need odd side lengths, got shape {data.shape}")
        if np.any(data < 0):
            raise ValueError("PSF kernel has negative entries")
        total = float(data.sum(dtype=np.float64))
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"PSF kernel must sum to 1 (got {total:.8f})")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def flipped(self) -> "PSFKernel":
        """Kernel mirrored along every axis (the transpose of the blur operator)."""
        return PSFKernel(np.flip(self.data))


@dataclass(frozen=True)
class NormStats:
    """Per-image affine normalization parameters."""

    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"std must be > 0, got {self.std}")


def _label_key(label) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode("utf-8"))
    return int(label)


@dataclass(eq=False)
class SeededRng:
    """Deterministic random stream: equal seeds (and derivation paths) give
    equal draw sequences on the same build.

    ``child(*keys)`` derives an independent stream; deriving by fixed labels
    such as ``(step, slot)`` keeps parallel pipelines reproducible regardless
    of scheduling.  A single instance must not be drawn from by two threads.
    """

    seed: int
    path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.seed = int(self.seed)
        self.path = tuple(_label_key(k) for k in self.path)
        self._generator = None

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            seq = np.random.SeedSequence([self.seed, *self.path])
            self._generator = np.random.Generator(np.random.PCG64(seq))
        return self._generator

    def child(self, *keys) -> "SeededRng":
        return SeededRng(self.seed, self.path + tuple(_label_key(k) for k in keys))

    def derive_seed(self, *keys) -> int:
        """Stable integer seed for components that take a plain int."""
        seq = np.random.SeedSequence([self.seed, *self.path, *(_label_key(k) for k in keys)])
        return int(seq.generate_state(1, dtype=np.uint32)[0])


def as_array(img) -> np.ndarray:
    """Accept an Image or a bare ndarray and return the underlying array."""
    if isinstance(img, Image):
        return img.data
    return np.asarray(img)


def standardize(img: Image) -> tuple[Image, NormStats]:
    """Shift/scale an image to zero mean and unit variance.

    Returns the standardized image and the stats needed to invert the map.
    Raises on (near-)constant input, for which no unit-variance rescaling
    exists.
    """
    data = img.data.astype(np.float64)
    mean = float(data.mean())
    std = float(data.std())
    lo, hi = img.value_range
    span = hi - lo if hi > lo else 1.0
    if std < DEGENERATE_STD_FRACTION * span:
        raise ValueError("degenerate standardization: image std is (near) zero")
    out = ((data - mean) / std).astype(np.float32)
    stats = NormStats(mean=mean, std=std)
    return Image(out, value_range=((lo - mean) / std, (hi - mean) / std)), stats


def destandardize(img: Image, stats: NormStats) -> Image:
    """Inverse of :func:`standardize`: elementwise ``x * std + mean``."""
    out = img.data.astype(np.float64) * stats.std + stats.mean
    lo, hi = img.value_range
    return Image(out.astype(np.float32), value_range=(lo * stats.std + stats.mean, hi * stats.std + stats.mean))
