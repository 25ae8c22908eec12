"""Deconvolving U-Net: raw output is the sharp-image estimate.

Depth counts downsampling steps; feature width doubles with each one
(96 -> 192 -> 384 -> ... for the 2D default).  Encoder levels are single
3x3 conv-norm-ReLU blocks with max-pool downsampling; decoder levels
upsample by nearest-neighbor, fuse the skip (concatenation for 2D,
projected addition for 3D) through a 1x1 conv and refine with a 3x3 conv.
The head is an activation-free 1x1 conv so the output stays unbounded;
range regularization happens in the loss, after destandardization.

Normalization is batch-norm in 2D and per-sample instance-norm in 3D,
where batches are too small for reliable batch statistics.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .core import NormStats

__all__ = ["UNetConfig", "UNet", "build_unet", "Checkpoint", "save_checkpoint", "load_checkpoint"]


@dataclass(frozen=True)
class UNetConfig:
    dims: int = 2
    depth: int = 3  # number of downsampling steps
    base_features: int = 96
    skip_mode: str = "concat"  # "concat" or "add"

    def __post_init__(self):
        if self.dims not in (2, 3):
            raise ValueError(f"dims must be 2 or 3, got {self.dims}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_features < 1:
            raise ValueError("base_features must be >= 1")
        if self.skip_mode not in ("concat", "add"):
            raise ValueError(f"skip_mode must be 'concat' or 'add', got {self.skip_mode!r}")

    @staticmethod
    def default_2d() -> "UNetConfig":
        return UNetConfig(dims=2, depth=3, base_features=96, skip_mode="concat")

    @staticmethod
    def default_3d() -> "UNetConfig":
        return UNetConfig(dims=3, depth=3, base_features=48, skip_mode="add")


def _conv(dims, in_ch, out_ch, kernel):
    cls = nn.Conv2d if dims == 2 else nn.Conv3d
    return cls(in_ch, out_ch, kernel, padding=kernel // 2)


def _norm(dims, ch):
    if dims == 2:
        return nn.BatchNorm2d(ch)
    return nn.InstanceNorm3d(ch, affine=True)


def _block(dims, in_ch, out_ch, kernel=3):
    return nn.Sequential(_conv(dims, in_ch, out_ch, kernel), _norm(dims, out_ch), nn.ReLU(inplace=True))


class _DecoderLevel(nn.Module):
    def __init__(self, dims, in_ch, skip_ch, skip_mode):
        super().__init__()
        self.skip_mode = skip_mode
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        fuse_in = in_ch + skip_ch if skip_mode == "concat" else in_ch
        self.fuse = _block(dims, fuse_in, skip_ch, kernel=1)
        self.refine = _block(dims, skip_ch, skip_ch, kernel=3)

    def forward(self, x, skip):
        x = self.up(x)
        if self.skip_mode == "concat":
            x = self.fuse(torch.cat([x, skip], dim=1))
        else:
            x = self.fuse(x) + skip
        return self.refine(x)


class UNet(nn.Module):
    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        dims, depth, base = config.dims, config.depth, config.base_features
        widths = [base * 2**l for l in range(depth)]

        self.encoder = nn.ModuleList(
            _block(dims, 1 if l == 0 else widths[l - 1], widths[l]) for l in range(depth)
        )
        self.pool = nn.MaxPool2d(2) if dims == 2 else nn.MaxPool3d(2)
        self.bottleneck = _block(dims, widths[-1], base * 2**depth)
        self.decoder = nn.ModuleList(
            _DecoderLevel(dims, base * 2 ** (l + 1), widths[l], config.skip_mode)
            for l in reversed(range(depth))
        )
        self.head = _conv(dims, base, 1, kernel=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        dims, depth = self.config.dims, self.config.depth
        if x.ndim != dims + 2:
            raise ValueError(f"expected (batch, 1, {'x'.join(['spatial'] * dims)}) input, got {tuple(x.shape)}")
        div = 2**depth
        if any(s % div for s in x.shape[2:]):
            raise RuntimeError(
                f"spatial dims {tuple(x.shape[2:])} must be divisible by 2^depth = {div}"
            )
        skips = []
        for level in self.encoder:
            x = level(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for level, skip in zip(self.decoder, reversed(skips)):
            x = level(x, skip)
        return self.head(x)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_unet(config: UNetConfig) -> UNet:
    return UNet(config)


# --------------------------------------------------------------------------
# checkpoint format: weights + config + normalization stats + step
# --------------------------------------------------------------------------

CHECKPOINT_FORMAT = "ssdeconv.checkpoint/1"


@dataclass
class Checkpoint:
    model: UNet
    config: UNetConfig
    norm_stats: NormStats
    step: int


def save_checkpoint(path, model: UNet, norm_stats: NormStats, step: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "unet_config": asdict(model.config),
        "state_dict": model.state_dict(),
        "norm_stats": {"mean": norm_stats.mean, "std": norm_stats.std},
        "step": int(step),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: unrecognized checkpoint format {payload.get('format')!r}")
    config = UNetConfig(**payload["unet_config"])
    model = build_unet(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    stats = NormStats(**payload["norm_stats"])
    return Checkpoint(model=model, config=config, norm_stats=stats, step=payload["step"])
