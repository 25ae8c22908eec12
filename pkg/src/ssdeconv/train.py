"""Single-image self-supervised training loop.

One model is trained per image.  The image is standardized once (full-image
statistics, reused at inference); each step samples random augmented
patches, draws a fresh blind-spot mask per patch, runs the masked forward
pass (and the unmasked one when any Siamese/reconstruction term is active),
reconvolves with the fixed PSF where needed, and takes an Adam step on the
composite loss with a stepwise-decaying learning rate.

RNG streams are derived per (seed, step, slot), so batch assembly is
reproducible no matter how it is scheduled.  No validation set exists in
the single-image regime; the final checkpoint is the deliverable.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .core import Image, NormStats, PSFKernel, SeededRng, standardize
from .fftconv import ConvBackend, convolve
from .losses import LossBreakdown, LossConfig, LossInputs, composite_loss, noise2same, noise2same_deconvolved
from .masking import apply_mask, sample_mask
from .unet import Checkpoint, UNet, UNetConfig, build_unet, load_checkpoint, save_checkpoint

__all__ = ["TrainConfig", "lr_at", "sample_patch", "Trainer", "train", "write_training_log"]

# Adam moment/epsilon parameters stay at the optimizer's canonical defaults
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    dims: int = 2
    patch_size: int = 128
    batch_size: int = 16
    total_steps: int = 3000
    lr0: float = 4e-4
    lr_decay: float = 0.5
    lr_decay_every: int = 500
    mask_fraction: float = 0.005
    mask_sigma: float = 0.2
    mask_mode: str = "additive"
    loss: LossConfig = field(default_factory=noise2same_deconvolved)
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.dims not in (2, 3):
            raise ValueError("dims must be 2 or 3")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be >= 1")
        if not 0 < self.mask_fraction < 1:
            raise ValueError("mask_fraction must be in (0, 1)")

    @staticmethod
    def defaults_2d(**overrides) -> "TrainConfig":
        return replace(TrainConfig(), **overrides)

    @staticmethod
    def defaults_3d(**overrides) -> "TrainConfig":
        base = TrainConfig(
            dims=3,
            patch_size=64,
            batch_size=4,
            total_steps=15000,
            lr_decay_every=2000,
            loss=noise2same(),
        )
        return replace(base, **overrides)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Stepwise-decayed learning rate: lr0 * decay^(step // decay_every)."""
    if not 0 <= step < cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps})")
    return cfg.lr0 * cfg.lr_decay ** (step // cfg.lr_decay_every)


def _augment_2d(patch: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    patch = np.rot90(patch, k=int(gen.integers(4)))
    if gen.integers(2):
        patch = np.flip(patch, axis=1)
    return patch


_ROT_PLANES_3D = ((0, 1), (0, 2), (1, 2))


def _augment_3d(patch: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    for axis in range(3):
        if gen.integers(2):
            patch = np.flip(patch, axis=axis)
    plane = _ROT_PLANES_3D[int(gen.integers(3))]
    return np.rot90(patch, k=int(gen.integers(4)), axes=plane)


def sample_patch(img_std: np.ndarray, size: int, rng: SeededRng) -> np.ndarray:
    """Uniformly positioned crop followed by a random flip/right-angle
    rotation.  Images smaller than the patch are reflect-padded (warned)."""
    data = img_std
    if any(d < size for d in data.shape):
        warnings.warn(
            f"image {data.shape} smaller than patch size {size}; reflect-padding", stacklevel=2
        )
        pads = [(0, max(0, size - d)) for d in data.shape]
        data = np.pad(data, pads, mode="reflect")
    gen = rng.generator
    origin = [int(gen.integers(0, d - size + 1)) for d in data.shape]
    patch = data[tuple(slice(o, o + size) for o in origin)]
    if data.ndim == 2:
        patch = _augment_2d(patch, gen)
    else:
        patch = _augment_3d(patch, gen)
    return np.ascontiguousarray(patch, dtype=np.float32)


@dataclass
class TrainLogRow:
    step: int
    lr: float
    breakdown: LossBreakdown
    wall_ms: float

    @staticmethod
    def csv_header() -> list[str]:
        return ["step", "lr", *LossBreakdown.csv_header(), "wall_ms"]

    def csv_row(self) -> list:
        return [self.step, self.lr, *self.breakdown.csv_row(), self.wall_ms]


def write_training_log(path, rows: list[TrainLogRow]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TrainLogRow.csv_header())
        for row in rows:
            writer.writerow(row.csv_row())


class Trainer:
    """Owns the model and optimizer for one image; single-threaded use."""

    def __init__(
        self,
        image: Image,
        psf: PSFKernel,
        cfg: TrainConfig,
        unet_config: UNetConfig | None = None,
    ):
        if image.ndim != cfg.dims:
            raise ValueError(f"image is {image.ndim}D but config says dims={cfg.dims}")
        if psf.ndim != cfg.dims:
            raise ValueError(f"PSF is {psf.ndim}D but config says dims={cfg.dims}")
        if unet_config is None:
            unet_config = UNetConfig.default_2d() if cfg.dims == 2 else UNetConfig.default_3d()
        if cfg.patch_size % 2**unet_config.depth:
            raise ValueError(
                f"patch_size {cfg.patch_size} not divisible by 2^depth = {2**unet_config.depth}"
            )
        self.cfg = cfg
        self.psf = psf
        self.unet_config = unet_config

        std_img, stats = standardize(image)
        self.image_std = std_img.data
        self.norm_stats: NormStats = stats

        torch.manual_seed(cfg.seed)
        self.model: UNet = build_unet(unet_config)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(), lr=cfg.lr0, betas=ADAM_BETAS, eps=ADAM_EPS
        )
        self.rng = SeededRng(cfg.seed)
        self.step = 0
        self.forwards_last_step = 0

    def make_batch(self, step: int):
        """Assemble (input, masked input, mask) tensors for one step."""
        cfg = self.cfg
        xs, xms, grids = [], [], []
        for slot in range(cfg.batch_size):
            patch = sample_patch(self.image_std, cfg.patch_size, self.rng.child("patch", step, slot))
            mask_rng = self.rng.child("mask", step, slot)
            mask = sample_mask(patch.shape, cfg.mask_fraction, mask_rng, noise_sigma=cfg.mask_sigma)
            masked = apply_mask(patch, mask, mask_rng, mode=cfg.mask_mode)
            xs.append(patch)
            xms.append(masked)
            grids.append(mask.to_grid())
        x = torch.from_numpy(np.stack(xs)[:, None])
        x_masked = torch.from_numpy(np.stack(xms)[:, None])
        mask_grid = torch.from_numpy(np.stack(grids)[:, None])
        return x, x_masked, mask_grid

    def train_step(self, batch, step: int) -> LossBreakdown:
        cfg = self.cfg
        loss_cfg: LossConfig = cfg.loss
        x, x_masked, mask = batch
        self.model.train()
        self.forwards_last_step = 0

        f_masked = self.model(x_masked)
        self.forwards_last_step += 1
        g_masked = None
        if loss_cfg.lambda_bsp > 0 or loss_cfg.lambda_inv > 0:
            g_masked = convolve(f_masked, self.psf, backend=ConvBackend.AUTO, padding="reflect")

        f_unmasked = g_unmasked = None
        if loss_cfg.needs_unmasked_pass:
            f_unmasked = self.model(x)
            self.forwards_last_step += 1
            if loss_cfg.lambda_rec > 0 or loss_cfg.lambda_inv > 0 or loss_cfg.lambda_bound > 0:
                g_unmasked = convolve(f_unmasked, self.psf, backend=ConvBackend.AUTO, padding="reflect")

        total, breakdown = composite_loss(
            LossInputs(
                x=x,
                mask=mask,
                f_unmasked=f_unmasked,
                f_masked=f_masked,
                g_unmasked=g_unmasked,
                g_masked=g_masked,
                norm_stats=self.norm_stats,
            ),
            loss_cfg,
        )
        if not torch.isfinite(total):
            raise RuntimeError(f"non-finite loss at step {step}: {breakdown}")

        lr = lr_at(step, cfg)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        return breakdown

    def run(self, checkpoint_path=None, log_path=None) -> tuple[Checkpoint, list[TrainLogRow]]:
        cfg = self.cfg
        rows: list[TrainLogRow] = []
        for step in range(self.step, cfg.total_steps):
            t0 = time.perf_counter()
            batch = self.make_batch(step)
            breakdown = self.train_step(batch, step)
            wall_ms = (time.perf_counter() - t0) * 1e3
            self.step = step + 1
            if self.step % cfg.log_every == 0:
                rows.append(TrainLogRow(step=step, lr=lr_at(step, cfg), breakdown=breakdown, wall_ms=wall_ms))
            if checkpoint_path and self.step % cfg.checkpoint_every == 0 and self.step < cfg.total_steps:
                save_checkpoint(checkpoint_path, self.model, self.norm_stats, self.step)
        if checkpoint_path:
            save_checkpoint(checkpoint_path, self.model, self.norm_stats, self.step)
        if log_path:
            write_training_log(log_path, rows)
        self.model.eval()
        checkpoint = Checkpoint(
            model=self.model, config=self.unet_config, norm_stats=self.norm_stats, step=self.step
        )
        return checkpoint, rows


def train(
    image: Image,
    psf: PSFKernel,
    cfg: TrainConfig,
    unet_config: UNetConfig | None = None,
    checkpoint_path=None,
    log_path=None,
    resume: bool = False,
) -> tuple[Checkpoint, list[TrainLogRow]]:
    """Train to cfg.total_steps and return the final checkpoint plus the
    per-step loss log (at cfg.log_every cadence).

    With ``resume=True`` and an existing checkpoint file, weights and step
    counter are restored and training continues (optimizer moments restart).
    """
    trainer = Trainer(image, psf, cfg, unet_config)
    if resume and checkpoint_path and Path(checkpoint_path).exists():
        previous = load_checkpoint(checkpoint_path)
        trainer.model.load_state_dict(previous.model.state_dict())
        trainer.step = previous.step
    return trainer.run(checkpoint_path=checkpoint_path, log_path=log_path)
