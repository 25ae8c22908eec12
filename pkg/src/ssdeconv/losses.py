"""Composite training loss: six weighted terms over masked/unmasked passes.

Terms (all non-negative, computed over the whole batch with masked pixels
pooled together):

* blind-spot   -- MSE at masked pixels between the reconvolved masked-pass
                  output and the noisy input.
* reconstruction -- MSE over all pixels between the reconvolved
                  unmasked-pass output and the noisy input.
* invariance   -- RMSE at masked pixels between the two passes' outputs;
                  one variant compares reconvolved outputs, the other the
                  raw (deconvolved) outputs.  Ties the Siamese branches
                  together so the reconstruction term cannot be satisfied
                  by an identity mapping.
* boundary     -- mean of |lo - v| + |v - hi| on destandardized outputs.
                  Constant (hi - lo) with zero gradient inside [lo, hi],
                  growing linearly outside: a hinge penalty plus a constant
                  floor, which logging therefore reports.

Presets: ``noise2self`` (blind-spot only, single forward pass),
``noise2same`` (reconstruction + reconvolved invariance + boundary) and
``noise2same_deconvolved`` (reconstruction + deconvolved invariance +
boundary).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import torch

from .core import NormStats

__all__ = [
    "LossConfig",
    "LossBreakdown",
    "LossInputs",
    "blind_spot_loss",
    "reconstruction_loss",
    "invariance_loss",
    "boundary_loss",
    "composite_loss",
    "noise2self",
    "noise2same",
    "noise2same_deconvolved",
    "preset_by_name",
]

TERM_NAMES = ("bsp", "rec", "inv", "inv_d", "bound", "bound_d")


@dataclass(frozen=True)
class LossConfig:
    lambda_bsp: float = 0.0
    lambda_rec: float = 0.0
    lambda_inv: float = 0.0
    lambda_inv_d: float = 0.0
    lambda_bound: float = 0.0
    lambda_bound_d: float = 0.0
    bound_min: float = 0.0
    bound_max: float = 1.0

    def __post_init__(self):
        if any(l < 0 for l in self.lambdas().values()):
            raise ValueError("loss weights must be >= 0")
        if all(l == 0 for l in self.lambdas().values()):
            raise ValueError("at least one loss weight must be > 0")
        if not self.bound_min < self.bound_max:
            raise ValueError("bound_min must be < bound_max")

    def lambdas(self) -> dict[str, float]:
        return {name: getattr(self, f"lambda_{name}") for name in TERM_NAMES}

    @property
    def needs_unmasked_pass(self) -> bool:
        return any(
            l > 0
            for l in (self.lambda_rec, self.lambda_inv, self.lambda_inv_d, self.lambda_bound, self.lambda_bound_d)
        )


def noise2self() -> LossConfig:
    """Blind-spot-only baseline; needs no unmasked forward pass."""
    return LossConfig(lambda_bsp=1.0)


def noise2same(lambda_inv: float = 2.0, lambda_bound: float = 0.1) -> LossConfig:
    """Reconstruction + reconvolved invariance (+ boundary)."""
    return LossConfig(lambda_rec=1.0, lambda_inv=lambda_inv, lambda_bound=lambda_bound)


def noise2same_deconvolved(lambda_inv_d: float = 2.0, lambda_bound_d: float = 0.1) -> LossConfig:
    """Reconstruction + deconvolved invariance (+ boundary)."""
    return LossConfig(lambda_rec=1.0, lambda_inv_d=lambda_inv_d, lambda_bound_d=lambda_bound_d)


_PRESETS = {
    "noise2self": noise2self,
    "noise2same": noise2same,
    "noise2same_d": noise2same_deconvolved,
}


def preset_by_name(name: str, **overrides) -> LossConfig:
    try:
        factory = _PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown loss preset {name!r}; choose from {sorted(_PRESETS)}") from None
    return factory(**overrides)


@dataclass(frozen=True)
class LossBreakdown:
    """Raw per-term values plus the lambda-weighted total, for logging."""

    bsp: float = 0.0
    rec: float = 0.0
    inv: float = 0.0
    inv_d: float = 0.0
    bound: float = 0.0
    bound_d: float = 0.0
    total: float = 0.0

    @classmethod
    def csv_header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def csv_row(self) -> list[float]:
        return [getattr(self, f.name) for f in fields(self)]


def _masked_values(t: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if mask is None:
        raise ValueError("mask is required")
    vals = t[mask]
    if vals.numel() == 0:
        raise ValueError("mask is empty")
    return vals


def blind_spot_loss(y_masked_reconv: torch.Tensor, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error restricted to the masked pixel set."""
    diff = _masked_values(y_masked_reconv, mask) - _masked_values(x, mask)
    return (diff * diff).mean()


def reconstruction_loss(y_unmasked_reconv: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    """Mean squared error over all pixels."""
    diff = y_unmasked_reconv - x
    return (diff * diff).mean()


def invariance_loss(a: torch.Tensor, b: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Root of the masked-pixel MSE between two branch outputs."""
    diff = _masked_values(a, mask) - _masked_values(b, mask)
    return torch.sqrt((diff * diff).mean())


def boundary_loss(y_destd: torch.Tensor, lo: float, hi: float) -> torch.Tensor:
    """Mean of |lo - v| + |v - hi| over destandardized values."""
    if not lo < hi:
        raise ValueError("lo must be < hi")
    return (torch.abs(lo - y_destd) + torch.abs(y_destd - hi)).mean()


@dataclass
class LossInputs:
    """Tensors feeding the composite loss; only those needed by nonzero
    weights have to be present."""

    x: torch.Tensor
    mask: Optional[torch.Tensor] = None
    f_unmasked: Optional[torch.Tensor] = None  # raw network output, unmasked pass
    f_masked: Optional[torch.Tensor] = None  # raw network output, masked pass
    g_unmasked: Optional[torch.Tensor] = None  # PSF-reconvolved unmasked output
    g_masked: Optional[torch.Tensor] = None  # PSF-reconvolved masked output
    norm_stats: Optional[NormStats] = None  # for destandardized boundary terms


def _require(value, name: str, term: str):
    if value is None:
        raise ValueError(f"loss term {term!r} has nonzero weight but {name} was not provided")
    return value


def composite_loss(inputs: LossInputs, cfg: LossConfig) -> tuple[torch.Tensor, LossBreakdown]:
    """Weighted sum of the active terms; terms with zero weight are skipped
    entirely (no wasted forward passes or destandardization)."""
    terms: dict[str, torch.Tensor] = {}

    if cfg.lambda_bsp > 0:
        g_m = _require(inputs.g_masked, "g_masked", "bsp")
        terms["bsp"] = blind_spot_loss(g_m, inputs.x, inputs.mask)
    if cfg.lambda_rec > 0:
        g_u = _require(inputs.g_unmasked, "g_unmasked", "rec")
        terms["rec"] = reconstruction_loss(g_u, inputs.x)
    if cfg.lambda_inv > 0:
        g_u = _require(inputs.g_unmasked, "g_unmasked", "inv")
        g_m = _require(inputs.g_masked, "g_masked", "inv")
        terms["inv"] = invariance_loss(g_u, g_m, inputs.mask)
    if cfg.lambda_inv_d > 0:
        f_u = _require(inputs.f_unmasked, "f_unmasked", "inv_d")
        f_m = _require(inputs.f_masked, "f_masked", "inv_d")
        terms["inv_d"] = invariance_loss(f_u, f_m, inputs.mask)
    if cfg.lambda_bound > 0 or cfg.lambda_bound_d > 0:
        stats = _require(inputs.norm_stats, "norm_stats", "bound")
    if cfg.lambda_bound > 0:
        g_u = _require(inputs.g_unmasked, "g_unmasked", "bound")
        terms["bound"] = boundary_loss(g_u * stats.std + stats.mean, cfg.bound_min, cfg.bound_max)
    if cfg.lambda_bound_d > 0:
        f_u = _require(inputs.f_unmasked, "f_unmasked", "bound_d")
        terms["bound_d"] = boundary_loss(f_u * stats.std + stats.mean, cfg.bound_min, cfg.bound_max)

    lambdas = cfg.lambdas()
    total = sum(lambdas[name] * term for name, term in terms.items())
    breakdown = LossBreakdown(
        **{name: float(term.detach()) for name, term in terms.items()},
        total=float(total.detach()),
    )
    return total, breakdown
