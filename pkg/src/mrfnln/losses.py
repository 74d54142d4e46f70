"""Training losses: L1 plus contrastive regularization over perceptual taps.

The contrastive term pulls the network output toward the clean image and
pushes it away from its hazy input in feature space:

    sum_i w_i * L1(phi_i(clean), phi_i(out)) / (L1(phi_i(hazy), phi_i(out)) + eps)

Gradients flow through both the numerator and the denominator (the output
appears in each); the clean and hazy branches are detached and the extractor
is expected to be frozen.  Tap menus:

    dfcr      taps (1, 3, 5), unit weights: early, detail-heavy features only,
              and the tower never runs past conv 5
    sifcr     taps (9, 13), unit weights: structure/illumination features
    original  taps (1, 3, 5, 9, 13) with weights (1/32, 1/16, 1/8, 1/4, 1)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .perceptual import TOTAL_CONVS
from .tensor import Tensor

CR_VARIANTS = ("none", "dfcr", "sifcr", "original")

_TAP_MENUS = {
    "none": ((), ()),
    "dfcr": ((1, 3, 5), (1.0, 1.0, 1.0)),
    "sifcr": ((9, 13), (1.0, 1.0)),
    "original": ((1, 3, 5, 9, 13), (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)),
}


@dataclass(frozen=True)
class CRConfig:
    variant: str = "dfcr"
    taps: Optional[tuple] = None
    weights: Optional[tuple] = None
    eps: float = 1e-7
    beta: float = 0.1  # contrastive weight inside the total loss

    def __post_init__(self):
        if self.variant not in CR_VARIANTS:
            raise ConfigError(f"unknown CR variant {self.variant!r}")
        taps, weights = _TAP_MENUS[self.variant]
        if self.taps is None:
            object.__setattr__(self, "taps", taps)
        if self.weights is None:
            object.__setattr__(self, "weights", weights)
        if len(self.taps) != len(self.weights):
            raise ConfigError(
                f"{len(self.taps)} taps but {len(self.weights)} weights"
            )
        if any(t < 1 or t > TOTAL_CONVS for t in self.taps):
            raise ConfigError(f"taps must lie in 1..{TOTAL_CONVS}, got {self.taps}")
        if any(w <= 0 for w in self.weights):
            raise ConfigError(f"weights must be positive, got {self.weights}")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")

    @property
    def active(self) -> bool:
        return self.variant != "none" and len(self.taps) > 0 and self.beta > 0


def cr_loss(output: Tensor, clean: Tensor, hazy: Tensor, extractor,
            cfg: CRConfig) -> Tensor:
    """Contrastive term; zero tensor when the config disables it."""
    if cfg.variant == "none" or not cfg.taps:
        return Tensor(np.zeros((), dtype=output.data.dtype))
    feats_out = extractor.features(output, cfg.taps)
    feats_clean = extractor.features(clean.detach(), cfg.taps)
    feats_hazy = extractor.features(hazy.detach(), cfg.taps)
    total = None
    for tap, weight in zip(cfg.taps, cfg.weights):
        pull = T.mean_abs_diff(feats_clean[tap].detach(), feats_out[tap])
        push = T.add_scalar(T.mean_abs_diff(feats_hazy[tap].detach(),
                                            feats_out[tap]), cfg.eps)
        term = T.scale(T.div(pull, push), weight)
        total = term if total is None else T.add(total, term)
    return total


def total_loss(output: Tensor, clean: Tensor, hazy: Tensor, extractor,
               cfg: CRConfig) -> Tuple[Tensor, Dict[str, float]]:
    """L1 + beta * CR; returns the scalar and a float breakdown for logging."""
    l1 = T.mean_abs_diff(output, clean.detach())
    if not cfg.active:
        return l1, {"l1": float(l1.data), "cr": 0.0}
    if extractor is None:
        raise ConfigError("contrastive loss requested but no extractor supplied")
    cr = cr_loss(output, clean, hazy, extractor, cfg)
    combined = T.add(l1, T.scale(cr, cfg.beta))
    return combined, {"l1": float(l1.data), "cr": float(cr.data)}
