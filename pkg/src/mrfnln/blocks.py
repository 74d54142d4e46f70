"""Feature extraction and attention blocks.

Every block maps [B,C,H,W] -> [B,C,H,W] and ends with a local residual:

    Z = X + SpatialAttention(ChannelAttention(FeatureExtractor(X)))

(the plain residual block skips the attention pair).  Feature extractors
differ in receptive-field structure:

  rb           conv3x3 -> relu -> conv3x3, no attention
  fab          conv3x3 -> relu -> add input -> conv3x3, pointwise attention
  msfe         three streams (1x1, 3x3, dilated 3x3) fused by a 1x1 conv,
               pointwise spatial attention
  parallel_fe  three parallel 3x3 streams (same receptive field), pointwise
               spatial attention; the control arm for the multi-scale claim
  msfab        msfe streams with the dilated spatial attention pair

The dilated spatial attention stacks two 3x3 convs at dilation 2, growing the
mask's dependence radius to 4 pixels; the pointwise variant stays at radius 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import Conv2d, Module
from .tensor import Tensor

BLOCK_KINDS = ("rb", "fab", "msfe", "parallel_fe", "msfab")


@dataclass(frozen=True)
class BlockConfig:
    kind: str
    channels: int
    ca_reduction: int = 8
    sa_reduction: int = 2

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ConfigError(f"unknown block kind {self.kind!r}; pick from {BLOCK_KINDS}")
        if self.channels < 1:
            raise ConfigError(f"channels must be positive, got {self.channels}")
        if self.channels % self.ca_reduction:
            raise ConfigError(
                f"channels {self.channels} not divisible by ca_reduction {self.ca_reduction}"
            )
        if self.channels % self.sa_reduction:
            raise ConfigError(
                f"channels {self.channels} not divisible by sa_reduction {self.sa_reduction}"
            )


class ChannelAttention(Module):
    """Squeeze (GAP) -> 1x1 bottleneck -> sigmoid gate per channel."""

    def __init__(self, channels: int, reduction: int, rng, dtype=np.float32):
        mid = channels // reduction
        self.squeeze = Conv2d(channels, mid, 1, rng, dtype=dtype)
        self.expand = Conv2d(mid, channels, 1, rng, dtype=dtype)

    def gate(self, y: Tensor) -> Tensor:
        return T.sigmoid(self.expand(T.relu(self.squeeze(T.global_avg_pool(y)))))

    def __call__(self, y: Tensor) -> Tensor:
        return T.mul(y, self.gate(y))


class SpatialAttention(Module):
    """Per-pixel sigmoid mask; pointwise (1x1) or dilated (3x3, d=2) convs."""

    def __init__(self, channels: int, reduction: int, rng, dilated: bool,
                 dtype=np.float32):
        mid = channels // reduction
        k, d = (3, 2) if dilated else (1, 1)
        self.narrow = Conv2d(channels, mid, k, rng, dilation=d, dtype=dtype)
        self.collapse = Conv2d(mid, 1, k, rng, dilation=d, dtype=dtype)

    def mask(self, y: Tensor) -> Tensor:
        return T.sigmoid(self.collapse(T.relu(self.narrow(y))))

    def __call__(self, y: Tensor) -> Tensor:
        return T.mul(y, self.mask(y))


class ResidualBlock(Module):
    def __init__(self, channels: int, rng, dtype=np.float32):
        self.conv_a = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.conv_b = Conv2d(channels, channels, 3, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(x, self.conv_b(T.relu(self.conv_a(x))))


class SingleConvExtractor(Module):
    """conv -> relu -> add input -> conv; the single-receptive-field baseline."""

    def __init__(self, channels: int, rng, dtype=np.float32):
        self.conv_a = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.conv_b = Conv2d(channels, channels, 3, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv_b(T.add(x, T.relu(self.conv_a(x))))


class MultiStreamExtractor(Module):
    """Three conv streams concatenated, fused by 1x1, then a closing 3x3.

    With ``widen=True`` the streams cover receptive fields 1, 3 and 5 (the
    5 via a dilated 3x3, which spans 5 pixels with 3x3 cost); with
    ``widen=False`` all three are plain 3x3, keeping the parameter layout
    but removing the scale diversity.
    """

    def __init__(self, channels: int, rng, widen: bool, dtype=np.float32):
        c = channels
        if widen:
            self.stream_a = Conv2d(c, c, 1, rng, dtype=dtype)
            self.stream_b = Conv2d(c, c, 3, rng, dtype=dtype)
            self.stream_c = Conv2d(c, c, 3, rng, dilation=2, dtype=dtype)
        else:
            self.stream_a = Conv2d(c, c, 3, rng, dtype=dtype)
            self.stream_b = Conv2d(c, c, 3, rng, dtype=dtype)
            self.stream_c = Conv2d(c, c, 3, rng, dtype=dtype)
        self.fuse = Conv2d(3 * c, c, 1, rng, dtype=dtype)
        self.close = Conv2d(c, c, 3, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        streams = T.concat([self.stream_a(x), self.stream_b(x), self.stream_c(x)],
                           axis=1)
        return self.close(T.add(x, T.relu(self.fuse(streams))))


class AttentionBlock(Module):
    """extractor -> channel gate -> spatial mask -> residual add."""

    def __init__(self, extractor: Module, channels: int, ca_reduction: int,
                 sa_reduction: int, rng, dilated_sa: bool, dtype=np.float32):
        self.extract = extractor
        self.channel_attn = ChannelAttention(channels, ca_reduction, rng, dtype)
        self.spatial_attn = SpatialAttention(channels, sa_reduction, rng,
                                             dilated=dilated_sa, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        y = self.extract(x)
        return T.add(x, self.spatial_attn(self.channel_attn(y)))


def build_block(cfg: BlockConfig, rng, dtype=np.float32) -> Module:
    c = cfg.channels
    if cfg.kind == "rb":
        return ResidualBlock(c, rng, dtype)
    if cfg.kind == "fab":
        fe = SingleConvExtractor(c, rng, dtype)
        return AttentionBlock(fe, c, cfg.ca_reduction, cfg.sa_reduction, rng,
                              dilated_sa=False, dtype=dtype)
    if cfg.kind == "msfe":
        fe = MultiStreamExtractor(c, rng, widen=True, dtype=dtype)
        return AttentionBlock(fe, c, cfg.ca_reduction, cfg.sa_reduction, rng,
                              dilated_sa=False, dtype=dtype)
    if cfg.kind == "parallel_fe":
        fe = MultiStreamExtractor(c, rng, widen=False, dtype=dtype)
        return AttentionBlock(fe, c, cfg.ca_reduction, cfg.sa_reduction, rng,
                              dilated_sa=False, dtype=dtype)
    if cfg.kind == "msfab":
        fe = MultiStreamExtractor(c, rng, widen=True, dtype=dtype)
        return AttentionBlock(fe, c, cfg.ca_reduction, cfg.sa_reduction, rng,
                              dilated_sa=True, dtype=dtype)
    raise ConfigError(f"unknown block kind {cfg.kind!r}")
