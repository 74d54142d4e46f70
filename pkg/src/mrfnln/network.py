"""Three-level encoder/decoder dehazing network.

Layout (widths C, 2C, 4C):

    entry conv3x3 -> [level-1 blocks] -> down 4x4/s2 -> [level-2 blocks]
      -> down 4x4/s2 -> [level-3 blocks] -> optional non-local attention
      -> up 4x4/s2 (+ level-2 skip) -> [level-2 blocks]
      -> up 4x4/s2 (+ level-1 skip) -> [level-1 blocks] -> exit conv3x3

Stage depth is realized by recursion: with ``recursion="shared"`` one block
instance per stage is applied depth times (weights reused), which is what
keeps the parameter count low; ``"independent"`` materializes depth separate
instances.  With cross non-local attention every level-3 application's output
is kept, fused by a 1x1 conv, and used as the key/value source while the last
output queries it.

The exit conv is zero-initialized, so a freshly built network is the zero map
(direct prediction).  With the off-by-default global_residual flag the input
is added back and a fresh network is instead the identity.  Inputs of
arbitrary size are reflect-padded up to multiples of 16 and the output is
cropped back.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from . import tensor as T
from .attention import FeatureFusion, NonLocalAttention, SamplerSpec
from .blocks import BLOCK_KINDS, BlockConfig, build_block
from .errors import ConfigError, ShapeMismatchError
from .nn import Conv2d, ConvTranspose2d, Module
from .tensor import Tensor

ATTENTION_VARIANTS = ("none", "nlb", "cnlb")
RECURSION_MODES = ("shared", "independent")
PAD_MULTIPLE = 16


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 32
    stage_depths: tuple = (1, 2, 4, 2, 1)
    block_kinds: tuple = ("rb", "rb", "msfab", "rb", "rb")
    attention: str = "cnlb"
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    recursion: str = "shared"
    ca_reduction: int = 8
    sa_reduction: int = 2
    global_residual: bool = False  # off: direct prediction, fresh net = zero map
    dtype: str = "f32"

    def __post_init__(self):
        if self.base_channels < self.ca_reduction:
            raise ConfigError(
                f"base_channels {self.base_channels} below ca_reduction "
                f"{self.ca_reduction}"
            )
        if len(self.stage_depths) != 5:
            raise ConfigError(
                f"stage_depths needs 5 entries (enc1, enc2, level3, dec2, dec1), "
                f"got {self.stage_depths}"
            )
        if any(d < 1 for d in self.stage_depths):
            raise ConfigError(f"stage depths must be >= 1, got {self.stage_depths}")
        if len(self.block_kinds) != 5:
            raise ConfigError(f"block_kinds needs 5 entries, got {self.block_kinds}")
        for kind in self.block_kinds:
            if kind not in BLOCK_KINDS:
                raise ConfigError(f"unknown block kind {kind!r}")
        if self.attention not in ATTENTION_VARIANTS:
            raise ConfigError(
                f"attention must be one of {ATTENTION_VARIANTS}, got {self.attention!r}"
            )
        if self.recursion not in RECURSION_MODES:
            raise ConfigError(
                f"recursion must be one of {RECURSION_MODES}, got {self.recursion!r}"
            )
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"dtype must be f32 or f64, got {self.dtype!r}")

    @property
    def level_widths(self) -> tuple:
        c = self.base_channels
        return (c, 2 * c, 4 * c)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64


PRESETS = {
    "B": NetworkConfig(),
    "L": NetworkConfig(stage_depths=(2, 4, 8, 4, 2)),
    "tiny": NetworkConfig(base_channels=8, stage_depths=(1, 1, 2, 1, 1)),
}


def preset(name: str) -> NetworkConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; pick from {sorted(PRESETS)}")


class _Stage(Module):
    """Depth applications of a block; one instance when weights are shared."""

    def __init__(self, kind: str, channels: int, depth: int, cfg: NetworkConfig,
                 rng, dtype):
        bc = BlockConfig(kind, channels, cfg.ca_reduction, cfg.sa_reduction)
        count = 1 if cfg.recursion == "shared" else depth
        self.blocks = [build_block(bc, rng, dtype) for _ in range(count)]
        self.depth = depth

    def __call__(self, x: Tensor, collect: Optional[List[Tensor]] = None) -> Tensor:
        for i in range(self.depth):
            block = self.blocks[0] if len(self.blocks) == 1 else self.blocks[i]
            x = block(x)
            if collect is not None:
                collect.append(x)
        return x


class DehazeNetwork(Module):
    def __init__(self, cfg: NetworkConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        dtype = cfg.np_dtype
        c1, c2, c3 = cfg.level_widths
        k1, k2, k3, k4, k5 = cfg.block_kinds
        d1, d2, d3, d4, d5 = cfg.stage_depths
        self.config = cfg

        self.entry = Conv2d(3, c1, 3, rng, dtype=dtype)
        self.enc1 = _Stage(k1, c1, d1, cfg, rng, dtype)
        self.down1 = Conv2d(c1, c2, 4, rng, stride=2, padding=1, dtype=dtype)
        self.enc2 = _Stage(k2, c2, d2, cfg, rng, dtype)
        self.down2 = Conv2d(c2, c3, 4, rng, stride=2, padding=1, dtype=dtype)
        self.level3 = _Stage(k3, c3, d3, cfg, rng, dtype)
        if cfg.attention == "cnlb":
            self.fuse = FeatureFusion(c3, d3, rng, dtype=dtype)
            self.attn = NonLocalAttention(c3, rng, cfg.sampler, dtype=dtype)
        elif cfg.attention == "nlb":
            self.attn = NonLocalAttention(c3, rng, SamplerSpec("none"), dtype=dtype)
        self.up1 = ConvTranspose2d(c3, c2, 4, rng, dtype=dtype)
        self.dec2 = _Stage(k4, c2, d4, cfg, rng, dtype)
        self.up2 = ConvTranspose2d(c2, c1, 4, rng, dtype=dtype)
        self.dec1 = _Stage(k5, c1, d5, cfg, rng, dtype)
        self.exit = Conv2d(c1, 3, 3, rng, dtype=dtype).zero_init()

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeMismatchError(f"expected [B,3,H,W] input, got {x.shape}")
        if x.shape[0] == 0:
            raise ShapeMismatchError("empty batch")
        B, _, H, W = x.shape
        pad_h = (-H) % PAD_MULTIPLE
        pad_w = (-W) % PAD_MULTIPLE
        if pad_h or pad_w:
            x = T.pad_reflect2d(x, (0, pad_h, 0, pad_w))

        f = self.entry(x)
        skip1 = self.enc1(f)
        f = self.enc2(self.down1(skip1))
        skip2 = f
        f = self.down2(f)

        if self.config.attention == "cnlb":
            level3_outputs: List[Tensor] = []
            f = self.level3(f, collect=level3_outputs)
            f = self.attn(f, self.fuse(level3_outputs))
        else:
            f = self.level3(f)
            if self.config.attention == "nlb":
                f = self.attn(f)

        f = self.dec2(T.add(self.up1(f), skip2))
        f = self.dec1(T.add(self.up2(f), skip1))
        out = self.exit(f)
        if self.config.global_residual:
            out = T.add(out, x)  # fresh net is then the identity map
        if pad_h or pad_w:
            out = T.crop2d(out, 0, 0, H, W)
        return out


def build_network(cfg: NetworkConfig, seed: int = 0) -> DehazeNetwork:
    return DehazeNetwork(cfg, seed)
