"""Cost accounting: parameters, multiply counts, and activation footprints.

Everything here is computed symbolically from a NetworkConfig, never by
running the model; tests cross-check the parameter column against actually
built networks.  Conventions:

  * macs are multiply-accumulate counts at batch 1: k*k*cin*cout*hout*wout
    for convs (dilation free), k*k*cin*cout*hin*win for transposed convs
    (each input position scatters a k x k patch), and n*s*embed for each of
    the two attention products.  Elementwise work, pooling comparisons and
    softmax are not counted.
  * peak_activations counts float elements of logical arrays live at the
    worst moment of a batch-1 forward pass (inputs, skips, stashed level-3
    outputs, attention token/score matrices), ignoring allocator slack and
    BLAS scratch.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import List, Tuple

from .attention import SamplerSpec
from .errors import ConfigError
from .network import PAD_MULTIPLE, NetworkConfig


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str  # conv | deconv | matmul
    params: int
    macs: int


@dataclass
class CostReport:
    config_summary: str
    height: int
    width: int
    rows: List[LayerCost]
    total_params: int
    total_macs: int
    peak_activations: int

    def table(self) -> str:
        lines = [f"costs for {self.config_summary} at {self.height}x{self.width}",
                 f"{'layer':<34}{'kind':<9}{'params':>12}{'macs':>16}"]
        for r in self.rows:
            lines.append(f"{r.name:<34}{r.kind:<9}{r.params:>12,}{r.macs:>16,}")
        lines.append(f"{'total':<34}{'':<9}{self.total_params:>12,}"
                     f"{self.total_macs:>16,}")
        lines.append(f"peak activation elements: {self.peak_activations:,}")
        return "\n".join(lines)

    def to_json(self) -> str:
        payload = asdict(self)
        payload["rows"] = [asdict(r) for r in self.rows]
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "CostReport":
        payload = json.loads(text)
        payload["rows"] = [LayerCost(**r) for r in payload["rows"]]
        return cls(**payload)


def _conv_cost(name, cin, cout, k, h, w, stride=1) -> LayerCost:
    ho, wo = h // stride, w // stride
    return LayerCost(name, "conv", cout * cin * k * k + cout,
                     k * k * cin * cout * ho * wo)


def _deconv_cost(name, cin, cout, k, h, w) -> LayerCost:
    return LayerCost(name, "deconv", cin * cout * k * k + cout,
                     k * k * cin * cout * h * w)


def _block_rows(prefix, kind, c, ca_r, sa_r, h, w) -> List[LayerCost]:
    rows = []
    if kind == "rb":
        rows.append(_conv_cost(f"{prefix}.conv_a", c, c, 3, h, w))
        rows.append(_conv_cost(f"{prefix}.conv_b", c, c, 3, h, w))
        return rows
    if kind == "fab":
        rows.append(_conv_cost(f"{prefix}.conv_a", c, c, 3, h, w))
        rows.append(_conv_cost(f"{prefix}.conv_b", c, c, 3, h, w))
    elif kind in ("msfe", "msfab"):
        rows.append(_conv_cost(f"{prefix}.stream_a", c, c, 1, h, w))
        rows.append(_conv_cost(f"{prefix}.stream_b", c, c, 3, h, w))
        rows.append(_conv_cost(f"{prefix}.stream_c", c, c, 3, h, w))
        rows.append(_conv_cost(f"{prefix}.fuse", 3 * c, c, 1, h, w))
        rows.append(_conv_cost(f"{prefix}.close", c, c, 3, h, w))
    elif kind == "parallel_fe":
        for tag in ("stream_a", "stream_b", "stream_c"):
            rows.append(_conv_cost(f"{prefix}.{tag}", c, c, 3, h, w))
        rows.append(_conv_cost(f"{prefix}.fuse", 3 * c, c, 1, h, w))
        rows.append(_conv_cost(f"{prefix}.close", c, c, 3, h, w))
    else:
        raise ConfigError(f"unknown block kind {kind!r}")
    # Channel gate runs on the 1x1 pooled map.
    rows.append(_conv_cost(f"{prefix}.ca_squeeze", c, c // ca_r, 1, 1, 1))
    rows.append(_conv_cost(f"{prefix}.ca_expand", c // ca_r, c, 1, 1, 1))
    sa_k = 3 if kind == "msfab" else 1
    rows.append(_conv_cost(f"{prefix}.sa_narrow", c, c // sa_r, sa_k, h, w))
    rows.append(_conv_cost(f"{prefix}.sa_collapse", c // sa_r, 1, sa_k, h, w))
    return rows


def _padded(h: int, w: int) -> Tuple[int, int]:
    return h + (-h) % PAD_MULTIPLE, w + (-w) % PAD_MULTIPLE


def network_costs(cfg: NetworkConfig, height: int, width: int) -> List[LayerCost]:
    """Per-layer rows for a batch-1 forward at the given input size.

    Stages applied more than once get one row per application with macs at the
    stage resolution; under shared recursion the repeat rows carry zero params
    so the parameter column sums to the true model size.
    """
    h, w = _padded(height, width)
    c1, c2, c3 = cfg.level_widths
    d1, d2, d3, d4, d5 = cfg.stage_depths
    k1, k2, k3, k4, k5 = cfg.block_kinds
    rows: List[LayerCost] = [_conv_cost("entry", 3, c1, 3, h, w)]

    def stage(prefix, kind, c, depth, sh, sw):
        out = []
        for i in range(depth):
            block_rows = _block_rows(f"{prefix}[{i}]", kind, c,
                                     cfg.ca_reduction, cfg.sa_reduction, sh, sw)
            if cfg.recursion == "shared" and i > 0:
                block_rows = [LayerCost(r.name, r.kind, 0, r.macs)
                              for r in block_rows]
            out.extend(block_rows)
        return out

    rows += stage("enc1", k1, c1, d1, h, w)
    rows.append(_conv_cost("down1", c1, c2, 4, h, w, stride=2))
    h2, w2 = h // 2, w // 2
    rows += stage("enc2", k2, c2, d2, h2, w2)
    rows.append(_conv_cost("down2", c2, c3, 4, h2, w2, stride=2))
    h3, w3 = h2 // 2, w2 // 2
    rows += stage("level3", k3, c3, d3, h3, w3)

    if cfg.attention in ("nlb", "cnlb"):
        embed = c3 // 2
        sampler = cfg.sampler if cfg.attention == "cnlb" else SamplerSpec("none")
        n = h3 * w3
        s = sampler.token_count(h3, w3)
        if cfg.attention == "cnlb":
            rows.append(_conv_cost("attn.fuse", c3 * d3, c3, 1, h3, w3))
        rows.append(_conv_cost("attn.to_query", c3, embed, 1, h3, w3))
        rows.append(_conv_cost("attn.to_key", c3, embed, 1, h3, w3))
        rows.append(_conv_cost("attn.to_value", c3, embed, 1, h3, w3))
        rows.append(LayerCost("attn.scores", "matmul", 0, n * s * embed))
        rows.append(LayerCost("attn.context", "matmul", 0, n * s * embed))
        rows.append(_conv_cost("attn.project", embed, c3, 1, h3, w3))

    rows.append(_deconv_cost("up1", c3, c2, 4, h3, w3))
    rows += stage("dec2", k4, c2, d4, h2, w2)
    rows.append(_deconv_cost("up2", c2, c1, 4, h2, w2))
    rows += stage("dec1", k5, c1, d5, h, w)
    rows.append(_conv_cost("exit", c1, 3, 3, h, w))
    return rows


def count_params(cfg: NetworkConfig) -> int:
    return sum(r.params for r in network_costs(cfg, PAD_MULTIPLE, PAD_MULTIPLE))


def count_macs(cfg: NetworkConfig, height: int, width: int) -> int:
    """Total multiply-accumulates for one batch-1 forward (MAC convention)."""
    return sum(r.macs for r in network_costs(cfg, height, width))


_BLOCK_LIVE_FACTOR = {"rb": 3, "fab": 5, "msfe": 7, "parallel_fe": 7, "msfab": 7}


def peak_activation_estimate(cfg: NetworkConfig, height: int, width: int) -> int:
    """Float elements live at the worst point of a batch-1 forward.

    Tracks persistent arrays (input, the two skip maps, stashed level-3
    outputs) plus a per-step working set; block working sets use a coarse
    per-kind multiple of the stage map size.
    """
    h, w = _padded(height, width)
    c1, c2, c3 = cfg.level_widths
    h2, w2 = h // 2, w // 2
    h3, w3 = h2 // 2, w2 // 2
    d3 = cfg.stage_depths[2]

    peak = 0

    def visit(live):
        nonlocal peak
        peak = max(peak, live + held_input)

    x_in = 3 * h * w
    # With the global-residual flag the padded input stays live to the end,
    # so it rides along in every later working set.
    held_input = x_in if cfg.global_residual else 0

    skip1 = c1 * h * w
    skip2 = c2 * h2 * w2

    visit(x_in - held_input + skip1)                        # entry conv
    blk1 = _BLOCK_LIVE_FACTOR[cfg.block_kinds[0]] * c1 * h * w
    visit(skip1 + blk1)                                     # enc1 stage
    visit(skip1 + c2 * h2 * w2)                             # down1
    blk2 = _BLOCK_LIVE_FACTOR[cfg.block_kinds[1]] * c2 * h2 * w2
    visit(skip1 + skip2 + blk2)                             # enc2 stage
    held = skip1 + skip2
    visit(held + c3 * h3 * w3)                              # down2

    level3_map = c3 * h3 * w3
    stash = d3 * level3_map if cfg.attention == "cnlb" else 0
    blk3 = _BLOCK_LIVE_FACTOR[cfg.block_kinds[2]] * level3_map
    visit(held + stash + blk3)                              # level-3 stage

    if cfg.attention in ("nlb", "cnlb"):
        embed = c3 // 2
        sampler = cfg.sampler if cfg.attention == "cnlb" else SamplerSpec("none")
        n = h3 * w3
        s = sampler.token_count(h3, w3)
        tokens = (n + 2 * s) * embed
        scores = 2 * n * s                                  # logits + softmax
        visit(held + stash + level3_map + tokens + scores)
        visit(held + level3_map + n * embed + level3_map)   # project + residual

    visit(held + level3_map + skip2)                        # up1
    blk4 = _BLOCK_LIVE_FACTOR[cfg.block_kinds[3]] * c2 * h2 * w2
    visit(skip1 + blk4)                                     # dec2 stage
    visit(skip1 + c1 * h * w)                               # up2
    blk5 = _BLOCK_LIVE_FACTOR[cfg.block_kinds[4]] * c1 * h * w
    visit(blk5)                                             # dec1 stage
    visit(c1 * h * w + 3 * h * w)                           # exit conv
    return peak


def cost_report(cfg: NetworkConfig, height: int, width: int) -> CostReport:
    rows = network_costs(cfg, height, width)
    summary = (f"C={cfg.base_channels} depths={tuple(cfg.stage_depths)} "
               f"blocks={tuple(cfg.block_kinds)} attention={cfg.attention}"
               + (f"/{cfg.sampler.variant}" if cfg.attention == "cnlb" else ""))
    return CostReport(
        config_summary=summary,
        height=height,
        width=width,
        rows=rows,
        total_params=sum(r.params for r in rows),
        total_macs=sum(r.macs for r in rows),
        peak_activations=peak_activation_estimate(cfg, height, width),
    )
