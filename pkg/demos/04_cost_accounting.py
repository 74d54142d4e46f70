"""Parameter, multiply-accumulate, and peak-activation accounting:
the symbolic walk, its agreement with built models, and what the token
sampler buys at the attention stage.

Run from the repo root:  python3 demos/04_cost_accounting.py
"""

from dataclasses import replace

from mrfnln.accounting import (
    cost_report,
    count_macs,
    count_params,
    peak_activation_estimate,
)
from mrfnln.network import build_network, preset

print("== presets ==")
for name in ("tiny", "B", "L"):
    cfg = preset(name)
    symbolic = count_params(cfg)
    built = build_network(cfg, seed=0).param_count()
    print(f"  {name:4s} symbolic {symbolic:>9,}  built {built:>9,}  "
          f"match={symbolic == built}")

print("\n== the per-layer ledger ==")
report = cost_report(preset("B"), 256, 256)
lines = report.table().splitlines()
print("\n".join(lines[:12]))
print(f"  ... {len(lines) - 12} more rows ...")
print(f"total params {report.total_params:,}   "
      f"total MACs {report.total_macs:,}")

print("\n== what the sampler saves ==")
# Keys and values shrink to 5/16 of the dense token count, so the two
# attention matmuls shrink by the same exact factor.
def attn_macs(sampler_variant: str) -> int:
    cfg = replace(preset("B"),
                  sampler=replace(preset("B").sampler, variant=sampler_variant))
    rows = cost_report(cfg, 256, 256).rows
    return sum(r.macs for r in rows if "scores" in r.name or "context" in r.name)

dense = attn_macs("none")
pyramid = attn_macs("spds")
print(f"  attention matmul MACs dense   {dense:>13,}")
print(f"  attention matmul MACs pyramid {pyramid:>13,}")
print(f"  ratio = {pyramid / dense} (exactly 5/16 = {5 / 16})")

print("\n== peak activation direction ==")
for variant in ("none", "spds"):
    cfg = replace(preset("B"),
                  sampler=replace(preset("B").sampler, variant=variant))
    peak = peak_activation_estimate(cfg, 256, 256)
    print(f"  {variant:5s} peak {peak:>12,} floats "
          f"(~{peak * 4 / 2**20:.0f} MiB in f32)")

print("\n== cost scaling with resolution ==")
for res in (64, 128, 256):
    macs = count_macs(preset("B"), res, res)
    print(f"  {res}x{res}: {macs / 1e9:7.2f} GMACs")
