"""End-to-end training on a thumbnail dataset: batching, the cosine
schedule, checkpointing, and PSNR/SSIM evaluation.  Runs in well under a
minute; for the real overfit smoke see the acceptance tests.

Run from the repo root:  python3 demos/05_training.py
"""

import tempfile
from dataclasses import replace
from pathlib import Path

from mrfnln.hazesynth import load_pairs, make_dataset
from mrfnln.network import build_network, preset
from mrfnln.training import PairDataset, TrainConfig, evaluate, train

with tempfile.TemporaryDirectory() as tmp:
    print("== data ==")
    manifest = make_dataset(Path(tmp) / "data", count=4, size=48, seed=3,
                            beta_range=(0.2, 0.6))
    dataset = PairDataset(load_pairs(manifest))
    print(f"{len(dataset.pairs)} pairs of 48x48 images")

    print("\n== model ==")
    cfg_net = replace(preset("tiny"), global_residual=True)
    model = build_network(cfg_net, seed=0)
    print(f"tiny preset with global residual: {model.param_count():,} params")

    before = evaluate(model, dataset.pairs)
    print(f"untrained: psnr={before['psnr']:.2f} dB ssim={before['ssim']:.4f}")
    # With a zero-initialized exit conv the fresh network is the identity,
    # so this baseline is just hazy-vs-clean fidelity.

    print("\n== 60 steps ==")
    cfg = TrainConfig(iterations=60, lr_init=1e-3, lr_final=1e-4,
                      batch_size=2, crop=48, seed=0,
                      eval_interval=20, checkpoint_interval=60)
    run_dir = Path(tmp) / "run"
    result = train(model, dataset, cfg, out_dir=run_dir, quiet=False)

    print("\n== afterwards ==")
    after = evaluate(model, dataset.pairs)
    print(f"trained:   psnr={after['psnr']:.2f} dB ssim={after['ssim']:.4f}")
    print(f"improvement: {after['psnr'] - before['psnr']:+.2f} dB on the "
          f"training pairs")

    print("\n== artifacts ==")
    for p in sorted(run_dir.iterdir()):
        print(f"  {p.name}  ({p.stat().st_size:,} bytes)")

    # The checkpoint restores bitwise: a fresh model evaluates identically.
    from mrfnln.checkpoint import load_checkpoint

    clone = build_network(cfg_net, seed=1)
    load_checkpoint(run_dir / "model.ckpt", clone)
    again = evaluate(clone, dataset.pairs)
    print(f"reloaded checkpoint: psnr={again['psnr']:.2f} dB "
          f"(matches: {abs(again['psnr'] - after['psnr']) < 1e-12})")
