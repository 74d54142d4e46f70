"""Command-line entry point.

Subcommands: synth, train-proxy, train, eval, ablate, count, bench.
Exit codes: 0 ok; 2 usage or config error; 3 missing perceptual proxy;
4 non-finite training loss; 1 any other runtime failure.  --threads pins the
BLAS pool size (1 = reference mode) and must act before numpy loads, so all
heavy imports happen inside the handlers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time


def _set_threads(n: int):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = str(n)


def _add_common(sub, out_required=False):
    sub.add_argument("--seed", type=int, default=None,
                     help="override the config seed")
    sub.add_argument("--threads", type=int, default=None,
                     help="BLAS thread count (1 = reference mode)")
    sub.add_argument("--out", required=out_required, default=None,
                     help="output directory")


def _add_model_source(sub):
    sub.add_argument("--config", default=None, help="TOML experiment config")
    sub.add_argument("--preset", choices=("B", "L", "tiny"), default=None,
                     help="named network preset (default B)")


def _experiment(args):
    from .config import default_experiment, load_config
    from .errors import ConfigError
    if args.config and args.preset:
        raise ConfigError("pass --config or --preset, not both")
    if args.config:
        if not os.path.isfile(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        exp = load_config(args.config)
    else:
        exp = default_experiment(args.preset or "B")
    if args.seed is not None:
        from dataclasses import replace
        exp = type(exp)(network=exp.network,
                        train=replace(exp.train, seed=args.seed))
    return exp


def _write_records(out_dir, records):
    if not out_dir:
        return
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "records.jsonl"), "a") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def cmd_synth(args) -> int:
    from .hazesynth import make_dataset
    manifest = make_dataset(
        args.out,
        count=args.count,
        size=args.size,
        seed=args.seed if args.seed is not None else 0,
        image_format=args.format,
        clean_dir=args.clean,
        per_clean=args.per_clean,
        channel_independent=args.channel_independent,
        float_sidecar=args.float_sidecar,
        beta_range=tuple(args.beta),
    )
    print(manifest)
    return 0


def cmd_train_proxy(args) -> int:
    from .hazesynth import load_pairs
    from .perceptual import save_proxy, train_proxy
    pairs = load_pairs(args.manifest)
    seed = args.seed if args.seed is not None else 0
    model, report = train_proxy(pairs, seed=seed, steps=args.steps)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "proxy.ckpt")
    save_proxy(path, model)
    report["checkpoint"] = path
    print(json.dumps(report))
    _write_records(args.out, [{"kind": "proxy", **report}])
    return 0


def _load_extractor(path):
    from .errors import MissingProxyError
    from .perceptual import load_proxy
    if not path:
        raise MissingProxyError(
            "contrastive loss configured; pass --proxy with a trained "
            "perceptual checkpoint (see train-proxy)"
        )
    if not os.path.isfile(path):
        raise MissingProxyError(f"proxy checkpoint not found: {path}")
    return load_proxy(path)


def cmd_train(args) -> int:
    from .config import emit_config
    exp = _experiment(args)
    if args.emit_config:
        print(emit_config(exp), end="")
        return 0
    from .hazesynth import load_pairs
    from .network import build_network
    from .training import PairDataset, train
    extractor = None
    if exp.train.loss.active:
        extractor = _load_extractor(args.proxy)
    dataset = PairDataset(load_pairs(args.manifest))
    model = build_network(exp.network, seed=exp.train.seed)
    result = train(model, dataset, exp.train, extractor=extractor,
                   out_dir=args.out, resume=args.resume, quiet=False)
    print(f"trained {result.steps_run} steps, train-set PSNR "
          f"{result.final_psnr:.2f} dB"
          + (" (early stop)" if result.stopped_early else ""))
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .hazesynth import load_pairs
    from .network import build_network
    from .training import evaluate
    exp = _experiment(args)
    model = build_network(exp.network, seed=exp.train.seed)
    if args.checkpoint:
        load_checkpoint(args.checkpoint, model)
    report = evaluate(model, load_pairs(args.manifest))
    for entry in report["per_image"]:
        print(f"  id={entry['id']} psnr={entry['psnr']:.2f} "
              f"ssim={entry['ssim']:.4f}")
    print(f"mean over {report['count']} images: "
          f"psnr={report['psnr']:.2f} ssim={report['ssim']:.4f}")
    _write_records(args.out, [{"kind": "eval",
                               "checkpoint": args.checkpoint,
                               "psnr": report["psnr"],
                               "ssim": report["ssim"],
                               "count": report["count"]}])
    return 0


ATTENTION_CHOICES = {
    "none": ("none", None),
    "nlb": ("nlb", None),
    "cnlb": ("cnlb", "spds"),
    "cnlb-none": ("cnlb", "none"),
    "cnlb-spp": ("cnlb", "spp"),
    "cnlb-spds": ("cnlb", "spds"),
}


def _cell_config(base, block: str, attention: str):
    from dataclasses import replace
    from .attention import SamplerSpec
    from .errors import ConfigError
    if attention not in ATTENTION_CHOICES:
        raise ConfigError(f"unknown attention kind {attention!r}; pick from "
                          f"{sorted(ATTENTION_CHOICES)}")
    attn, sampler = ATTENTION_CHOICES[attention]
    kinds = base.block_kinds[:2] + (block,) + base.block_kinds[3:]
    cfg = replace(base, block_kinds=kinds, attention=attn)
    if sampler is not None:
        cfg = replace(cfg, sampler=SamplerSpec(sampler))
    return cfg


def cmd_ablate(args) -> int:
    from dataclasses import replace
    from .errors import ConfigError
    from .hazesynth import load_pairs
    from .losses import CRConfig
    from .network import build_network, preset
    from .perceptual import train_proxy
    from .training import PairDataset, TrainConfig, evaluate, train

    seed = args.seed if args.seed is not None else 0
    blocks = args.blocks.split(",")
    attentions = args.attention.split(",")
    losses = args.losses.split(",")
    base = preset(args.preset or "tiny")
    pairs = load_pairs(args.manifest)
    dataset = PairDataset(pairs)

    extractor = None
    if any(l != "none" for l in losses):
        if args.proxy:
            extractor = _load_extractor(args.proxy)
        else:
            print("no --proxy given; fitting a short proxy on this manifest",
                  file=sys.stderr)
            extractor, report = train_proxy(pairs, seed=seed, steps=150)
            print(f"proxy holdout accuracy "
                  f"{report['holdout_accuracy']:.2f}", file=sys.stderr)

    records = []
    for block in blocks:
        for attention in attentions:
            for loss in losses:
                cell = {"block": block, "attention": attention, "loss": loss}
                try:
                    net_cfg = _cell_config(base, block, attention)
                    train_cfg = TrainConfig(
                        iterations=args.iterations, seed=seed,
                        loss=CRConfig(loss),
                        eval_interval=args.iterations,
                        checkpoint_interval=args.iterations,
                        crop=args.crop, augment=False)
                    model = build_network(net_cfg, seed=seed)
                    train(model, dataset, train_cfg, extractor=extractor)
                    report = evaluate(model, dataset.pairs)
                    cell.update(psnr=round(report["psnr"], 3),
                                ssim=round(report["ssim"], 4))
                except ConfigError:
                    raise
                except Exception as exc:  # one cell must not kill the sweep
                    cell["error"] = f"{type(exc).__name__}: {exc}"
                records.append(cell)
                note = cell.get("error", f"psnr={cell.get('psnr')}")
                print(f"[{len(records)}] {block}/{attention}/{loss}: {note}",
                      flush=True)

    ranked = sorted((r for r in records if "psnr" in r),
                    key=lambda r: r["psnr"], reverse=True)
    print("\nsummary (PSNR descending):")
    for r in ranked:
        print(f"  {r['block']:12s} {r['attention']:10s} {r['loss']:8s} "
              f"psnr={r['psnr']:.2f} ssim={r['ssim']:.4f}")
    _trend_notes(ranked)
    _write_records(args.out, [{"kind": "ablation-cell", **r} for r in records])
    return 0 if ranked or not records else 1


def _trend_notes(ranked):
    """Soft directional observations only; absolute values are desk-scale."""

    def best(pred):
        vals = [r["psnr"] for r in ranked if pred(r)]
        return max(vals) if vals else None

    msfab = best(lambda r: r["block"] == "msfab")
    fab = best(lambda r: r["block"] == "fab")
    if msfab is not None and fab is not None:
        word = "matches" if msfab >= fab else "does not match"
        print(f"trend: best MSFAB {msfab:.2f} vs best FAB {fab:.2f} dB "
              f"({word} the expected MSFAB >= FAB direction; desk-scale "
              f"run, absolute values not comparable to full training)")
    dfcr = best(lambda r: r["loss"] == "dfcr")
    plain = best(lambda r: r["loss"] == "none")
    if dfcr is not None and plain is not None:
        word = "matches" if dfcr >= plain else "does not match"
        print(f"trend: best DFCR {dfcr:.2f} vs best no-CR {plain:.2f} dB "
              f"({word} the expected DFCR >= no-CR direction)")


def cmd_count(args) -> int:
    from .accounting import cost_report
    exp = _experiment(args)
    report = cost_report(exp.network, args.res, args.res)
    print(report.table())
    print("convention: one mac = one multiply-accumulate; elementwise ops, "
          "pooling and softmax are not counted")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "costs.json"), "w") as fh:
            fh.write(report.to_json())
    return 0


def cmd_bench(args) -> int:
    import numpy as np
    from dataclasses import replace
    from .attention import NonLocalAttention, SamplerSpec
    from .network import build_network
    from .tensor import Tensor, no_grad
    exp = _experiment(args)
    net_cfg = exp.network
    if args.sampler:
        net_cfg = replace(net_cfg, sampler=SamplerSpec(args.sampler))
    model = build_network(net_cfg, seed=exp.train.seed)
    rng = np.random.default_rng(exp.train.seed)
    x = Tensor(rng.random((1, 3, args.res, args.res)).astype(np.float32))

    def clock(fn, repeats):
        fn()  # warm up
        t0 = time.perf_counter()
        for _ in range(repeats):
            fn()
        return (time.perf_counter() - t0) / repeats

    with no_grad():
        forward_s = clock(lambda: model(x), args.repeats)
        width = net_cfg.level_widths[2]
        h3 = (args.res + (-args.res) % 16) // 4
        q = Tensor(rng.random((1, width, h3, h3)).astype(np.float32))
        attn = NonLocalAttention(width, np.random.default_rng(0),
                                 net_cfg.sampler)
        attn_s = clock(lambda: attn(q, q), args.repeats)

    result = {"kind": "bench", "sampler": net_cfg.sampler.variant,
              "res": args.res, "forward_s": round(forward_s, 4),
              "attention_s": round(attn_s, 4)}
    print(f"forward {forward_s * 1e3:.1f} ms, attention stage "
          f"{attn_s * 1e3:.1f} ms (sampler={net_cfg.sampler.variant}, "
          f"{args.res}x{args.res})")
    print(json.dumps(result))
    _write_records(args.out, [result])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrfnln",
        description="multi-receptive-field non-local dehazing toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a hazy/clean dataset")
    _add_common(p, out_required=True)
    p.add_argument("--count", type=int, default=None,
                   help="number of procedural clean scenes")
    p.add_argument("--clean", default=None,
                   help="directory of existing clean images to haze")
    p.add_argument("--per-clean", type=int, default=1)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--format", choices=("png", "ppm"), default="png")
    p.add_argument("--beta", type=float, nargs=2, default=[0.6, 1.8],
                   metavar=("LO", "HI"))
    p.add_argument("--channel-independent", action="store_true")
    p.add_argument("--float-sidecar", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("train-proxy", help="fit the perceptual classifier")
    _add_common(p, out_required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--steps", type=int, default=220)
    p.set_defaults(func=cmd_train_proxy)

    p = subs.add_parser("train", help="train a dehazing network")
    _add_common(p)
    _add_model_source(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--proxy", default=None,
                   help="perceptual checkpoint, needed when CR loss is on")
    p.add_argument("--resume", action="store_true",
                   help="continue from the checkpoint in --out")
    p.add_argument("--emit-config", action="store_true",
                   help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="evaluate a checkpoint over a manifest")
    _add_common(p)
    _add_model_source(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", default=None,
                   help="weights to load (omit for a fresh network)")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("ablate", help="sweep block/attention/loss variants")
    _add_common(p)
    p.add_argument("--preset", choices=("B", "L", "tiny"), default="tiny")
    p.add_argument("--manifest", required=True)
    p.add_argument("--proxy", default=None)
    p.add_argument("--blocks", default="fab,msfab",
                   help="comma list from rb,fab,msfe,parallel_fe,msfab")
    p.add_argument("--attention", default="none,cnlb",
                   help=f"comma list from {sorted(ATTENTION_CHOICES)}")
    p.add_argument("--losses", default="none,dfcr",
                   help="comma list from none,dfcr,sifcr,original")
    p.add_argument("--iterations", type=int, default=120)
    p.add_argument("--crop", type=int, default=64)
    p.set_defaults(func=cmd_ablate)

    p = subs.add_parser("count", help="print the parameter/mac ledger")
    _add_common(p)
    _add_model_source(p)
    p.add_argument("--res", type=int, default=256)
    p.set_defaults(func=cmd_count)

    p = subs.add_parser("bench", help="wall-clock forward timing")
    _add_common(p)
    _add_model_source(p)
    p.add_argument("--res", type=int, default=256)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--sampler", choices=("none", "spds", "spp"), default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        _set_threads(args.threads)

    from .errors import (CheckpointError, ConfigError, ImageFormatError,
                         ManifestError, MissingProxyError, NanLossError)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingProxyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NanLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (CheckpointError, ManifestError, ImageFormatError, OSError,
            ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
