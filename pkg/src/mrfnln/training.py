"""Dehazing training loop: Adam with cosine annealing over augmented crops.

Determinism contract: the batch drawn at step t depends only on (seed, t),
never on loop history, so a run resumed from a checkpoint at step k replays
steps k..T bitwise identically to an uninterrupted run (single-threaded).
Augmentation is lossless only: right-angle rotation and horizontal/vertical
flips.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, NanLossError
from .imageio import to_uint8, to_unit_float
from .losses import CRConfig, total_loss
from .metrics import psnr, ssim
from .optim import Adam, cosine_lr
from .tensor import Tensor, no_grad

CHECKPOINT_NAME = "model.ckpt"
RECORDS_NAME = "records.jsonl"


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    lr_init: float = 2e-4
    lr_final: float = 1e-6
    batch_size: int = 4  # desk default; 16 stays reachable via config
    crop: int = 64
    seed: int = 0
    loss: CRConfig = field(default_factory=lambda: CRConfig("none"))
    augment: bool = True
    eval_interval: int = 200
    checkpoint_interval: int = 500
    early_stop_psnr: Optional[float] = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.lr_final > self.lr_init:
            raise ConfigError(
                f"lr_final {self.lr_final} exceeds lr_init {self.lr_init}"
            )
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.crop % 16 != 0 or self.crop < 16:
            raise ConfigError(f"crop must be a positive multiple of 16, "
                              f"got {self.crop}")
        if self.eval_interval < 1 or self.checkpoint_interval < 1:
            raise ConfigError("eval and checkpoint intervals must be >= 1")


class PairDataset:
    """In-memory clean/hazy pairs with stateless per-step batch sampling."""

    def __init__(self, pairs: List[dict]):
        if not pairs:
            raise ConfigError("dataset needs at least one pair")
        for p in pairs:
            if p["clean"].shape != p["hazy"].shape:
                raise ConfigError(
                    f"pair {p.get('id')}: clean {p['clean'].shape} vs hazy "
                    f"{p['hazy'].shape}"
                )
        self.pairs = pairs

    def __len__(self):
        return len(self.pairs)

    def batch(self, step: int, cfg: TrainConfig, dtype=np.float32):
        """Crops + augmentations for one step, [B,3,c,c] hazy/clean tensors."""
        rng = np.random.default_rng([cfg.seed, 2, step])
        hazy_list, clean_list = [], []
        for _ in range(cfg.batch_size):
            rec = self.pairs[rng.integers(len(self.pairs))]
            h, w = rec["clean"].shape[:2]
            if h < cfg.crop or w < cfg.crop:
                raise ConfigError(
                    f"image {rec.get('id')} is {h}x{w}, smaller than crop "
                    f"{cfg.crop}"
                )
            top = rng.integers(h - cfg.crop + 1)
            left = rng.integers(w - cfg.crop + 1)
            sl = (slice(top, top + cfg.crop), slice(left, left + cfg.crop))
            clean = rec["clean"][sl]
            hazy = rec["hazy"][sl]
            if cfg.augment:
                k = int(rng.integers(4))
                clean, hazy = np.rot90(clean, k), np.rot90(hazy, k)
                if rng.integers(2):
                    clean, hazy = clean[::-1], hazy[::-1]
                if rng.integers(2):
                    clean, hazy = clean[:, ::-1], hazy[:, ::-1]
            clean_list.append(np.ascontiguousarray(clean.transpose(2, 0, 1)))
            hazy_list.append(np.ascontiguousarray(hazy.transpose(2, 0, 1)))
        hazy_arr = np.stack(hazy_list).astype(dtype)
        clean_arr = np.stack(clean_list).astype(dtype)
        return Tensor(hazy_arr), Tensor(clean_arr)


def content_hash(extra: str = "") -> str:
    """Short sha1 over the package source plus any config text."""
    h = hashlib.sha1()
    for path in sorted(Path(__file__).resolve().parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    h.update(extra.encode())
    return h.hexdigest()[:12]


def restore_output(out: Tensor) -> np.ndarray:
    """[1,3,H,W] network output -> [H,W,3] float64 clamped to [0,1]."""
    img = out.data[0].transpose(1, 2, 0).astype(np.float64)
    return np.clip(img, 0.0, 1.0)


def evaluate(model, pairs, compute_ssim: bool = True) -> dict:
    """Mean PSNR (and optionally SSIM) over full, uncropped images.

    Outputs are clamped to [0,1] and quantized to 8 bits before scoring, the
    same precision the dataset images carry on disk; training itself never
    clamps or quantizes.
    """
    dtype = model.config.np_dtype if hasattr(model, "config") else np.float32
    per_image = []
    with no_grad():
        for rec in pairs:
            x = rec["hazy"].transpose(2, 0, 1)[None].astype(dtype)
            restored = restore_output(model(Tensor(x)))
            restored = to_unit_float(to_uint8(restored))
            entry = {"id": rec.get("id"),
                     "psnr": psnr(restored, rec["clean"])}
            if compute_ssim:
                entry["ssim"] = ssim(restored, rec["clean"])
            per_image.append(entry)
    report = {
        "count": len(per_image),
        "psnr": float(np.mean([e["psnr"] for e in per_image])),
        "per_image": per_image,
    }
    if compute_ssim:
        report["ssim"] = float(np.mean([e["ssim"] for e in per_image]))
    return report


@dataclass
class TrainResult:
    steps_run: int
    final_psnr: float
    stopped_early: bool
    records: List[dict]
    checkpoint_path: Optional[str]


def _require_finite(value: float, term: str, step: int):
    if not np.isfinite(value):
        raise NanLossError(step, term)


def train(model, dataset: PairDataset, cfg: TrainConfig,
          extractor=None, out_dir=None, resume: bool = False,
          stop_after: Optional[int] = None, quiet: bool = True) -> TrainResult:
    """Run (or resume) a training job; returns the final train-set report.

    When out_dir is given, a rolling checkpoint and line-delimited JSON
    records are written there; resume=True picks up from that checkpoint.
    stop_after interrupts the session at that absolute step (checkpointing
    first) without touching the schedule, so a later resume completes the
    run exactly as if it had never stopped.
    """
    if cfg.loss.active and extractor is None:
        raise ConfigError("contrastive loss configured without an extractor")
    out_path = Path(out_dir) if out_dir is not None else None
    ckpt_path = out_path / CHECKPOINT_NAME if out_path else None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)

    optimizer = Adam(dict(model.named_parameters()))
    start_step = 0
    if resume:
        if ckpt_path is None or not ckpt_path.exists():
            raise ConfigError("resume requested but no checkpoint found")
        start_step = load_checkpoint(ckpt_path, model, optimizer)

    run_hash = content_hash(json.dumps(asdict(cfg), sort_keys=True))
    records: List[dict] = []
    t0 = time.perf_counter()

    def emit(record):
        record["hash"] = run_hash
        record["wall_time"] = round(time.perf_counter() - t0, 3)
        records.append(record)
        if out_path:
            with open(out_path / RECORDS_NAME, "a") as fh:
                fh.write(json.dumps(record) + "\n")
        if not quiet:
            print(json.dumps(record))

    loss_value = None
    final_psnr = None
    stopped_early = False
    step = start_step
    while step < cfg.iterations:
        lr = cosine_lr(step, cfg.iterations, cfg.lr_init, cfg.lr_final)
        hazy, clean = dataset.batch(step, cfg, dtype=model.config.np_dtype)
        output = model(hazy)
        loss, parts = total_loss(output, clean, hazy, extractor, cfg.loss)
        _require_finite(parts["l1"], "l1", step)
        _require_finite(parts["cr"], "cr", step)
        loss_value = float(loss.data)
        _require_finite(loss_value, "total", step)
        model.zero_grad()
        loss.backward()
        optimizer.step(lr)
        step += 1

        at_end = step == cfg.iterations
        if step % cfg.eval_interval == 0 or at_end:
            report = evaluate(model, dataset.pairs, compute_ssim=False)
            final_psnr = report["psnr"]
            emit({"kind": "interval", "step": step, "lr": lr,
                  "loss": loss_value, "l1": parts["l1"], "cr": parts["cr"],
                  "train_psnr": final_psnr})
            if (cfg.early_stop_psnr is not None
                    and final_psnr > cfg.early_stop_psnr):
                stopped_early = True
        interrupted = stop_after is not None and step >= stop_after
        if ckpt_path and (step % cfg.checkpoint_interval == 0 or at_end
                          or stopped_early or interrupted):
            save_checkpoint(ckpt_path, model, step=step, optimizer=optimizer)
        if stopped_early or interrupted:
            break

    if final_psnr is None:  # resumed at (or past) the end without an eval
        final_psnr = evaluate(model, dataset.pairs, compute_ssim=False)["psnr"]
        if ckpt_path:
            save_checkpoint(ckpt_path, model, step=step, optimizer=optimizer)
    emit({"kind": "summary", "steps": step, "loss": loss_value,
          "train_psnr": final_psnr, "stopped_early": stopped_early,
          "config": asdict(cfg)})
    return TrainResult(steps_run=step, final_psnr=final_psnr,
                       stopped_early=stopped_early, records=records,
                       checkpoint_path=str(ckpt_path) if ckpt_path else None)
