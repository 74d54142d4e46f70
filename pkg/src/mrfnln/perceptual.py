"""Perceptual feature tower trained as a hazy-vs-clean classifier.

Thirteen 3x3 convs in five stages of widths (16, 32, 64, 64, 64) and counts
(2, 2, 3, 3, 3), with 2x2 max pooling between stages and a GAP + linear head
producing one logit (hazy = 1, clean = 0).  ``features`` returns post-ReLU
conv outputs by 1-based conv index and only runs the tower as deep as the
largest requested tap, which is what makes shallow-tap losses cheaper.

Inputs must be [B,3,H,W] with H, W divisible by 16 when any tap beyond conv
10 (or the classifier head) is used; shallower taps need fewer halvings.
"""

from __future__ import annotations

from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError
from .nn import Conv2d, Module
from .optim import Adam
from .tensor import Tensor

STAGE_WIDTHS = (16, 32, 64, 64, 64)
STAGE_CONV_COUNTS = (2, 2, 3, 3, 3)
TOTAL_CONVS = sum(STAGE_CONV_COUNTS)  # 13


def _pool_after() -> set:
    """Conv indices (1-based) followed by a 2x2 max pool."""
    marks = set()
    done = 0
    for count in STAGE_CONV_COUNTS[:-1]:
        done += count
        marks.add(done)
    return marks


POOL_AFTER = _pool_after()  # {2, 4, 7, 10}


class PerceptualExtractor(Module):
    def __init__(self, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        convs: List[Conv2d] = []
        in_ch = 3
        for width, count in zip(STAGE_WIDTHS, STAGE_CONV_COUNTS):
            for _ in range(count):
                convs.append(Conv2d(in_ch, width, 3, rng, dtype=dtype))
                in_ch = width
        self.convs = convs
        self.head = Conv2d(STAGE_WIDTHS[-1], 1, 1, rng, dtype=dtype)
        self.executed_convs = 0

    def features(self, x: Tensor, taps: Sequence[int]) -> Dict[int, Tensor]:
        taps = sorted(set(taps))
        if not taps:
            raise ConfigError("no taps requested")
        if taps[0] < 1 or taps[-1] > TOTAL_CONVS:
            raise ConfigError(f"taps must lie in 1..{TOTAL_CONVS}, got {taps}")
        wanted = set(taps)
        out: Dict[int, Tensor] = {}
        self.executed_convs = 0
        for i, conv in enumerate(self.convs, start=1):
            x = T.relu(conv(x))
            self.executed_convs = i
            if i in wanted:
                out[i] = x
            if i == taps[-1]:
                break
            if i in POOL_AFTER:
                x = T.maxpool2d(x, 2)
        return out

    def logits(self, x: Tensor) -> Tensor:
        for i, conv in enumerate(self.convs, start=1):
            x = T.relu(conv(x))
            if i in POOL_AFTER:
                x = T.maxpool2d(x, 2)
        self.executed_convs = TOTAL_CONVS
        pooled = T.global_avg_pool(x)
        return T.reshape(self.head(pooled), (x.shape[0],))


def _crop(img: np.ndarray, rng, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ConfigError(f"image {h}x{w} smaller than proxy crop {size}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[top : top + size, left : left + size]


def _batch(pairs, rng, size: int, batch: int) -> Tuple[Tensor, np.ndarray]:
    imgs = []
    labels = []
    for _ in range(batch):
        rec = pairs[int(rng.integers(0, len(pairs)))]
        hazy = bool(rng.integers(0, 2))
        img = _crop(rec["hazy"] if hazy else rec["clean"], rng, size)
        imgs.append(np.transpose(img, (2, 0, 1)))
        labels.append(1.0 if hazy else 0.0)
    x = Tensor(np.stack(imgs).astype(np.float32))
    return x, np.asarray(labels, dtype=np.float32)


def train_proxy(pairs: List[dict], seed: int = 0, steps: int = 220,
                batch: int = 8, crop: int = 32, lr: float = 2e-3,
                holdout_fraction: float = 0.25) -> Tuple[PerceptualExtractor, dict]:
    """Fit the classifier on clean/hazy pairs; returns (frozen model, report).

    The holdout split is by image pair, so validation crops never come from a
    training image.  Accuracy is measured on one center crop per held-out
    image and side (hazy and clean).
    """
    if len(pairs) < 4:
        raise ConfigError(f"need at least 4 pairs to split, got {len(pairs)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    n_hold = max(1, int(len(pairs) * holdout_fraction))
    hold = [pairs[i] for i in order[:n_hold]]
    train = [pairs[i] for i in order[n_hold:]]

    model = PerceptualExtractor(seed=seed)
    opt = Adam(dict(model.named_parameters()))
    losses = []
    for step in range(steps):
        srng = np.random.default_rng([seed, 1, step])
        x, labels = _batch(train, srng, crop, batch)
        model.zero_grad()
        loss = T.logistic_loss(model.logits(x), labels)
        loss.backward()
        opt.step(lr)
        losses.append(float(loss.data))

    correct = 0
    total = 0
    with T.no_grad():
        for rec in hold:
            for key, label in (("hazy", 1.0), ("clean", 0.0)):
                img = rec[key]
                h, w = img.shape[:2]
                top, left = (h - crop) // 2, (w - crop) // 2
                patch = img[top : top + crop, left : left + crop]
                x = Tensor(np.transpose(patch, (2, 0, 1))[None].astype(np.float32))
                pred = 1.0 if float(model.logits(x).data[0]) > 0.0 else 0.0
                correct += int(pred == label)
                total += 1
    accuracy = correct / total
    model.freeze()
    report = {
        "steps": steps,
        "train_pairs": len(train),
        "holdout_pairs": len(hold),
        "final_loss": losses[-1],
        "holdout_accuracy": accuracy,
    }
    return model, report


def save_proxy(path, model: PerceptualExtractor):
    save_checkpoint(path, model, step=0)


def load_proxy(path) -> PerceptualExtractor:
    model = PerceptualExtractor(seed=0)
    load_checkpoint(path, model)
    model.freeze()
    return model
