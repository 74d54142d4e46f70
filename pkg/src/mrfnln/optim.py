"""Adam with bias correction and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from typing import Dict

import numpy as np

from .errors import ConfigError
from .tensor import Tensor


class Adam:
    def __init__(self, named_params: Dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(named_params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = p.data - (p.data.dtype.type(lr)) * update.astype(p.data.dtype)

    def state_entries(self) -> Dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.float32)}
        for k in self.params:
            out[f"m.{k}"] = self.m[k]
            out[f"v.{k}"] = self.v[k]
        return out

    def load_state_entries(self, entries: Dict[str, np.ndarray]):
        if "t" not in entries:
            raise ConfigError("optimizer state missing step counter")
        self.t = int(entries["t"][0])
        for k, p in self.params.items():
            for store, key in ((self.m, f"m.{k}"), (self.v, f"v.{k}")):
                if key not in entries:
                    raise ConfigError(f"optimizer state missing {key}")
                arr = entries[key]
                if arr.shape != p.data.shape:
                    raise ConfigError(
                        f"optimizer state {key} has shape {arr.shape}, "
                        f"parameter is {p.data.shape}"
                    )
                store[k] = arr.astype(p.data.dtype)


def cosine_lr(step: int, total_steps: int, lr_init: float, lr_final: float) -> float:
    """Half-cosine decay from lr_init at step 0 to lr_final at total_steps."""
    if total_steps < 1:
        raise ConfigError(f"total_steps must be >= 1, got {total_steps}")
    frac = min(max(step / total_steps, 0.0), 1.0)
    return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + math.cos(math.pi * frac))
