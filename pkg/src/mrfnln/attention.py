"""Non-local attention over bottleneck feature maps, with token sampling.

Queries always come from the full-resolution map (N = h*w tokens).  Keys and
values may come from a different (fused) map, and can be shrunk to S tokens
by one of two samplers applied after the key/value 1x1 convs:

  spds   max pools with stride = kernel in {2, 4}, flattened and concatenated;
         S = N/4 + N/16 = 0.3125 * N, so the two attention products cost
         exactly 0.3125 of the unsampled pair
  spp    adaptive max pools to fixed grids {1, 3, 6, 8}; S = 110 regardless
         of input size

The pairwise score is a plain dot product over the embedding dim (no 1/sqrt(d)
temperature), softmax-normalized over key tokens.  ``attention_oracle`` is an
independent loop-based reference used only by tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeMismatchError
from .nn import Conv2d, Module
from .tensor import Tensor

SAMPLER_VARIANTS = ("none", "spds", "spp")


@dataclass(frozen=True)
class SamplerSpec:
    variant: str = "spds"
    factors: tuple = (2, 4)
    grid_sizes: tuple = (1, 3, 6, 8)

    def __post_init__(self):
        if self.variant not in SAMPLER_VARIANTS:
            raise ConfigError(
                f"unknown sampler {self.variant!r}; pick from {SAMPLER_VARIANTS}"
            )
        if self.variant == "spds" and any(f < 1 for f in self.factors):
            raise ConfigError(f"pool factors must be >= 1, got {self.factors}")
        if self.variant == "spp" and any(s < 1 for s in self.grid_sizes):
            raise ConfigError(f"grid sizes must be >= 1, got {self.grid_sizes}")

    def token_count(self, h: int, w: int) -> int:
        if self.variant == "none":
            return h * w
        if self.variant == "spds":
            return sum((h // f) * (w // f) for f in self.factors)
        return sum(s * s for s in self.grid_sizes)


@dataclass(frozen=True)
class AttentionDims:
    """Shape ledger for one attention application."""

    width: int
    embed: int
    n_tokens: int
    s_tokens: int

    @classmethod
    def of(cls, width: int, h: int, w: int, sampler: SamplerSpec) -> "AttentionDims":
        return cls(width=width, embed=width // 2, n_tokens=h * w,
                   s_tokens=sampler.token_count(h, w))

    @property
    def token_ratio(self) -> float:
        return self.s_tokens / self.n_tokens


def flatten_tokens(e: Tensor) -> Tensor:
    """[B,E,h,w] -> [B, h*w, E], token index row-major over (h, w)."""
    B, E, h, w = e.shape
    return T.transpose(T.reshape(e, (B, E, h * w)), (0, 2, 1))


def unflatten_tokens(t: Tensor, h: int, w: int) -> Tensor:
    """[B,N,E] -> [B,E,h,w], inverse of flatten_tokens."""
    B, N, E = t.shape
    if N != h * w:
        raise ShapeMismatchError(f"cannot fold {N} tokens into {h}x{w}")
    return T.reshape(T.transpose(t, (0, 2, 1)), (B, E, h, w))


def sample_tokens(e: Tensor, sampler: SamplerSpec) -> Tensor:
    """Apply the sampler to a key/value map and flatten to tokens."""
    if sampler.variant == "none":
        return flatten_tokens(e)
    if sampler.variant == "spds":
        _, _, h, w = e.shape
        for f in sampler.factors:
            if h % f or w % f:
                raise ShapeMismatchError(
                    f"pool factor {f} must divide key/value map dims {h}x{w}"
                )
        pieces = [flatten_tokens(T.maxpool2d(e, f)) for f in sampler.factors]
        return T.concat(pieces, axis=1)
    pieces = [flatten_tokens(T.adaptive_maxpool2d(e, s, s))
              for s in sampler.grid_sizes]
    return T.concat(pieces, axis=1)


def attention_core(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T) v over token axes; q [B,N,E], k/v [B,S,E] -> [B,N,E]."""
    scores = T.matmul(q, T.transpose(k, (0, 2, 1)))
    return T.matmul(T.softmax(scores, axis=-1), v)


class NonLocalAttention(Module):
    """q/k/v/out 1x1 convs plus residual; covers both self and cross usage.

    Called with one argument it attends over its own input (self attention);
    with two, keys and values come from the second map, which is how the
    network wires in the fused cross-level features.
    """

    def __init__(self, width: int, rng, sampler: Optional[SamplerSpec] = None,
                 dtype=np.float32):
        if width % 2:
            raise ConfigError(f"attention width must be even, got {width}")
        embed = width // 2
        self.to_query = Conv2d(width, embed, 1, rng, dtype=dtype)
        self.to_key = Conv2d(width, embed, 1, rng, dtype=dtype)
        self.to_value = Conv2d(width, embed, 1, rng, dtype=dtype)
        self.project = Conv2d(embed, width, 1, rng, dtype=dtype)
        self.sampler = sampler if sampler is not None else SamplerSpec("none")

    def __call__(self, query: Tensor, source: Optional[Tensor] = None) -> Tensor:
        if source is None:
            source = query
        if source.shape[1] != query.shape[1]:
            raise ShapeMismatchError(
                f"key/value source width {source.shape[1]} != query width {query.shape[1]}"
            )
        B, _, h, w = query.shape
        q = flatten_tokens(self.to_query(query))
        k = sample_tokens(self.to_key(source), self.sampler)
        v = sample_tokens(self.to_value(source), self.sampler)
        ctx = unflatten_tokens(attention_core(q, k, v), h, w)
        return T.add(query, self.project(ctx))


class FeatureFusion(Module):
    """1x1 conv over the channel concatenation of same-shape feature maps."""

    def __init__(self, width: int, count: int, rng, dtype=np.float32):
        if count < 1:
            raise ConfigError(f"fusion needs at least one input, got {count}")
        self.count = count
        self.mix = Conv2d(width * count, width, 1, rng, dtype=dtype)

    def __call__(self, feats: Sequence[Tensor]) -> Tensor:
        if len(feats) != self.count:
            raise ShapeMismatchError(
                f"fusion built for {self.count} inputs, got {len(feats)}"
            )
        if len(feats) == 1:
            return self.mix(feats[0])
        return self.mix(T.concat(list(feats), axis=1))


# -- independent reference ----------------------------------------------------


def _conv1x1_loops(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    B, C, h, wd = x.shape
    O = w.shape[0]
    out = np.zeros((B, O, h, wd), dtype=np.float64)
    for bi in range(B):
        for i in range(h):
            for j in range(wd):
                for o in range(O):
                    acc = 0.0
                    for c in range(C):
                        acc += w[o, c, 0, 0] * x[bi, c, i, j]
                    out[bi, o, i, j] = acc + b[o]
    return out


def _maxpool_loops(x: np.ndarray, k: int) -> np.ndarray:
    B, C, H, W = x.shape
    out = np.zeros((B, C, H // k, W // k), dtype=x.dtype)
    for i in range(H // k):
        for j in range(W // k):
            out[:, :, i, j] = x[:, :, i * k:(i + 1) * k, j * k:(j + 1) * k].max(
                axis=(2, 3))
    return out


def _adaptive_loops(x: np.ndarray, s: int) -> np.ndarray:
    B, C, H, W = x.shape
    out = np.zeros((B, C, s, s), dtype=x.dtype)
    for i in range(s):
        h0, h1 = (i * H) // s, int(np.ceil((i + 1) * H / s))
        for j in range(s):
            w0, w1 = (j * W) // s, int(np.ceil((j + 1) * W / s))
            out[:, :, i, j] = x[:, :, h0:h1, w0:w1].max(axis=(2, 3))
    return out


def _tokens_loops(e: np.ndarray) -> np.ndarray:
    B, E, h, w = e.shape
    t = np.zeros((B, h * w, E), dtype=e.dtype)
    for bi in range(B):
        for i in range(h):
            for j in range(w):
                t[bi, i * w + j, :] = e[bi, :, i, j]
    return t


def attention_oracle(query: np.ndarray, source: np.ndarray, weights: dict,
                     sampler: SamplerSpec) -> np.ndarray:
    """Loop-based reference for NonLocalAttention, float64 throughout.

    ``weights`` holds wq/bq, wk/bk, wv/bv, wo/bo numpy arrays in the layer
    layout ([out, in, 1, 1] and [out]).  Deliberately shares no code with the
    tensor ops: 1x1 convs, pooling, softmax and the pair sums are all explicit
    loops.
    """
    query = query.astype(np.float64)
    source = source.astype(np.float64)
    qmap = _conv1x1_loops(query, weights["wq"], weights["bq"])
    kmap = _conv1x1_loops(source, weights["wk"], weights["bk"])
    vmap = _conv1x1_loops(source, weights["wv"], weights["bv"])

    if sampler.variant == "none":
        ktok = _tokens_loops(kmap)
        vtok = _tokens_loops(vmap)
    elif sampler.variant == "spds":
        ktok = np.concatenate([_tokens_loops(_maxpool_loops(kmap, f))
                               for f in sampler.factors], axis=1)
        vtok = np.concatenate([_tokens_loops(_maxpool_loops(vmap, f))
                               for f in sampler.factors], axis=1)
    else:
        ktok = np.concatenate([_tokens_loops(_adaptive_loops(kmap, s))
                               for s in sampler.grid_sizes], axis=1)
        vtok = np.concatenate([_tokens_loops(_adaptive_loops(vmap, s))
                               for s in sampler.grid_sizes], axis=1)

    qtok = _tokens_loops(qmap)
    B, N, E = qtok.shape
    S = ktok.shape[1]
    ctx = np.zeros((B, N, E), dtype=np.float64)
    for bi in range(B):
        for n in range(N):
            scores = np.zeros(S)
            for m in range(S):
                acc = 0.0
                for e in range(E):
                    acc += qtok[bi, n, e] * ktok[bi, m, e]
                scores[m] = acc
            mx = scores.max()
            ex = np.exp(scores - mx)
            attn = ex / ex.sum()
            for e in range(E):
                acc = 0.0
                for m in range(S):
                    acc += attn[m] * vtok[bi, m, e]
                ctx[bi, n, e] = acc

    h, w = query.shape[2], query.shape[3]
    ctx_map = np.zeros((B, E, h, w), dtype=np.float64)
    for bi in range(B):
        for i in range(h):
            for j in range(w):
                ctx_map[bi, :, i, j] = ctx[bi, i * w + j, :]
    return query + _conv1x1_loops(ctx_map, weights["wo"], weights["bo"])
