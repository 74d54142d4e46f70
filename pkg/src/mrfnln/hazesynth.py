"""Synthetic haze: the atmospheric scattering model and dataset generation.

A hazy observation I is built from a clean image J, a scalar transmission map
t and a global airlight A:

    I(x) = J(x) * t(x) + A * (1 - t(x)),      t(x) = exp(-beta * d(x))

so every hazy pixel is a convex combination of the clean pixel and the
airlight.  Depth fields d are smooth random surfaces in [0.5, 5.0]; beta is
the scattering coefficient.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, ManifestError
from .imageio import load_image, save_image

DEPTH_RANGE = (0.5, 5.0)
AIRLIGHT_RANGE = (0.7, 1.0)
BETA_RANGE = (0.6, 1.8)


@dataclass(frozen=True)
class HazeParams:
    airlight: tuple  # (r, g, b), each in [0, 1]
    beta: float
    depth_seed: int = 0

    def __post_init__(self):
        if len(self.airlight) != 3:
            raise ConfigError(f"airlight needs 3 channels, got {self.airlight}")
        if any(not (0.0 <= a <= 1.0) for a in self.airlight):
            raise ConfigError(f"airlight out of [0,1]: {self.airlight}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")


def gen_depth_field(h: int, w: int, seed: int, smoothness: float = 8.0) -> np.ndarray:
    """Smooth random depth surface.

    Filtered white noise, rescaled into DEPTH_RANGE, then flattened toward its
    mean until the largest neighbour step is at most span/smoothness.  As
    smoothness grows the bound tightens to zero and the field approaches a
    constant (at the cost of using less of the depth range).
    """
    if h < 1 or w < 1:
        raise ConfigError(f"depth field needs positive dims, got {h}x{w}")
    if smoothness <= 0:
        raise ConfigError(f"smoothness must be positive, got {smoothness}")
    rng = np.random.default_rng(seed)
    field = gaussian_filter(rng.standard_normal((h, w)), sigma=smoothness / 2.0,
                            mode="reflect")
    lo, hi = DEPTH_RANGE
    fmin, fmax = field.min(), field.max()
    if fmax - fmin < 1e-12:
        return np.full((h, w), (lo + hi) / 2.0)
    field = lo + (hi - lo) * (field - fmin) / (fmax - fmin)

    bound = (hi - lo) / smoothness
    steps = [np.abs(np.diff(field, axis=0)), np.abs(np.diff(field, axis=1))]
    largest = max((s.max() for s in steps if s.size), default=0.0)
    if largest > bound:
        mean = field.mean()
        field = mean + (field - mean) * (bound / largest)
    return field


def transmission(depth: np.ndarray, beta: float) -> np.ndarray:
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    return np.exp(-beta * depth)


def synthesize_hazy(clean: np.ndarray, depth: np.ndarray,
                    params: HazeParams) -> np.ndarray:
    """Apply the scattering model; output stays inside [0, 1] by construction."""
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 3 or clean.shape[2] != 3:
        raise ConfigError(f"clean image must be [H,W,3], got {clean.shape}")
    if depth.shape != clean.shape[:2]:
        raise ConfigError(
            f"depth {depth.shape} does not match image {clean.shape[:2]}"
        )
    if clean.min() < 0.0 or clean.max() > 1.0:
        raise ConfigError("clean image values must lie in [0, 1]")
    t = transmission(depth, params.beta)[..., None]
    airlight = np.asarray(params.airlight, dtype=np.float64)
    return clean * t + airlight * (1.0 - t)


def gen_clean_image(h: int, w: int, seed: int) -> np.ndarray:
    """Synthetic clean scene: smooth color washes plus hard-edged shapes."""
    rng = np.random.default_rng(seed)
    base = gaussian_filter(rng.random((h, w, 3)), sigma=(max(h, w) / 6.0,) * 2 + (0,),
                           mode="reflect")
    lo, hi = base.min(), base.max()
    img = 0.15 + 0.7 * (base - lo) / max(hi - lo, 1e-9)
    for _ in range(6):
        color = rng.uniform(0.05, 0.95, size=3)
        ch = rng.integers(h // 8 + 1, max(h // 2, h // 8 + 2))
        cw = rng.integers(w // 8 + 1, max(w // 2, w // 8 + 2))
        top = rng.integers(0, max(h - ch, 1))
        left = rng.integers(0, max(w - cw, 1))
        img[top : top + ch, left : left + cw] = color
    return img.clip(0.0, 1.0).astype(np.float64)


IMAGE_EXTENSIONS = (".png", ".ppm")


def _list_clean_sources(clean_dir) -> List[str]:
    try:
        names = sorted(os.listdir(clean_dir))
    except (FileNotFoundError, NotADirectoryError):
        raise ConfigError(f"clean image directory not readable: {clean_dir}")
    files = [os.path.join(clean_dir, n) for n in names
             if n.lower().endswith(IMAGE_EXTENSIONS)]
    if not files:
        raise ConfigError(f"no .png/.ppm images found in {clean_dir}")
    return files


def make_dataset(out_dir, count: Optional[int] = None, size: int = 64,
                 seed: int = 0, image_format: str = "png", clean_dir=None,
                 per_clean: int = 1, channel_independent: bool = False,
                 float_sidecar: bool = False, beta_range: tuple = BETA_RANGE,
                 airlight_range: tuple = AIRLIGHT_RANGE) -> str:
    """Write clean/hazy pairs plus a JSONL manifest; returns the manifest path.

    Clean sources come either from `clean_dir` (every .png/.ppm in it) or,
    when that is None, from the procedural scene generator (`count` images of
    `size` x `size`).  Each source gets `per_clean` hazy variants.  Airlight
    is drawn once per pair and shared across channels unless
    `channel_independent` is set.  Images land on disk at 8 bits; with
    `float_sidecar` the exact f32 arrays are saved alongside as .npy and
    loaders prefer them.  The default `beta_range` produces dense haze at
    the deep end of the depth scale; pass a lower range for milder sets.
    """
    if (clean_dir is None) == (count is None):
        raise ConfigError("pass exactly one of count= or clean_dir=")
    if count is not None and count < 1:
        raise ConfigError(f"dataset needs at least one source, got count={count}")
    if per_clean < 1:
        raise ConfigError(f"per_clean must be >= 1, got {per_clean}")
    if image_format not in ("png", "ppm"):
        raise ConfigError(f"image_format must be png or ppm, got {image_format!r}")
    if not (0 <= beta_range[0] <= beta_range[1]):
        raise ConfigError(f"invalid beta_range {beta_range}")
    if not (0 <= airlight_range[0] <= airlight_range[1] <= 1):
        raise ConfigError(f"invalid airlight_range {airlight_range}")
    os.makedirs(out_dir, exist_ok=True)

    if clean_dir is not None:
        sources = [load_image(p) for p in _list_clean_sources(clean_dir)]
    else:
        sources = [
            gen_clean_image(
                size, size,
                seed=int(np.random.default_rng([seed, 3, i]).integers(2**31)))
            for i in range(count)
        ]

    def _store(stem: str, img: np.ndarray, rec: dict, key: str):
        name = f"{stem}.{image_format}"
        save_image(os.path.join(out_dir, name), img)
        rec[key] = name
        if float_sidecar:
            np.save(os.path.join(out_dir, f"{stem}.npy"),
                    img.astype(np.float32))
            rec[key.replace("_path", "_f32")] = f"{stem}.npy"

    lines = []
    pair_idx = 0
    for s_idx, clean in enumerate(sources):
        clean_rec: dict = {}
        _store(f"clean_{s_idx:04d}", clean, clean_rec, "clean_path")
        for _ in range(per_clean):
            # One rng per pair keyed by its global index, so regeneration is
            # byte-identical and pairs are independent of loop history.
            rng = np.random.default_rng([seed, pair_idx])
            depth_seed = int(rng.integers(2**31))
            depth = gen_depth_field(*clean.shape[:2], seed=depth_seed)
            if channel_independent:
                a = rng.uniform(*airlight_range, size=3)
            else:
                a = np.repeat(rng.uniform(*airlight_range), 3)
            params = HazeParams(
                airlight=tuple(float(v) for v in a.round(4)),
                beta=round(float(rng.uniform(*beta_range)), 4),
                depth_seed=depth_seed,
            )
            hazy = synthesize_hazy(clean, depth, params)
            rec = {"id": pair_idx}
            rec.update(clean_rec)
            _store(f"hazy_{pair_idx:04d}", hazy, rec, "hazy_path")
            rec.update({
                "A": list(params.airlight),
                "beta": params.beta,
                "depth_seed": params.depth_seed,
            })
            lines.append(rec)
            pair_idx += 1

    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest_path, "w") as fh:
        for line in lines:
            fh.write(json.dumps(line) + "\n")
    return manifest_path


REQUIRED_FIELDS = ("id", "clean_path", "hazy_path", "A", "beta", "depth_seed")


def load_manifest(path) -> List[dict]:
    """Parse and validate a JSONL manifest; paths are kept relative to it."""
    root = os.path.dirname(os.path.abspath(path))
    records = []
    try:
        fh = open(path)
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}")
    with fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}:{ln}: not valid JSON ({e})")
            missing = [f for f in REQUIRED_FIELDS if f not in rec]
            if missing:
                raise ManifestError(f"{path}:{ln}: missing fields {missing}")
            for key in ("clean_path", "hazy_path", "clean_f32", "hazy_f32"):
                if key not in rec:
                    continue
                full = os.path.join(root, rec[key])
                if not os.path.exists(full):
                    raise ManifestError(f"{path}:{ln}: {key} {full} does not exist")
                rec[key] = full
            records.append(rec)
    if not records:
        raise ManifestError(f"{path}: manifest is empty")
    return records


def _load_side(rec: dict, role: str) -> np.ndarray:
    if f"{role}_f32" in rec:  # exact sidecar beats the 8-bit image
        return np.load(rec[f"{role}_f32"]).astype(np.float64)
    return load_image(rec[f"{role}_path"])


def load_pairs(manifest_path) -> List[dict]:
    """Load every clean/hazy pair referenced by the manifest into memory."""
    out = []
    for rec in load_manifest(manifest_path):
        out.append({
            "id": rec["id"],
            "clean": _load_side(rec, "clean"),
            "hazy": _load_side(rec, "hazy"),
            "beta": rec["beta"],
        })
    return out
