"""Image file I/O: PNG via Pillow, binary PPM (P6) parsed by hand.

All in-memory images are float32 arrays shaped [H, W, 3] with values in
[0, 1]; files store 8-bit channels.  The PPM parser reports the byte offset
of whatever it choked on.
"""

from __future__ import annotations

import os
from typing import Tuple

import numpy as np
from PIL import Image

from .errors import ImageFormatError


def to_unit_float(arr8: np.ndarray) -> np.ndarray:
    return (arr8.astype(np.float32) / 255.0).clip(0.0, 1.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_png(path, img: np.ndarray):
    Image.fromarray(to_uint8(_check_hwc(img)), mode="RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return to_unit_float(np.asarray(im.convert("RGB")))


def write_ppm(path, img: np.ndarray):
    arr = to_uint8(_check_hwc(img))
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def skip_separators():
        nonlocal pos
        while pos < len(blob):
            c = blob[pos : pos + 1]
            if c.isspace():
                pos += 1
            elif c == b"#":
                while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                return

    def read_token(what: str) -> bytes:
        nonlocal pos
        skip_separators()
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: expected {what} at byte {start}")
        return blob[start:pos]

    magic = read_token("magic")
    if magic != b"P6":
        raise ImageFormatError(f"{path}: magic {magic!r} at byte 0, wanted b'P6'")

    def read_int(what: str) -> int:
        start = pos
        tok = read_token(what)
        if not tok.isdigit():
            raise ImageFormatError(f"{path}: bad {what} {tok!r} near byte {start}")
        return int(tok)

    width = read_int("width")
    height = read_int("height")
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: degenerate size {width}x{height}")
    maxval_at = pos
    maxval = read_int("maxval")
    if maxval != 255:
        raise ImageFormatError(
            f"{path}: maxval {maxval} near byte {maxval_at}; only 255 is supported"
        )
    # Exactly one whitespace byte separates the header from the raster.
    if pos >= len(blob) or not blob[pos : pos + 1].isspace():
        raise ImageFormatError(f"{path}: missing raster separator at byte {pos}")
    pos += 1
    need = width * height * 3
    raster = blob[pos : pos + need]
    if len(raster) < need:
        raise ImageFormatError(
            f"{path}: raster truncated at byte {pos + len(raster)} "
            f"({need - len(raster)} bytes short)"
        )
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return to_unit_float(arr)


def save_image(path, img: np.ndarray):
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".png":
        write_png(path, img)
    elif ext == ".ppm":
        write_ppm(path, img)
    else:
        raise ImageFormatError(f"unsupported image extension {ext!r} for {path}")


def load_image(path) -> np.ndarray:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".png":
        return read_png(path)
    if ext == ".ppm":
        return read_ppm(path)
    raise ImageFormatError(f"unsupported image extension {ext!r} for {path}")


def _check_hwc(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageFormatError(f"expected [H,W,3] image, got shape {img.shape}")
    return img
