"""Minimal PPM (P6) and PFM readers/writers plus sRGB transfer helpers.

Arrays are ``(height, width, channels)`` with row 0 at the top. PFM stores
rows bottom-up on disk; the flip happens here so callers never see it.
"""

import re

import numpy as np

from .errors import FormatError

_HEADER_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def srgb_encode(linear):
    """Linear [0, 1] floats to 8-bit sRGB codes (values outside are clipped)."""
    x = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    s = np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)
    return np.round(s * 255).astype(np.uint8)


def srgb_decode(codes):
    s = np.asarray(codes, dtype=np.float64) / 255
    return np.where(s <= 0.04045, s / 12.92, np.power((s + 0.055) / 1.055, 2.4))


def _tokens(data, count):
    out, pos = [], 0
    for _ in range(count):
        mt = _HEADER_TOKEN.match(data, pos)
        if mt is None:
            raise FormatError("truncated image header")
        out.append(mt.group(1))
        pos = mt.end()
    # exactly one whitespace byte separates the header from the raster
    return out, pos + 1


def write_ppm(path, codes):
    codes = np.asarray(codes)
    if codes.dtype != np.uint8:
        raise TypeError("PPM pixels must be uint8")
    if codes.ndim == 2:
        codes = codes[..., None]
    if codes.shape[2] == 1:
        codes = np.repeat(codes, 3, axis=2)
    h, w, _ = codes.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(codes).tobytes())


def read_ppm(path):
    with open(path, "rb") as f:
        data = f.read()
    return parse_ppm(data)


def parse_ppm(data):
    (magic, w, h, maxval), start = _tokens(data, 4)
    if magic != b"P6":
        raise FormatError(f"not a binary PPM (magic {magic!r})")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise FormatError("only maxval 255 PPM files are supported")
    raster = data[start:start + w * h * 3]
    if len(raster) != w * h * 3:
        raise FormatError("truncated PPM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3).copy()


def write_pfm(path, pixels):
    pixels = np.asarray(pixels, dtype=np.float32)
    if pixels.ndim == 2:
        pixels = pixels[..., None]
    h, w, c = pixels.shape
    if c not in (1, 3):
        raise ValueError("PFM supports 1 or 3 channels")
    magic = b"PF" if c == 3 else b"Pf"
    with open(path, "wb") as f:
        f.write(b"%s\n%d %d\n-1.0\n" % (magic, w, h))
        f.write(np.ascontiguousarray(pixels[::-1]).astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        data = f.read()
    return parse_pfm(data)


def parse_pfm(data):
    (magic, w, h, scale), start = _tokens(data, 4)
    if magic not in (b"PF", b"Pf"):
        raise FormatError(f"not a PFM file (magic {magic!r})")
    w, h, scale = int(w), int(h), float(scale)
    c = 3 if magic == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    n = w * h * c * 4
    raster = data[start:start + n]
    if len(raster) != n:
        raise FormatError("truncated PFM raster")
    return np.frombuffer(raster, dtype=dtype).astype(np.float32).reshape(h, w, c)[::-1].copy()


def read_image_linear(path):
    """Load a PPM or PFM as linear float64 RGB, decoding sRGB for PPM."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] in (b"PF", b"Pf"):
        px = parse_pfm(data).astype(np.float64)
    elif data[:2] == b"P6":
        px = srgb_decode(parse_ppm(data))
    else:
        raise FormatError(f"{path}: unrecognised image format")
    if px.shape[2] == 1:
        px = np.repeat(px, 3, axis=2)
    return px
