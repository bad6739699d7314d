"""Radiance atlas: a ``w x h`` matrix of ``n x n`` hemispherical buckets.

Texels live in one dense ``(h*n, w*n, channels)`` array, row 0 at the top.
Bucket ``(bx, by)`` owns the block ``[by*n:(by+1)*n, bx*n:(bx+1)*n]`` and a
centred bucket coordinate ``c`` in ``[-1, 1]`` addresses local texel
``floor((c + 1) * n / 2)``; texel ``k`` is centred at ``(k + 0.5) * 2 / n - 1``.

The RADX container (little-endian)::

    "RADX" | version u32 = 1 | w u32 | h u32 | n u32 | channels u32 |
    texel_kind u32 | payload_len u64 | payload

with texel_kind 0 = u8, 1 = f32, 2 = 1-bit mask (rows padded to whole bytes,
most significant bit first). A payload length of 0 followed by a codec section
marks a compressed atlas, see :mod:`radtex.codec`.
"""

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import imageio
from .errors import (
    ConfigurationError,
    DomainError,
    FormatError,
    SizeMismatchError,
    TruncatedPayloadError,
    BadMagicError,
    VersionMismatchError,
)
from .mapping import incidence_to_bucket_coord

MAGIC = b"RADX"
VERSION = 1
_HEADER = struct.Struct("<4s6IQ")

NEAREST_BUCKET = "nearest-bucket"
BUCKET_BLEND = "bucket-blend"


class TexelKind(IntEnum):
    U8 = 0
    F32 = 1
    MASK = 2

    @property
    def dtype(self):
        return np.dtype(np.float32) if self is TexelKind.F32 else np.dtype(np.uint8)

    @classmethod
    def parse(cls, name):
        table = {"u8": cls.U8, "f32": cls.F32, "mask": cls.MASK}
        try:
            return table[name]
        except KeyError:
            raise ConfigurationError(f"unknown texel kind {name!r}") from None


@dataclass(frozen=True)
class AtlasHeader:
    width: int
    height: int
    bucket_res: int
    channels: int = 3
    texel_kind: TexelKind = TexelKind.F32

    def __post_init__(self):
        for name in ("width", "height"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.bucket_res < 2:
            raise ConfigurationError("bucket_res must be >= 2")
        if self.channels not in (1, 3):
            raise ConfigurationError("channels must be 1 or 3")
        object.__setattr__(self, "texel_kind", TexelKind(self.texel_kind))
        if self.texel_kind is TexelKind.MASK and self.channels != 1:
            raise ConfigurationError("mask atlases are single-channel")

    @property
    def shape(self):
        n = self.bucket_res
        return (self.height * n, self.width * n, self.channels)

    @property
    def size(self):
        h, w, c = self.shape
        return h * w * c

    def payload_size(self):
        h, w, c = self.shape
        if self.texel_kind is TexelKind.MASK:
            return h * ((w + 7) // 8)
        return h * w * c * self.texel_kind.dtype.itemsize


class RadianceAtlas:
    """Immutable bucket matrix. ``texels`` is a read-only ``(h*n, w*n, c)`` array."""

    def __init__(self, header, texels):
        texels = np.asarray(texels)
        if texels.shape != header.shape:
            raise ConfigurationError(f"texel array shape {texels.shape} != {header.shape}")
        if texels.dtype != header.texel_kind.dtype:
            texels = texels.astype(header.texel_kind.dtype)
        if header.texel_kind is TexelKind.MASK and np.any(texels > 1):
            raise ConfigurationError("mask atlases may only contain 0 and 1")
        texels = np.array(texels, copy=True)
        texels.flags.writeable = False
        self.header = header
        self.texels = texels

    @classmethod
    def from_array(cls, texels, bucket_res, texel_kind=None):
        texels = np.asarray(texels)
        if texels.ndim == 2:
            texels = texels[..., None]
        hn, wn, c = texels.shape
        if hn % bucket_res or wn % bucket_res:
            raise ConfigurationError("array size is not a whole number of buckets")
        if texel_kind is None:
            texel_kind = TexelKind.U8 if texels.dtype == np.uint8 else TexelKind.F32
        header = AtlasHeader(wn // bucket_res, hn // bucket_res, bucket_res, c, texel_kind)
        return cls(header, texels)

    def bucket(self, bx, by):
        n = self.header.bucket_res
        return self.texels[by * n:(by + 1) * n, bx * n:(bx + 1) * n]

    def linear(self):
        """Texels as float64 linear radiance (u8 codes divided by 255)."""
        if self.header.texel_kind is TexelKind.U8:
            return self.texels.astype(np.float64) / 255
        return self.texels.astype(np.float64)

    def __eq__(self, other):
        if not isinstance(other, RadianceAtlas):
            return NotImplemented
        return self.header == other.header and self.texels.tobytes() == other.texels.tobytes()

    def __repr__(self):
        h = self.header
        return (
            f"RadianceAtlas({h.width}x{h.height} buckets, n={h.bucket_res}, "
            f"channels={h.channels}, {h.texel_kind.name})"
        )


def bucket_of_uv(uv, header):
    """Bucket index ``(bx, by)`` for texture coordinates; ``uv = 1`` lands in the last bucket."""
    uv = np.asarray(uv, dtype=np.float64)
    if np.any(~np.isfinite(uv)) or np.any(uv < 0) or np.any(uv > 1):
        raise DomainError("uv outside [0, 1]")
    bx = np.minimum(np.floor(uv[..., 0] * header.width), header.width - 1).astype(np.int64)
    by = np.minimum(np.floor(uv[..., 1] * header.height), header.height - 1).astype(np.int64)
    return np.stack([bx, by], axis=-1)


def global_texel(b, local, header):
    """Flat index of the first channel of a bucket-local texel."""
    b = np.asarray(b, dtype=np.int64)
    local = np.asarray(local, dtype=np.int64)
    n, w = header.bucket_res, header.width
    if (
        np.any(b < 0) or np.any(b[..., 0] >= w) or np.any(b[..., 1] >= header.height)
        or np.any(local < 0) or np.any(local >= n)
    ):
        raise DomainError("bucket or local texel index out of range")
    gx = b[..., 0] * n + local[..., 0]
    gy = b[..., 1] * n + local[..., 1]
    return (gy * (w * n) + gx) * header.channels


def texel_of_global(flat, header):
    """Inverse of :func:`global_texel`: ``(bucket, local)`` index pairs."""
    n, w = header.bucket_res, header.width
    pix = np.asarray(flat, dtype=np.int64) // header.channels
    gy, gx = np.divmod(pix, w * n)
    b = np.stack([gx // n, gy // n], axis=-1)
    local = np.stack([gx % n, gy % n], axis=-1)
    return b, local


def local_texel(coord, bucket_res):
    """Nearest local texel index for centred bucket coordinates."""
    coord = np.asarray(coord, dtype=np.float64)
    k = np.floor((coord + 1) * bucket_res / 2)
    return np.clip(k, 0, bucket_res - 1).astype(np.int64)


def texel_center(local, bucket_res):
    return (np.asarray(local, dtype=np.float64) + 0.5) * 2 / bucket_res - 1


def sample_bucket(atlas, b, coord, texel_filter="bilinear"):
    """Sample one bucket at a centred coordinate; reads never leave bucket ``b``.

    Returns ``(..., channels)`` float64 linear radiance.
    """
    hdr = atlas.header
    n = hdr.bucket_res
    b = np.asarray(b, dtype=np.int64)
    coord = np.asarray(coord, dtype=np.float64)
    if np.any(b < 0) or np.any(b[..., 0] >= hdr.width) or np.any(b[..., 1] >= hdr.height):
        raise DomainError("bucket index out of range")
    b, coord = np.broadcast_arrays(b, coord)
    ox = b[..., 0] * n
    oy = b[..., 1] * n
    tex = atlas.texels
    scale = 1 / 255 if hdr.texel_kind is TexelKind.U8 else 1.0

    if texel_filter == "nearest":
        k = local_texel(coord, n)
        return tex[oy + k[..., 1], ox + k[..., 0]].astype(np.float64) * scale
    if texel_filter != "bilinear":
        raise ConfigurationError(f"unknown texel filter {texel_filter!r}")

    s = np.clip((coord + 1) * n / 2 - 0.5, 0, n - 1)
    # snap rounding noise so texel-centre coordinates hit the texel exactly
    r = np.round(s)
    s = np.where(np.abs(s - r) < 1e-9, r, s)
    k0 = np.floor(s).astype(np.int64)
    f = s - k0
    k1 = np.minimum(k0 + 1, n - 1)
    x0, x1 = ox + k0[..., 0], ox + k1[..., 0]
    y0, y1 = oy + k0[..., 1], oy + k1[..., 1]
    fx = f[..., 0:1]
    fy = f[..., 1:2]
    v00 = tex[y0, x0].astype(np.float64)
    v10 = tex[y0, x1].astype(np.float64)
    v01 = tex[y1, x0].astype(np.float64)
    v11 = tex[y1, x1].astype(np.float64)
    top = v00 * (1 - fx) + v10 * fx
    bottom = v01 * (1 - fx) + v11 * fx
    return (top * (1 - fy) + bottom * fy) * scale


def sample_plenoptic(atlas, uv, i, mode=NEAREST_BUCKET, texel_filter="bilinear"):
    """Radiance seen along tangent-space incidence ``i`` at surface coordinate ``uv``.

    ``mode`` is ``"nearest-bucket"`` (one bucket) or ``"bucket-blend"``
    (bilinear over the four closest bucket centres, each read at the same
    local coordinate).
    """
    hdr = atlas.header
    uv = np.asarray(uv, dtype=np.float64)
    coord = incidence_to_bucket_coord(np.asarray(i, dtype=np.float64), hdr.bucket_res)
    if mode == NEAREST_BUCKET:
        return sample_bucket(atlas, bucket_of_uv(uv, hdr), coord, texel_filter)
    if mode != BUCKET_BLEND:
        raise ConfigurationError(f"unknown sampling mode {mode!r}")

    bucket_of_uv(uv, hdr)  # domain check
    dims = np.array([hdr.width, hdr.height])
    s = uv * dims - 0.5
    b0 = np.floor(s).astype(np.int64)
    f = np.clip(s - b0, 0, 1)
    b0c = np.clip(b0, 0, dims - 1)
    b1c = np.clip(b0 + 1, 0, dims - 1)
    # outside the outer bucket centres, clamp to edge
    f = np.where(b0 < 0, 0.0, np.where(b0 + 1 > dims - 1, 0.0, f))
    fx, fy = f[..., 0:1], f[..., 1:2]

    def at(bx, by):
        return sample_bucket(atlas, np.stack([bx, by], axis=-1), coord, texel_filter)

    top = at(b0c[..., 0], b0c[..., 1]) * (1 - fx) + at(b1c[..., 0], b0c[..., 1]) * fx
    bottom = at(b0c[..., 0], b1c[..., 1]) * (1 - fx) + at(b1c[..., 0], b1c[..., 1]) * fx
    return top * (1 - fy) + bottom * fy


def _payload(atlas):
    hdr = atlas.header
    if hdr.texel_kind is TexelKind.MASK:
        return np.packbits(atlas.texels[..., 0], axis=1).tobytes()
    if hdr.texel_kind is TexelKind.F32:
        return atlas.texels.astype("<f4").tobytes()
    return atlas.texels.tobytes()


def pack_header(header, payload_len):
    return _HEADER.pack(
        MAGIC, VERSION, header.width, header.height, header.bucket_res,
        header.channels, int(header.texel_kind), payload_len,
    )


def serialize(atlas):
    payload = _payload(atlas)
    return pack_header(atlas.header, len(payload)) + payload


def unpack_header(data):
    """Parse the fixed RADX header. Returns ``(header, payload_len, offset)``."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("bad magic: not a RADX file")
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError("truncated RADX header")
    _, version, w, h, n, c, kind, length = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionMismatchError(f"unsupported RADX version {version}")
    try:
        header = AtlasHeader(w, h, n, c, TexelKind(kind))
    except (ConfigurationError, ValueError) as exc:
        raise FormatError(f"invalid RADX header: {exc}") from None
    return header, length, _HEADER.size


def texels_from_payload(header, payload):
    if header.texel_kind is TexelKind.MASK:
        hn, wn, _ = header.shape
        rows = np.frombuffer(payload, dtype=np.uint8).reshape(hn, -1)
        bits = np.unpackbits(rows, axis=1, count=wn)
        return bits[..., None]
    dtype = "<f4" if header.texel_kind is TexelKind.F32 else np.uint8
    return np.frombuffer(payload, dtype=dtype).reshape(header.shape)


def deserialize(data):
    data = bytes(data)
    header, length, off = unpack_header(data)
    rest = data[off:]
    if length == 0 and rest:
        from .codec import decode_section

        return decode_section(header, rest)
    expected = header.payload_size()
    if length != expected:
        raise SizeMismatchError(f"payload length {length} != {expected} implied by header")
    if len(rest) < length:
        raise TruncatedPayloadError(f"payload truncated: {len(rest)} of {length} bytes")
    if len(rest) > length:
        raise SizeMismatchError("trailing bytes after payload")
    return RadianceAtlas(header, texels_from_payload(header, rest))


def save(atlas, path):
    with open(path, "wb") as f:
        f.write(serialize(atlas))


def load(path):
    with open(path, "rb") as f:
        return deserialize(f.read())


def write_texels(texels, kind, path, fmt=None):
    """Write a texel block as an image: PFM for floats, sRGB PPM for 8-bit and masks."""
    kind = TexelKind(kind)
    if fmt is None:
        fmt = "pfm" if kind is TexelKind.F32 else "ppm"
    if fmt == "pfm":
        scale = 1 / 255 if kind is TexelKind.U8 else 1.0
        imageio.write_pfm(path, texels.astype(np.float64) * scale)
    elif kind is TexelKind.MASK:
        imageio.write_ppm(path, (texels * 255).astype(np.uint8))
    elif kind is TexelKind.U8:
        imageio.write_ppm(path, imageio.srgb_encode(texels / 255))
    else:
        imageio.write_ppm(path, imageio.srgb_encode(texels))


def export_mosaic(atlas, path, fmt=None):
    """Write the whole ``(h*n) x (w*n)`` texel grid, row 0 at the top."""
    write_texels(atlas.texels, atlas.header.texel_kind, path, fmt)


def export_bucket(atlas, bx, by, path, fmt=None):
    h = atlas.header
    if not (0 <= bx < h.width and 0 <= by < h.height):
        raise DomainError(f"bucket ({bx}, {by}) outside {h.width}x{h.height} grid")
    write_texels(atlas.bucket(bx, by), h.texel_kind, path, fmt)
