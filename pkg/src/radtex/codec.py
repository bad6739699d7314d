"""Inter-bucket compression for radiance atlases.

Lossless (codec 1): each bucket is predicted from its left neighbour at the
same local texel (first column from the bucket above, bucket (0, 0) from
zero). Residuals are taken on the raw integer texel bits (float32 through its
uint32 pattern, modulo 2**32) and zig-zag mapped. The token stream writes each
non-zero residual as a varint and each run of zeros as ``0, run_length``.
Masks skip prediction and store alternating 0/1 run lengths, starting with 0.

Quantised (codec 2, float32 only): per bucket and channel the min and max
are stored as float32, then every texel as a ``bits``-wide level index.

Stream order is bucket-major (``by``, ``bx``), then ``ly``, ``lx``, channel.

Inside a RADX file a compressed atlas has payload length 0 and is followed by
``codec_id u32 | n_params u32 | params u32 * n | payload_len u64 | payload``.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .atlas import AtlasHeader, RadianceAtlas, TexelKind, pack_header, unpack_header
from .errors import ConfigurationError, FormatError, TruncatedPayloadError, UnknownCodecError

LOSSLESS = 1
QUANTIZED = 2


@dataclass(frozen=True)
class EncodedAtlas:
    header: AtlasHeader
    codec: int
    params: tuple
    payload: bytes

    @property
    def ratio(self):
        """Encoded payload size over raw payload size."""
        return len(self.payload) / self.header.payload_size()


# --- varints and zig-zag -------------------------------------------------


def zigzag(s):
    s = np.asarray(s, dtype=np.int64)
    return ((s << 1) ^ (s >> 63)).astype(np.uint64)


def unzigzag(z):
    z = np.asarray(z, dtype=np.uint64)
    return (z >> np.uint64(1)).astype(np.int64) ^ -(z & np.uint64(1)).astype(np.int64)


def varint_encode(values):
    v = np.asarray(values, dtype=np.uint64)
    if v.size == 0:
        return b""
    lens = np.ones(v.shape, dtype=np.int64)
    rest = v >> np.uint64(7)
    while np.any(rest):
        lens += rest > 0
        rest = rest >> np.uint64(7)
    starts = np.cumsum(lens) - lens
    out = np.empty(int(lens.sum()), dtype=np.uint8)
    for k in range(int(lens.max())):
        sel = lens > k
        byte = (v[sel] >> np.uint64(7 * k)) & np.uint64(0x7F)
        more = (lens[sel] > k + 1).astype(np.uint64) << np.uint64(7)
        out[starts[sel] + k] = (byte | more).astype(np.uint8)
    return out.tobytes()


def varint_decode(data):
    b = np.frombuffer(data, dtype=np.uint8)
    if b.size == 0:
        return np.zeros(0, dtype=np.uint64)
    ends = (b & 0x80) == 0
    if not ends[-1]:
        raise TruncatedPayloadError("varint stream ends mid-value")
    token = np.cumsum(ends) - ends
    first = np.flatnonzero(np.r_[True, ends[:-1]])
    pos = np.arange(b.size) - first[token]
    if pos.max() > 9:
        raise FormatError("varint longer than 64 bits")
    parts = (b & 0x7F).astype(np.uint64) << (7 * pos).astype(np.uint64)
    return np.bitwise_or.reduceat(parts, first)


def _zero_run_tokens(z):
    """Replace each run of zeros in ``z`` by the pair ``(0, run_length)``."""
    is0 = z == 0
    if not np.any(is0):
        return z
    edges = np.diff(np.r_[0, is0.astype(np.int8), 0])
    run_start = np.flatnonzero(edges == 1)
    run_len = np.flatnonzero(edges == -1) - run_start
    start_mask = np.zeros(z.size, dtype=bool)
    start_mask[run_start] = True
    keep = np.flatnonzero(~is0 | start_mask)
    counts = np.where(is0[keep], 2, 1)
    offs = np.cumsum(counts) - counts
    out = np.empty(int(counts.sum()), dtype=np.uint64)
    out[offs] = np.where(is0[keep], 0, z[keep])
    out[offs[is0[keep]] + 1] = run_len
    return out


def _expand_zero_runs(tokens, expected):
    esc = tokens == 0
    length_pos = np.flatnonzero(esc) + 1
    if length_pos.size and length_pos[-1] >= tokens.size:
        raise TruncatedPayloadError("zero run without a length")
    is_len = np.zeros(tokens.size, dtype=bool)
    is_len[length_pos] = True
    items = np.flatnonzero(~is_len)
    counts = np.where(esc[items], tokens[np.minimum(items + 1, tokens.size - 1)], 1).astype(np.int64)
    if counts.sum() != expected:
        raise FormatError(f"decoded {counts.sum()} values, expected {expected}")
    return np.repeat(np.where(esc[items], 0, tokens[items]), counts)


# --- bucket ordering ------------------------------------------------------


def _to_buckets(texels, header):
    n, w, h = header.bucket_res, header.width, header.height
    return texels.reshape(h, n, w, n, header.channels).transpose(0, 2, 1, 3, 4)


def _from_buckets(buckets, header):
    return buckets.transpose(0, 2, 1, 3, 4).reshape(header.shape)


def _modulus(kind):
    return 1 << 32 if kind is TexelKind.F32 else 1 << 8


def _integer_texels(atlas):
    if atlas.header.texel_kind is TexelKind.F32:
        return atlas.texels.view(np.uint32).astype(np.int64)
    return atlas.texels.astype(np.int64)


def predictions(buckets):
    """Neighbour-bucket predictor over a ``(h, w, n, n, c)`` bucket array."""
    pred = np.zeros_like(buckets)
    pred[:, 1:] = buckets[:, :-1]
    pred[1:, 0] = buckets[:-1, 0]
    return pred


def residuals(atlas):
    """Signed prediction residuals in stream order, wrapped to the texel word size."""
    hdr = atlas.header
    m = _modulus(hdr.texel_kind)
    b = _to_buckets(_integer_texels(atlas), hdr)
    r = (b - predictions(b)) % m
    r = np.where(r >= m // 2, r - m, r)
    return r.reshape(-1)


def encode_lossless(atlas):
    hdr = atlas.header
    if hdr.texel_kind is TexelKind.MASK:
        bits = atlas.texels.reshape(-1)
        change = np.flatnonzero(np.diff(bits.astype(np.int8)) != 0) + 1
        bounds = np.r_[0, change, bits.size]
        runs = np.diff(bounds)
        if bits.size and bits[0] == 1:
            runs = np.r_[0, runs]
        return EncodedAtlas(hdr, LOSSLESS, (), varint_encode(runs))
    tokens = _zero_run_tokens(zigzag(residuals(atlas)))
    return EncodedAtlas(hdr, LOSSLESS, (), varint_encode(tokens))


def _decode_lossless(enc):
    hdr = enc.header
    if hdr.texel_kind is TexelKind.MASK:
        runs = varint_decode(enc.payload).astype(np.int64)
        if runs.sum() != hdr.size:
            raise FormatError("mask run lengths do not cover the atlas")
        vals = (np.arange(runs.size) % 2).astype(np.uint8)
        return RadianceAtlas(hdr, np.repeat(vals, runs).reshape(hdr.shape))
    m = _modulus(hdr.texel_kind)
    res = unzigzag(_expand_zero_runs(varint_decode(enc.payload), hdr.size))
    n, c = hdr.bucket_res, hdr.channels
    r = res.reshape(hdr.height, hdr.width, n, n, c)
    # undo the predictor: first column accumulates downward, rows accumulate rightward
    col0 = np.cumsum(r[:, 0], axis=0)
    rows = np.cumsum(r, axis=1)
    rows = rows - r[:, :1] + col0[:, None]
    vals = rows % m
    texels = _from_buckets(vals, hdr)
    if hdr.texel_kind is TexelKind.F32:
        texels = texels.astype(np.uint32).view(np.float32)
    else:
        texels = texels.astype(np.uint8)
    return RadianceAtlas(hdr, texels)


def bucket_ranges(atlas):
    """Per bucket and channel ``(min, max)`` as float32 arrays of shape ``(h, w, c)``."""
    b = _to_buckets(atlas.texels, atlas.header)
    return b.min(axis=(2, 3)), b.max(axis=(2, 3))


def encode_quantized(atlas, bits):
    hdr = atlas.header
    if hdr.texel_kind is not TexelKind.F32:
        raise ConfigurationError("quantized encoding needs a float32 atlas")
    if not 2 <= bits <= 8:
        raise ConfigurationError("bits must be in 2..8")
    if not np.all(np.isfinite(atlas.texels)):
        raise ConfigurationError("quantized encoding needs finite texels")
    levels = (1 << bits) - 1
    lo, hi = bucket_ranges(atlas)
    b = _to_buckets(atlas.texels, hdr).astype(np.float64)
    lo64 = lo.astype(np.float64)[:, :, None, None, :]
    span = (hi.astype(np.float64) - lo.astype(np.float64))[:, :, None, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(span > 0, np.round((b - lo64) / span * levels), 0)
    q = np.clip(q, 0, levels).astype(np.uint8).reshape(-1)
    packed = np.packbits(np.unpackbits(q[:, None], axis=1)[:, 8 - bits:].reshape(-1))
    ranges = np.stack([lo, hi], axis=-1).astype("<f4").tobytes()
    return EncodedAtlas(hdr, QUANTIZED, (bits,), ranges + packed.tobytes())


def _decode_quantized(enc):
    hdr = enc.header
    if hdr.texel_kind is not TexelKind.F32 or len(enc.params) != 1:
        raise FormatError("malformed quantized atlas")
    bits = enc.params[0]
    if not 2 <= bits <= 8:
        raise FormatError("quantized bit depth out of range")
    levels = (1 << bits) - 1
    nb = hdr.height * hdr.width * hdr.channels
    need_ranges = nb * 2 * 4
    need_bits = (hdr.size * bits + 7) // 8
    if len(enc.payload) < need_ranges + need_bits:
        raise TruncatedPayloadError("quantized payload truncated")
    rng = np.frombuffer(enc.payload[:need_ranges], dtype="<f4").reshape(hdr.height, hdr.width, hdr.channels, 2)
    raw = np.frombuffer(enc.payload[need_ranges:need_ranges + need_bits], dtype=np.uint8)
    q_bits = np.unpackbits(raw)[: hdr.size * bits].reshape(hdr.size, bits)
    q = np.packbits(np.pad(q_bits, ((0, 0), (8 - bits, 0))), axis=1)[:, 0].astype(np.float64)
    n = hdr.bucket_res
    q = q.reshape(hdr.height, hdr.width, n, n, hdr.channels)
    lo = rng[..., 0].astype(np.float64)[:, :, None, None, :]
    hi = rng[..., 1].astype(np.float64)[:, :, None, None, :]
    vals = lo + q * ((hi - lo) / levels)
    return RadianceAtlas(hdr, _from_buckets(vals, hdr).astype(np.float32))


def decode(enc):
    if enc.codec == LOSSLESS:
        return _decode_lossless(enc)
    if enc.codec == QUANTIZED:
        return _decode_quantized(enc)
    raise UnknownCodecError(f"unknown codec id {enc.codec}")


def to_bytes(enc):
    """RADX file bytes carrying ``enc`` in the codec section."""
    params = tuple(int(p) for p in enc.params)
    section = struct.pack(f"<II{len(params)}I", enc.codec, len(params), *params)
    section += struct.pack("<Q", len(enc.payload)) + enc.payload
    return pack_header(enc.header, 0) + section


def parse_section(header, rest):
    if len(rest) < 8:
        raise TruncatedPayloadError("truncated codec section")
    codec, nparams = struct.unpack_from("<II", rest)
    off = 8 + 4 * nparams
    if len(rest) < off + 8:
        raise TruncatedPayloadError("truncated codec section")
    params = struct.unpack_from(f"<{nparams}I", rest, 8)
    (length,) = struct.unpack_from("<Q", rest, off)
    payload = rest[off + 8:]
    if len(payload) < length:
        raise TruncatedPayloadError(f"codec payload truncated: {len(payload)} of {length} bytes")
    if len(payload) > length:
        raise FormatError("trailing bytes after codec payload")
    return EncodedAtlas(header, codec, params, payload)


def decode_section(header, rest):
    return decode(parse_section(header, rest))


def from_bytes(data):
    """Parse a compressed RADX file into an :class:`EncodedAtlas` without decoding it."""
    header, length, off = unpack_header(bytes(data))
    if length != 0:
        raise FormatError("RADX file is not compressed")
    return parse_section(header, bytes(data)[off:])
