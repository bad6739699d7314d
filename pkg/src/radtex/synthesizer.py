"""Render atlas-carrying meshes by per-pixel plenoptic lookup, plus the
ray-traced reference image and PSNR comparison.

Pixel ``(px, py)`` has its centre at ``px + 0.5``, ``py + 0.5`` with row 0 at
the top. The rasterizer and :func:`ground_truth` share :class:`Camera`, so a
pixel sees the same point through either path.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import imageio, tracer
from .atlas import NEAREST_BUCKET, sample_plenoptic
from .baker import SurfacePatch
from .errors import DomainError, ValidationError

NEAR = 1e-4


def _normalize(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(frozen=True)
class Camera:
    position: tuple
    look_at: tuple
    up: tuple
    vfov: float
    width: int
    height: int

    def __post_init__(self):
        vals = np.r_[self.position, self.look_at, self.up, self.vfov].astype(float)
        if not np.all(np.isfinite(vals)):
            raise ValidationError("camera contains non-finite numbers")
        if np.allclose(self.position, self.look_at, rtol=0, atol=0):
            raise ValidationError("camera position equals look-at point")
        if not 0 < self.vfov < 180:
            raise ValidationError("vertical field of view must be in (0, 180) degrees")
        if self.width < 1 or self.height < 1:
            raise ValidationError("image resolution must be positive")
        f = self.forward
        if np.linalg.norm(np.cross(f, np.asarray(self.up, float))) < 1e-12:
            raise ValidationError("camera up vector is parallel to the view direction")

    @property
    def eye(self):
        return np.asarray(self.position, dtype=np.float64)

    @property
    def forward(self):
        return _normalize(np.asarray(self.look_at, float) - self.eye)

    def basis(self):
        f = self.forward
        r = _normalize(np.cross(f, np.asarray(self.up, float)))
        u = np.cross(r, f)
        return r, u, f

    @property
    def tan_half(self):
        return math.tan(math.radians(self.vfov) / 2)

    @property
    def aspect(self):
        return self.width / self.height

    def pixel_directions(self, rows=None):
        """Unit world directions through pixel centres, ``(len(rows), width, 3)``."""
        rows = np.arange(self.height) if rows is None else np.asarray(rows)
        r, u, f = self.basis()
        x = (2 * (np.arange(self.width) + 0.5) / self.width - 1) * self.tan_half * self.aspect
        y = (1 - 2 * (rows + 0.5) / self.height) * self.tan_half
        d = f + x[None, :, None] * r + y[:, None, None] * u
        return _normalize(d)

    def to_view(self, p):
        """World points to camera space ``(right, up, depth)``."""
        r, u, f = self.basis()
        v = np.asarray(p, dtype=np.float64) - self.eye
        return np.stack([v @ r, v @ u, v @ f], axis=-1)

    def view_to_pixel(self, c):
        """Camera-space points (depth > 0) to continuous pixel coordinates."""
        x = c[..., 0] / (c[..., 2] * self.tan_half * self.aspect)
        y = c[..., 1] / (c[..., 2] * self.tan_half)
        return np.stack([(x + 1) / 2 * self.width - 0.5, (1 - y) / 2 * self.height - 0.5], axis=-1)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle soup; every array is ``(F, 3, k)`` (face, corner, component)."""

    positions: np.ndarray
    uvs: np.ndarray
    tangents: np.ndarray
    bitangents: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, k), dtype=np.float64) for k in
                ("positions", "uvs", "tangents", "bitangents", "normals")]
        for k, a in zip(("positions", "uvs", "tangents", "bitangents", "normals"), arrs):
            object.__setattr__(self, k, a)
        f = len(self.positions)
        for a, k in zip(arrs, (3, 2, 3, 3, 3)):
            if a.shape != (f, 3, k):
                raise ValidationError("mesh attribute arrays have inconsistent shapes")
        if np.any(self.uvs < 0) or np.any(self.uvs > 1):
            raise ValidationError("mesh uv coordinates must lie in [0, 1]")
        t, b, n = self.tangents, self.bitangents, self.normals
        for v in (t, b, n):
            if np.any(np.abs(np.linalg.norm(v, axis=-1) - 1) > 1e-4):
                raise ValidationError("mesh frames must be unit length")
        for x, y in ((t, b), (t, n), (b, n)):
            if np.any(np.abs(np.sum(x * y, axis=-1)) > 1e-4):
                raise ValidationError("mesh frames must be orthogonal")

    @classmethod
    def from_patches(cls, patches):
        pos, uv, tan, bit, nrm = [], [], [], [], []
        corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float64)
        for patch in patches:
            p = patch.point_at(corners)
            for tri in ((0, 1, 2), (0, 2, 3)):
                pos.append(p[list(tri)])
                uv.append(corners[list(tri)])
                tan.append(np.tile(patch.T, (3, 1)))
                bit.append(np.tile(patch.Bt, (3, 1)))
                nrm.append(np.tile(patch.N, (3, 1)))
        return cls(np.array(pos), np.array(uv), np.array(tan), np.array(bit), np.array(nrm))

    @classmethod
    def quad(cls, patch=None):
        """Two-triangle quad over ``patch`` (default: unit square at the origin facing +z)."""
        if patch is None:
            patch = SurfacePatch((-0.5, -0.5, 0), (1, 0, 0), (0, 1, 0), (1, 1))
        return cls.from_patches([patch])

    @classmethod
    def cube(cls, center=(0, 0, 0), size=1.0):
        """Axis-aligned cube; each face carries the full ``[0, 1]^2`` uv square, normals outward."""
        c = np.asarray(center, dtype=np.float64)
        h = size / 2
        faces = [
            ((-h, -h, h), (1, 0, 0), (0, 1, 0)),
            ((h, -h, -h), (-1, 0, 0), (0, 1, 0)),
            ((h, -h, h), (0, 0, -1), (0, 1, 0)),
            ((-h, -h, -h), (0, 0, 1), (0, 1, 0)),
            ((-h, h, h), (1, 0, 0), (0, 0, -1)),
            ((-h, -h, -h), (1, 0, 0), (0, 0, 1)),
        ]
        return cls.from_patches(
            [SurfacePatch(tuple(c + o), t, b, (size, size)) for o, t, b in faces]
        )


@dataclass(eq=False)
class Image:
    """Linear RGB float image, ``pixels`` shaped ``(height, width, 3)``."""

    pixels: np.ndarray
    coverage: np.ndarray = field(default=None)

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    def save(self, path, pfm=False):
        if pfm or str(path).lower().endswith(".pfm"):
            imageio.write_pfm(path, self.pixels)
        else:
            imageio.write_ppm(path, imageio.srgb_encode(self.pixels))

    @classmethod
    def load(cls, path):
        return cls(imageio.read_image_linear(path))


def _clip_near(verts, attrs):
    """Clip one triangle against the near plane. ``verts`` are camera-space."""
    inside = verts[:, 2] >= NEAR
    if inside.all():
        return [(verts, attrs)]
    if not inside.any():
        return []
    poly_v, poly_a = [], []
    for k in range(3):
        j = (k + 1) % 3
        vk, vj = verts[k], verts[j]
        if inside[k]:
            poly_v.append(vk)
            poly_a.append(attrs[k])
        if inside[k] != inside[j]:
            s = (NEAR - vk[2]) / (vj[2] - vk[2])
            poly_v.append(vk + s * (vj - vk))
            poly_a.append(attrs[k] + s * (attrs[j] - attrs[k]))
    out = []
    for k in range(1, len(poly_v) - 1):
        idx = [0, k, k + 1]
        out.append((np.array([poly_v[i] for i in idx]), np.array([poly_a[i] for i in idx])))
    return out


def raster_attributes(mesh, camera):
    """Visibility pass: depth-tested, perspective-correct vertex attributes per pixel.

    Returns ``(covered, attrs)`` with ``attrs[..., 0:3]`` world position,
    ``3:5`` uv, ``5:8`` tangent, ``8:11`` bitangent, ``11:14`` normal
    (frames not yet re-normalised).
    """
    W, H = camera.width, camera.height
    eye = camera.eye
    zbuf = np.full((H, W), np.inf)
    # per-pixel attributes: world position 3, uv 2, T 3, Bt 3, N 3
    attr_buf = np.zeros((H, W, 14))
    attrs = np.concatenate(
        [mesh.positions, mesh.uvs, mesh.tangents, mesh.bitangents, mesh.normals], axis=-1
    )
    view = camera.to_view(mesh.positions)

    for f in range(len(mesh.positions)):
        for verts, att in _clip_near(view[f], attrs[f]):
            s = camera.view_to_pixel(verts)
            x0, y0 = s[0]
            x1, y1 = s[1]
            x2, y2 = s[2]
            area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
            if not np.isfinite(area) or abs(area) < 1e-12:
                continue
            lo = np.floor(s.min(axis=0)).astype(int)
            hi = np.ceil(s.max(axis=0)).astype(int)
            lo = np.maximum(lo, 0)
            hi = np.minimum(hi, [W - 1, H - 1])
            if np.any(lo > hi):
                continue
            px, py = np.meshgrid(np.arange(lo[0], hi[0] + 1, dtype=np.float64),
                                 np.arange(lo[1], hi[1] + 1, dtype=np.float64))
            # barycentrics in screen space; pixel centres sit on integer coordinates here
            l1 = ((px - x0) * (y2 - y0) - (x2 - x0) * (py - y0)) / area
            l2 = ((x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)) / area
            l0 = 1 - l1 - l2
            inside = (l0 >= -1e-9) & (l1 >= -1e-9) & (l2 >= -1e-9)
            if not inside.any():
                continue
            iz = 1 / verts[:, 2]
            w0, w1, w2 = l0 * iz[0], l1 * iz[1], l2 * iz[2]
            depth = 1 / (w0 + w1 + w2)
            b = np.stack([w0 * depth, w1 * depth, w2 * depth], axis=-1)
            yy = py.astype(int)
            xx = px.astype(int)
            closer = inside & (depth < zbuf[yy, xx])
            if not closer.any():
                continue
            vals = b[closer] @ att
            p = vals[:, 0:3]
            n = vals[:, 11:14]
            facing = np.sum(n * (eye - p), axis=-1) >= 0
            ry, rx = yy[closer][facing], xx[closer][facing]
            zbuf[ry, rx] = depth[closer][facing]
            attr_buf[ry, rx] = vals[facing]

    return np.isfinite(zbuf), attr_buf


def rasterize(mesh, atlas, camera, background=(0.0, 0.0, 0.0), mode=NEAREST_BUCKET,
              texel_filter="bilinear"):
    """Draw ``mesh`` shading every covered pixel by one atlas lookup.

    The incidence vector runs from the surface point to the eye and is taken
    into the interpolated tangent frame. Back-facing pixels are dropped.
    """
    covered, attr_buf = raster_attributes(mesh, camera)
    eye = camera.eye
    out = np.empty((camera.height, camera.width, 3))
    out[:] = np.asarray(background, dtype=np.float64)
    if covered.any():
        a = attr_buf[covered]
        p, uv = a[:, 0:3], np.clip(a[:, 3:5], 0, 1)
        t, bt, n = _normalize(a[:, 5:8]), _normalize(a[:, 8:11]), _normalize(a[:, 11:14])
        inc = _normalize(eye - p)
        local = np.stack([np.sum(t * inc, -1), np.sum(bt * inc, -1), np.sum(n * inc, -1)], -1)
        local = _normalize(local)
        v = sample_plenoptic(atlas, uv, local, mode, texel_filter)
        if v.shape[-1] == 1:
            v = np.repeat(v, 3, axis=-1)
        out[covered] = v
    return Image(out, covered)


def ground_truth(scene, camera, depth=tracer.MAX_DEPTH, threads=1):
    """Ray-traced reference: one ray through every pixel centre."""
    out = np.empty((camera.height, camera.width, 3))
    eye = camera.eye

    def job(rows):
        d = camera.pixel_directions(rows).reshape(-1, 3)
        o = np.broadcast_to(eye, d.shape)
        out[rows] = tracer.trace_rays(scene, o, d, depth).reshape(len(rows), camera.width, 3)

    chunks = np.array_split(np.arange(camera.height), max(1, min(camera.height, 4 * threads)))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(job, chunks))
    else:
        for rows in chunks:
            job(rows)
    return Image(out)


def psnr(a, b, peak=1.0, mask=None):
    """``10 * log10(peak^2 / MSE)`` over all channels (and ``mask`` pixels, if given).

    Identical inputs give ``math.inf``.
    """
    pa = a.pixels if isinstance(a, Image) else np.asarray(a, dtype=np.float64)
    pb = b.pixels if isinstance(b, Image) else np.asarray(b, dtype=np.float64)
    if pa.shape != pb.shape:
        raise DomainError(f"image dimensions differ: {pa.shape} vs {pb.shape}")
    diff = pa.astype(np.float64) - pb.astype(np.float64)
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
    mse = float(np.mean(diff * diff))
    if mse == 0:
        return math.inf
    return 10 * math.log10(peak * peak / mse)
