"""Fill radiance atlases by walking the lookup chain backwards per texel.

Each bucket texel ``(lx, ly)`` has a centred coordinate ``(l + 0.5) * 2/n - 1``
which :func:`radtex.mapping.square_to_disc` turns into a disc point. That disc
point is unprojected to the incidence direction a viewer would need to land on
this texel, or, for mirror bakes, to the reflected direction the surface sees.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tracer
from .atlas import AtlasHeader, RadianceAtlas, TexelKind
from .errors import ConfigurationError, ValidationError
from .mapping import reflection_vector, square_to_disc, unproject_equisolid

DEFAULT_WALLS = (
    (0.8, 0.2, 0.2),
    (0.2, 0.8, 0.2),
    (0.2, 0.2, 0.8),
    (0.8, 0.8, 0.2),
    (0.8, 0.8, 0.8),
    (0.2, 0.8, 0.8),
)
WALL_NAMES = ("-tangent", "+tangent", "-bitangent", "+bitangent", "back", "window")


@dataclass(frozen=True)
class SurfacePatch:
    """Flat rectangle carrying an atlas. ``uv = (0, 0)`` sits at ``origin``,
    ``uv = (1, 1)`` at ``origin + width * tangent + height * bitangent``."""

    origin: tuple
    tangent: tuple
    bitangent: tuple
    extent: tuple
    material: str = None

    def __post_init__(self):
        vals = np.concatenate([np.ravel(self.origin), np.ravel(self.tangent),
                               np.ravel(self.bitangent), np.ravel(self.extent)]).astype(float)
        if not np.all(np.isfinite(vals)):
            raise ValidationError("patch contains non-finite numbers")
        t, b = self.T, self.Bt
        if abs(np.linalg.norm(t) - 1) > 1e-6 or abs(np.linalg.norm(b) - 1) > 1e-6:
            raise ValidationError("patch tangent and bitangent must be unit length")
        if abs(np.dot(t, b)) > 1e-6:
            raise ValidationError("patch tangent and bitangent must be orthogonal")
        if min(self.extent) <= 0:
            raise ValidationError("patch extent must be positive")

    @property
    def T(self):
        return np.asarray(self.tangent, dtype=np.float64)

    @property
    def Bt(self):
        return np.asarray(self.bitangent, dtype=np.float64)

    @property
    def N(self):
        return np.cross(self.T, self.Bt)

    def point_at(self, uv):
        uv = np.asarray(uv, dtype=np.float64)
        w, h = self.extent
        return (
            np.asarray(self.origin, dtype=np.float64)
            + (uv[..., 0:1] * w) * self.T
            + (uv[..., 1:2] * h) * self.Bt
        )

    def to_world(self, d):
        d = np.asarray(d, dtype=np.float64)
        return d[..., 0:1] * self.T + d[..., 1:2] * self.Bt + d[..., 2:3] * self.N

    def to_tangent(self, v):
        v = np.asarray(v, dtype=np.float64)
        return np.stack([tracer.dot(v, self.T), tracer.dot(v, self.Bt), tracer.dot(v, self.N)], -1)


@dataclass(frozen=True)
class Mirror:
    """Perfect untinted mirror: each texel stores the scene seen along the reflected view."""


@dataclass(frozen=True)
class Shaded:
    """Final colour leaving the patch material toward each incidence direction."""


@dataclass(frozen=True)
class ShadowMask:
    """1-bit visibility along each texel's light direction.

    ``max_distance`` bounds the shadow ray; infinity models a parallel light.
    """

    max_distance: float = math.inf


@dataclass(frozen=True)
class Interior:
    """Room of the given depth behind the patch, one flat colour per wall (see WALL_NAMES)."""

    depth: float
    walls: tuple = DEFAULT_WALLS

    def __post_init__(self):
        if not self.depth > 0 or not math.isfinite(self.depth):
            raise ConfigurationError("interior depth must be positive and finite")
        if np.shape(self.walls) != (6, 3):
            raise ConfigurationError("interior needs six RGB wall colours")


def texel_coords(n, supersample=1):
    """Centred coordinates of every texel (or sub-texel sample), shape ``(n, n, s*s, 2)`` indexed ``[ly, lx]``."""
    s = supersample
    sub = (np.arange(s) + 0.5) / s if s > 1 else np.array([0.5])
    k = (np.arange(n)[:, None] + sub[None, :]) * 2 / n - 1  # (n, s)
    cy = k[:, None, :, None]
    cx = k[None, :, None, :]
    cy, cx = np.broadcast_arrays(cy, cx)
    return np.stack([cx, cy], axis=-1).reshape(n, n, s * s, 2)


def texel_direction(local, n, reflect=False):
    """Tangent-space direction baked into local texel ``(lx, ly)``.

    Incidence direction by default; ``reflect=True`` gives the mirrored
    direction used by mirror bakes.
    """
    local = np.asarray(local)
    c = (local + 0.5) * 2 / n - 1
    a = square_to_disc(c)
    return reflection_vector(a) if reflect else unproject_equisolid(a)


def _room_hit(p_local, r, size, depth):
    """Parametric distance and wall index for rays leaving the window into the room."""
    lo = np.array([0.0, 0.0, -depth])
    hi = np.array([size[0], size[1], 0.0])
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = (hi - p_local) / r
        t_lo = (lo - p_local) / r
    t = np.where(r > 0, t_hi, np.where(r < 0, t_lo, np.inf))
    # z exits through the back wall only; the window (z = 0) is behind the ray
    t[..., 2] = np.where(r[..., 2] < 0, t_lo[..., 2], np.inf)
    axis = np.argmin(t, axis=-1)
    t_min = np.take_along_axis(t, axis[..., None], -1)[..., 0]
    side = np.take_along_axis(r, axis[..., None], -1)[..., 0] > 0
    wall = np.where(axis == 2, 4, 2 * axis + side)
    return t_min, wall


def interior_wall(patch, uv, d, depth):
    """Wall index hit by the eye ray through ``uv`` with tangent incidence ``d``."""
    uv = np.asarray(uv, dtype=np.float64)
    w, h = patch.extent
    p_local = np.stack([uv[..., 0] * w, uv[..., 1] * h, np.zeros(uv.shape[:-1])], -1)
    r = -np.asarray(d, dtype=np.float64)
    p_local, r = np.broadcast_arrays(p_local, r)
    return _room_hit(p_local, r, (w, h), depth)[1]


def patch_material(scene, patch):
    """Material of the patch: explicit name, else whatever surface it lies on."""
    if patch.material is not None:
        if patch.material not in scene.materials:
            raise ValidationError(f"patch material {patch.material!r} is not defined")
        return scene.materials[patch.material]
    centre = patch.point_at(np.array([0.5, 0.5]))
    probe = 1e-3
    _, prim, _ = tracer.intersect(scene, centre + probe * patch.N, -patch.N, 0.0, 2 * probe)
    if prim[0] < 0:
        raise ValidationError("shaded bake needs a patch material or a surface under the patch")
    return scene.materials[scene.primitives[int(prim[0])].material]


def _bucket_row(scene, patch, w, h, n, mode, by, coords, depth, material):
    """Float values for every bucket in row ``by``: ``(n, w*n, channels)``."""
    ss = coords.shape[2]
    a = square_to_disc(coords)  # (n, n, ss, 2)
    uv = np.stack([(np.arange(w) + 0.5) / w, np.full(w, (by + 0.5) / h)], -1)  # (w, 2)
    p = patch.point_at(uv)  # (w, 3)
    N = patch.N

    def rays(dirs_tangent):
        d = patch.to_world(dirs_tangent)  # (n, n, ss, 3)
        o = p + tracer.EPSILON * N
        o = np.broadcast_to(o[None, None, None, :, :], (n, n, ss, w, 3))
        d = np.broadcast_to(d[:, :, :, None, :], (n, n, ss, w, 3))
        return o.reshape(-1, 3), d.reshape(-1, 3)

    if isinstance(mode, Mirror):
        o, d = rays(reflection_vector(a))
        vals = tracer.trace_rays(scene, o, d, depth)
    elif isinstance(mode, Shaded):
        if isinstance(material, tracer.Mirror):
            o, d = rays(reflection_vector(a))
            if depth >= 1:
                vals = tracer.trace_rays(scene, o, d, depth - 1)
            else:
                vals = tracer.environment_radiance(d, scene.environment)
            vals = vals * np.asarray(material.tint)
        else:
            lit = tracer.direct_lighting(scene, p, np.broadcast_to(N, p.shape), material.albedo)
            vals = np.broadcast_to(lit, (n * n * ss, w, 3)).reshape(-1, 3)
    elif isinstance(mode, ShadowMask):
        o, d = rays(unproject_equisolid(a))
        vals = (~tracer.blocked_along(scene, o, d, mode.max_distance)).astype(np.float64)[:, None]
    elif isinstance(mode, Interior):
        inc = unproject_equisolid(a)
        pw, ph = patch.extent
        p_local = np.stack([uv[:, 0] * pw, uv[:, 1] * ph, np.zeros(w)], -1)
        p_local, r = np.broadcast_arrays(p_local[None, None, None], -inc[:, :, :, None, :])
        _, wall = _room_hit(p_local, r, (pw, ph), mode.depth)
        vals = np.asarray(mode.walls, dtype=np.float64)[wall.reshape(-1)]
    else:
        raise ConfigurationError(f"unknown bake mode {mode!r}")

    c = vals.shape[-1]
    vals = vals.reshape(n, n, ss, w, c).mean(axis=2) if ss > 1 else vals.reshape(n, n, w, c)
    # (ly, lx, bx, c) -> (ly, bx, lx, c) -> row strip
    return vals.transpose(0, 2, 1, 3).reshape(n, w * n, c)


def bake(scene, patch, w, h, n, mode, texel_kind=TexelKind.F32, depth=tracer.MAX_DEPTH,
         threads=1, supersample=1):
    """Bake a ``w x h`` grid of ``n x n`` buckets over ``patch``.

    Bucket centres sit at ``uv = ((bx + 0.5) / w, (by + 0.5) / h)``. Rows of
    buckets are independent jobs; the result does not depend on ``threads``.
    Shadow bakes always produce 1-bit masks.
    """
    if not isinstance(scene, tracer.Scene) or not isinstance(patch, SurfacePatch):
        raise ValidationError("bake needs a Scene and a SurfacePatch")
    if w < 1 or h < 1 or n < 2:
        raise ConfigurationError("bake needs w, h >= 1 and n >= 2")
    if supersample < 1:
        raise ConfigurationError("supersample must be >= 1")
    if depth < 0:
        raise ConfigurationError("depth must be >= 0")
    texel_kind = TexelKind(texel_kind)
    if isinstance(mode, ShadowMask):
        header = AtlasHeader(w, h, n, 1, TexelKind.MASK)
    else:
        if texel_kind is TexelKind.MASK:
            raise ConfigurationError("only shadow bakes produce mask atlases")
        header = AtlasHeader(w, h, n, 3, texel_kind)
    material = patch_material(scene, patch) if isinstance(mode, Shaded) else None

    coords = texel_coords(n, supersample)
    out = np.empty(header.shape, dtype=np.float64)

    def job(by):
        out[by * n:(by + 1) * n] = _bucket_row(scene, patch, w, h, n, mode, by, coords, depth, material)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(job, range(h)))
    else:
        for by in range(h):
            job(by)

    if header.texel_kind is TexelKind.U8:
        texels = np.round(np.clip(out, 0, 1) * 255).astype(np.uint8)
    elif header.texel_kind is TexelKind.MASK:
        texels = out.astype(np.uint8)
    else:
        texels = out.astype(np.float32)
    return RadianceAtlas(header, texels)
