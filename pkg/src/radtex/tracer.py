"""Deterministic Whitted ray tracer: spheres, planes, boxes, Lambert and mirror
materials, point lights and a procedural checker sky.

Everything runs on batches of rays (``(N, 3)`` arrays) with purely elementwise
arithmetic, so a ray's radiance is bitwise identical whatever batch it is traced
in. The scalar entry points (:func:`intersect_scene`, :func:`trace`, ...) wrap
the batch code with ``N = 1``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

EPSILON = 1e-4
MAX_DEPTH = 4

_LAMBERT, _MIRROR = 0, 1


def dot(a, b):
    # fixed evaluation order keeps results independent of array layout
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


@dataclass(frozen=True)
class Lambert:
    albedo: tuple


@dataclass(frozen=True)
class Mirror:
    tint: tuple = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    material: str


@dataclass(frozen=True)
class Plane:
    point: tuple
    normal: tuple
    material: str


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    material: str


@dataclass(frozen=True)
class PointLight:
    position: tuple
    intensity: tuple


@dataclass(frozen=True)
class CheckerSky:
    bright: tuple = (0.9, 0.9, 0.9)
    dark: tuple = (0.1, 0.2, 0.4)
    cells_u: int = 16
    cells_v: int = 8


DEFAULT_SKY = CheckerSky()


@dataclass(frozen=True)
class Ray:
    origin: tuple
    direction: tuple
    t_min: float = 0.0
    t_max: float = math.inf

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1) > 1e-6:
            raise ValidationError("ray direction must be unit length")
        if not 0 <= self.t_min < self.t_max:
            raise ValidationError("ray t-range must satisfy 0 <= t_min < t_max")


@dataclass(frozen=True)
class Hit:
    t: float
    point: np.ndarray
    normal: np.ndarray
    material: str
    primitive: int


@dataclass(frozen=True, eq=False)
class Scene:
    primitives: tuple = ()
    materials: dict = field(default_factory=dict)
    lights: tuple = ()
    environment: CheckerSky = DEFAULT_SKY

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        object.__setattr__(self, "lights", tuple(self.lights))
        object.__setattr__(self, "materials", dict(self.materials))
        self.validate()
        object.__setattr__(self, "_arrays", self._compile())

    def validate(self):
        def finite(*vals):
            arr = np.asarray([x for v in vals for x in np.ravel(v)], dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValidationError("scene contains non-finite numbers")

        for name, mat in self.materials.items():
            if isinstance(mat, Lambert):
                finite(mat.albedo)
            elif isinstance(mat, Mirror):
                finite(mat.tint)
            else:
                raise ValidationError(f"material {name!r} has unknown type {type(mat).__name__}")
        for k, prim in enumerate(self.primitives):
            if prim.material not in self.materials:
                raise ValidationError(f"primitive {k} uses undefined material {prim.material!r}")
            if isinstance(prim, Sphere):
                finite(prim.center, prim.radius)
                if prim.radius <= 0:
                    raise ValidationError(f"sphere {k} radius must be > 0")
            elif isinstance(prim, Plane):
                finite(prim.point, prim.normal)
                if abs(np.linalg.norm(prim.normal) - 1) > 1e-6:
                    raise ValidationError(f"plane {k} normal must be unit length")
            elif isinstance(prim, Box):
                finite(prim.lo, prim.hi)
                if not np.all(np.asarray(prim.lo) < np.asarray(prim.hi)):
                    raise ValidationError(f"box {k} min corner must be below max corner")
            else:
                raise ValidationError(f"unknown primitive type {type(prim).__name__}")
        for light in self.lights:
            finite(light.position, light.intensity)
        env = self.environment
        finite(env.bright, env.dark)
        if env.cells_u < 1 or env.cells_v < 1:
            raise ValidationError("environment cell counts must be positive")

    def _compile(self):
        kinds = np.zeros(len(self.primitives), dtype=np.int8)
        colors = np.zeros((len(self.primitives), 3))
        for k, prim in enumerate(self.primitives):
            mat = self.materials[prim.material]
            if isinstance(mat, Mirror):
                kinds[k], colors[k] = _MIRROR, mat.tint
            else:
                kinds[k], colors[k] = _LAMBERT, mat.albedo
        return kinds, colors

    def without(self, index):
        prims = self.primitives[:index] + self.primitives[index + 1:]
        return Scene(prims, self.materials, self.lights, self.environment)


def environment_radiance(d, sky=DEFAULT_SKY):
    """Procedural checker sky for world directions ``(..., 3)``; one of two colours."""
    d = np.asarray(d, dtype=np.float64)
    u = np.arctan2(d[..., 2], d[..., 0]) / (2 * math.pi) + 0.5
    v = d[..., 1] * 0.5 + 0.5
    below = 1 - np.finfo(np.float64).eps
    cu = np.floor(np.minimum(u, below) * sky.cells_u)
    cv = np.floor(np.minimum(v, below) * sky.cells_v)
    cell = (cu + cv).astype(np.int64) % 2
    return np.where((cell == 1)[..., None], np.asarray(sky.bright), np.asarray(sky.dark))


def _hit_sphere(prim, o, d, t_min, t_max):
    c = np.asarray(prim.center)
    oc = o - c
    b = dot(oc, d)
    q = dot(oc, oc) - prim.radius * prim.radius
    disc = b * b - q
    sq = np.sqrt(np.maximum(disc, 0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 >= t_min, t0, t1)
    ok = (disc >= 0) & (t >= t_min) & (t < t_max)
    n = (o + t[:, None] * d - c) / prim.radius
    return np.where(ok, t, np.inf), n


def _hit_plane(prim, o, d, t_min, t_max):
    n = np.asarray(prim.normal)
    denom = dot(d, np.broadcast_to(n, d.shape))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = dot(np.asarray(prim.point) - o, np.broadcast_to(n, o.shape)) / denom
    ok = (denom != 0) & (t >= t_min) & (t < t_max)
    return np.where(ok, t, np.inf), np.broadcast_to(n, d.shape)


def _hit_box(prim, o, d, t_min, t_max):
    lo, hi = np.asarray(prim.lo), np.asarray(prim.hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1 / d
        ta = (lo - o) * inv
        tb = (hi - o) * inv
    near = np.minimum(ta, tb)
    far = np.maximum(ta, tb)
    parallel = d == 0
    inside_slab = (o >= lo) & (o <= hi)
    near = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), near)
    far = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), far)
    k_near = np.argmax(near, axis=1)
    k_far = np.argmin(far, axis=1)
    rows = np.arange(len(d))
    t_near = near[rows, k_near]
    t_far = far[rows, k_far]
    entering = t_near >= t_min
    t = np.where(entering, t_near, t_far)
    ok = (t_near <= t_far) & (t >= t_min) & (t < t_max)
    axis = np.where(entering, k_near, k_far)
    n = np.zeros_like(d)
    n[rows, axis] = 1.0
    return np.where(ok, t, np.inf), n


_HITTERS = {Sphere: _hit_sphere, Plane: _hit_plane, Box: _hit_box}


def intersect(scene, o, d, t_min=0.0, t_max=np.inf):
    """Nearest hits for a batch of rays.

    Returns ``(t, prim, normal)``; ``prim`` is -1 and ``t`` infinite on a miss.
    Normals face the ray origin. Ties go to the earlier primitive.
    """
    o = np.asarray(o, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(d, dtype=np.float64).reshape(-1, 3)
    best = np.full(len(d), np.inf)
    prim = np.full(len(d), -1, dtype=np.int64)
    normal = np.zeros_like(d)
    for k, p in enumerate(scene.primitives):
        t, n = _HITTERS[type(p)](p, o, d, t_min, t_max)
        closer = t < best
        best = np.where(closer, t, best)
        prim = np.where(closer, k, prim)
        normal = np.where(closer[:, None], n, normal)
    flip = dot(normal, d) > 0
    normal = np.where(flip[:, None], -normal, normal)
    return best, prim, normal


def occluded(scene, q, target):
    """True where the segment from ``q`` to ``target`` is blocked."""
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    seg = np.asarray(target, dtype=np.float64) - q
    dist = np.sqrt(dot(seg, seg))
    d = seg / dist[:, None]
    _, prim, _ = intersect(scene, q, d, 0.0, dist)
    return prim >= 0


def blocked_along(scene, o, d, t_max=np.inf):
    """True where a ray from ``o`` along ``d`` hits anything before ``t_max``."""
    _, prim, _ = intersect(scene, o, d, 0.0, t_max)
    return prim >= 0


def direct_lighting(scene, p, n, albedo):
    """Lambert reflected radiance ``albedo/pi * sum(max(N.L,0) * vis * I / dist^2)``."""
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    n = np.asarray(n, dtype=np.float64).reshape(-1, 3)
    acc = np.zeros_like(p)
    q = p + EPSILON * n
    for light in scene.lights:
        lp = np.asarray(light.position)
        to_light = lp - p
        dist2 = dot(to_light, to_light)
        ndl = np.maximum(dot(n, to_light / np.sqrt(dist2)[:, None]), 0)
        lit = ndl > 0
        vis = np.zeros(len(p))
        if np.any(lit):
            vis[lit] = (~occluded(scene, q[lit], lp)).astype(np.float64)
        acc = acc + (ndl * vis / dist2)[:, None] * np.asarray(light.intensity)
    return np.asarray(albedo) / math.pi * acc


def reflect(d, n):
    return d - 2 * dot(d, n)[..., None] * n


def trace_rays(scene, o, d, depth=MAX_DEPTH):
    """Radiance arriving at ``o`` from direction ``d`` for a batch of rays."""
    o = np.asarray(o, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(d, dtype=np.float64).reshape(-1, 3)
    if depth < 0:
        raise ValueError("depth must be >= 0")
    kinds, colors = scene._arrays
    out = np.zeros_like(d)
    idx = np.arange(len(d))
    thr = np.ones_like(d)
    for remaining in range(depth, -1, -1):
        if len(idx) == 0:
            break
        t, prim, n = intersect(scene, o, d)
        miss = prim < 0
        if np.any(miss):
            out[idx[miss]] += thr[miss] * environment_radiance(d[miss], scene.environment)
        if np.all(miss):
            break
        kind = np.where(miss, -1, kinds[np.maximum(prim, 0)])
        lam = kind == _LAMBERT
        if np.any(lam):
            p = o[lam] + t[lam, None] * d[lam]
            out[idx[lam]] += thr[lam] * direct_lighting(scene, p, n[lam], colors[prim[lam]])
        mir = kind == _MIRROR
        if not np.any(mir):
            break
        p = o[mir] + t[mir, None] * d[mir]
        nm = n[mir]
        refl = reflect(d[mir], nm)
        weight = thr[mir] * colors[prim[mir]]
        if remaining == 0:
            out[idx[mir]] += weight * environment_radiance(refl, scene.environment)
            break
        idx, thr, o, d = idx[mir], weight, p + EPSILON * nm, refl
    return out


def _ray_arrays(ray):
    if isinstance(ray, Ray):
        return np.asarray(ray.origin, float), np.asarray(ray.direction, float), ray.t_min, ray.t_max
    origin, direction = ray
    return np.asarray(origin, float), np.asarray(direction, float), 0.0, np.inf


def intersect_scene(scene, ray):
    """Nearest :class:`Hit` along ``ray`` (a :class:`Ray` or ``(origin, dir)``), or None."""
    o, d, t_min, t_max = _ray_arrays(ray)
    t, prim, n = intersect(scene, o, d, t_min, t_max)
    if prim[0] < 0:
        return None
    k = int(prim[0])
    return Hit(float(t[0]), o + t[0] * d, n[0], scene.primitives[k].material, k)


def shadow_visibility(scene, point, light):
    """1 if nothing blocks the segment from ``point`` (already offset) to the light."""
    pos = light.position if isinstance(light, PointLight) else light
    return int(not occluded(scene, point, np.asarray(pos, float))[0])


def trace(scene, ray, depth=MAX_DEPTH):
    o, d, _, _ = _ray_arrays(ray)
    return trace_rays(scene, o, d, depth)[0]
