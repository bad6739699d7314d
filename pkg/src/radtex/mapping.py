"""Projection math between incidence directions and bucket coordinates.

All functions are vectorised over leading axes: directions are ``(..., 3)``
arrays in tangent space (``z`` along the surface normal), disc and square
points are ``(..., 2)`` arrays. float32 inputs stay float32, everything else
is computed in float64.

The chain used at lookup time is::

    direction --project_equisolid--> disc --disc_to_square--> square --clamp--> bucket coord

and the bake side walks it backwards with :func:`square_to_disc` followed by
:func:`unproject_equisolid` (incidence) or :func:`reflection_vector`.
"""

import numpy as np

from .errors import ConfigurationError, DomainError

SQRT2 = np.sqrt(2.0)

# Slack on the unit-disc precondition; rounding puts rim points at 1 + O(1e-16).
DISC_TOL = 1e-6


def _as_float(x):
    x = np.asarray(x)
    if x.dtype != np.float32:
        x = x.astype(np.float64, copy=False)
    return x


def _sqrt0(x):
    return np.sqrt(np.maximum(x, 0))


def _check_disc(a):
    r2 = a[..., 0] ** 2 + a[..., 1] ** 2
    if np.any(r2 > 1 + DISC_TOL):
        raise DomainError("disc point outside the unit disc (below-horizon direction)")
    return r2


def project_equisolid(i):
    """Tangent-space direction to equisolid disc point, radius ``sqrt(2)*sin(theta/2)``."""
    i = _as_float(i)
    x, y, z = i[..., 0], i[..., 1], i[..., 2]
    norm = np.sqrt(x * x + y * y + (z + 1) ** 2)
    if np.any(norm == 0):
        raise DomainError("equisolid projection undefined for the antipode (0, 0, -1)")
    s = i.dtype.type(SQRT2) / norm
    return np.stack([s * x, s * y], axis=-1)


def project_equisolid_general(i, n):
    """Forward mapping against an arbitrary normal.

    Returns ``(disc, cos_half)`` where ``disc`` is the first two components of
    ``sqrt(2) * normalize(i + n)`` and ``cos_half`` is the third, which equals
    ``sqrt(2)*cos(theta/2)``. Only the ``n = (0, 0, 1)`` frame is used by the
    pipeline.
    """
    i = _as_float(i)
    n = _as_float(n)
    s = i + n
    norm = np.linalg.norm(s, axis=-1)
    if np.any(norm == 0):
        raise DomainError("incidence equals the negated normal; halfway vector undefined")
    v = s * (i.dtype.type(SQRT2) / norm)[..., None]
    return v[..., :2], v[..., 2]


def unproject_equisolid(a):
    """Disc point back to the tangent-space incidence direction (upper hemisphere)."""
    a = _as_float(a)
    r2 = _check_disc(a)
    k = _sqrt0(2 - r2)
    return np.stack([a[..., 0] * k, a[..., 1] * k, 1 - r2], axis=-1)


def unproject_equisolid_general(a, n):
    """Inverse mapping against an arbitrary normal: reflect ``n`` about the halfway vector."""
    a = _as_float(a)
    n = _as_float(n)
    r2 = _check_disc(a)
    half = np.sqrt(a.dtype.type(0.5))
    h = np.stack([a[..., 0] * half, a[..., 1] * half, _sqrt0(1 - r2 / 2)], axis=-1)
    hn = np.sum(h * n, axis=-1)[..., None]
    return 2 * (hn * h - n) + n


def reflection_vector(a):
    """Disc point to the mirrored direction used when baking reflections."""
    a = _as_float(a)
    r2 = _check_disc(a)
    k = _sqrt0(2 - r2)
    return np.stack([-a[..., 0] * k, -a[..., 1] * k, 1 - r2], axis=-1)


def disc_to_square(a):
    """Radial stretch of the unit disc onto ``[-1, 1]^2``; the origin maps to itself."""
    a = _as_float(a)
    m = np.maximum(np.abs(a[..., 0]), np.abs(a[..., 1]))
    r = np.sqrt(a[..., 0] ** 2 + a[..., 1] ** 2)
    safe = np.where(m > 0, m, 1)
    s = np.where(m > 0, r / safe, 0)
    return a * s[..., None]


def square_to_disc(b):
    """Inverse of :func:`disc_to_square`."""
    b = _as_float(b)
    m = np.maximum(np.abs(b[..., 0]), np.abs(b[..., 1]))
    r = np.sqrt(b[..., 0] ** 2 + b[..., 1] ** 2)
    safe = np.where(r > 0, r, 1)
    s = np.where(r > 0, m / safe, 0)
    return b * s[..., None]


def clamp_bucket_coord(b, bucket_res):
    """Keep centred bucket coordinates half a texel away from the bucket edge."""
    if int(bucket_res) != bucket_res or bucket_res < 2:
        raise ConfigurationError(f"bucket resolution must be an integer >= 2, got {bucket_res!r}")
    b = _as_float(b)
    lim = 1 - 1 / bucket_res
    return np.clip(b, -lim, lim).astype(b.dtype, copy=False)


def incidence_to_bucket_coord(i, bucket_res):
    """Full lookup chain from an incidence direction to a clamped bucket coordinate.

    Below-horizon directions (``z < 0``) are pulled onto the rim instead of
    raising, so silhouettes degrade to the grazing texels.
    """
    i = _as_float(i)
    a = project_equisolid(i)
    below = i[..., 2] < 0
    if np.any(below):
        xy = i[..., :2]
        rim = xy / np.linalg.norm(xy, axis=-1, keepdims=True).clip(min=np.finfo(i.dtype).tiny)
        a = np.where(below[..., None], rim, a)
    return clamp_bucket_coord(disc_to_square(a), bucket_res)


def incidence_angle(i):
    """Angle between the direction and the normal, radians (diagnostics)."""
    i = _as_float(i)
    return np.arccos(np.clip(i[..., 2], -1, 1))


def azimuth(i):
    """Azimuth ``atan2(y, x)`` of a direction or disc point (diagnostics)."""
    i = _as_float(i)
    return np.arctan2(i[..., 1], i[..., 0])
