import math

import numpy as np
import numpy.testing as npt
import pytest

from radtex import atlas as A
from radtex import baker as B
from radtex import tracer as T
from radtex.atlas import TexelKind
from radtex.errors import ConfigurationError, ValidationError
from radtex.mapping import incidence_to_bucket_coord

# floor patch: normal +y (tangent x cross bitangent -z)
FLOOR = B.SurfacePatch((-1, 0, 1), (1, 0, 0), (0, 0, -1), (2, 2))


def showcase_scene():
    return T.Scene(
        [
            T.Plane((0, 0, 0), (0, 1, 0), "floor"),
            T.Sphere((0.3, 1.0, -0.4), 0.5, "chrome"),
            T.Box((-0.9, 0.0, -0.9), (-0.5, 0.6, -0.5), "clay"),
        ],
        {
            "floor": T.Mirror((0.9, 0.9, 0.9)),
            "chrome": T.Mirror((0.95, 0.8, 0.6)),
            "clay": T.Lambert((0.7, 0.5, 0.3)),
        },
        [T.PointLight((1.0, 3.0, 1.0), (12, 12, 12))],
    )


def traced_texel(scene, patch, w, h, bx, by, local, n, depth=T.MAX_DEPTH):
    p = patch.point_at(np.array([(bx + 0.5) / w, (by + 0.5) / h]))
    d = patch.to_world(B.texel_direction(np.asarray(local), n, reflect=True))
    return T.trace(scene, (p + T.EPSILON * patch.N, d), depth)


class TestPatch:
    def test_frame(self):
        npt.assert_array_equal(FLOOR.N, [0, 1, 0])
        npt.assert_array_equal(FLOOR.point_at([1, 1]), [1, 0, -1])
        npt.assert_allclose(FLOOR.to_tangent(FLOOR.to_world([0.2, 0.3, 0.9])), [0.2, 0.3, 0.9])

    @pytest.mark.parametrize(
        "args",
        [
            ((0, 0, 0), (1, 0, 0), (1, 0, 0), (1, 1)),
            ((0, 0, 0), (2, 0, 0), (0, 1, 0), (1, 1)),
            ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 1)),
            ((0, math.nan, 0), (1, 0, 0), (0, 1, 0), (1, 1)),
        ],
    )
    def test_invalid(self, args):
        with pytest.raises(ValidationError):
            B.SurfacePatch(*args)


class TestTexelDirection:
    def test_odd_centre_is_normal(self):
        npt.assert_array_equal(B.texel_direction((2, 2), 5), [0, 0, 1])

    def test_n2_corner(self):
        d = B.texel_direction((1, 1), 2)
        c = math.sqrt(0.125)
        k = math.sqrt(2 - 2 * c * c)
        npt.assert_allclose(d, [c * k, c * k, 1 - 2 * c * c], atol=1e-15)
        npt.assert_allclose(np.linalg.norm(d), 1, atol=1e-15)
        npt.assert_allclose(incidence_to_bucket_coord(d, 2), [0.5, 0.5], atol=1e-12)

    def test_round_trip_all_texels(self):
        n = 16
        k = np.arange(n)
        lx, ly = np.meshgrid(k, k)
        local = np.stack([lx, ly], -1)
        d = B.texel_direction(local, n)
        npt.assert_allclose(incidence_to_bucket_coord(d, n), A.texel_center(local, n), atol=1e-12)

    def test_corner_approaches_grazing(self):
        d = B.texel_direction((511, 511), 512)
        assert d[2] < 1e-2
        npt.assert_allclose(d[0], d[1])

    def test_reflect_mirrors(self):
        d = B.texel_direction((3, 1), 8)
        r = B.texel_direction((3, 1), 8, reflect=True)
        npt.assert_array_equal(r, [-d[0], -d[1], d[2]])

    def test_texel_coords_match(self):
        c = B.texel_coords(4)
        npt.assert_array_equal(c[2, 1, 0], A.texel_center([1, 2], 4))
        s = B.texel_coords(4, supersample=2)
        npt.assert_allclose(s[2, 1].mean(axis=0), A.texel_center([1, 2], 4))


class TestBake:
    def test_mirror_environment_only(self):
        a = B.bake(T.Scene(), FLOOR, 2, 2, 4, B.Mirror())
        n = 4
        for by in range(2):
            for bx in range(2):
                for ly in range(n):
                    for lx in range(n):
                        r = FLOOR.to_world(B.texel_direction((lx, ly), n, reflect=True))
                        expected = T.environment_radiance(r).astype(np.float32)
                        npt.assert_array_equal(a.bucket(bx, by)[ly, lx], expected)

    def test_shadow_without_occluders(self):
        a = B.bake(T.Scene(), FLOOR, 3, 2, 4, B.ShadowMask())
        assert a.header.texel_kind is TexelKind.MASK
        assert np.all(a.texels == 1)

    def test_shaded_without_lights(self):
        s = T.Scene([T.Plane((0, 0, 0), (0, 1, 0), "f")], {"f": T.Lambert((0.8, 0.8, 0.8))})
        a = B.bake(s, FLOOR, 2, 2, 4, B.Shaded())
        assert np.all(a.texels == 0)

    def test_shaded_lambert_is_view_independent(self):
        s = T.Scene(
            [T.Plane((0, 0, 0), (0, 1, 0), "f")],
            {"f": T.Lambert((0.5, 0.5, 0.5))},
            [T.PointLight((0, 2, 0), (4, 4, 4))],
        )
        a = B.bake(s, FLOOR, 2, 2, 4, B.Shaded())
        for by in range(2):
            for bx in range(2):
                blk = a.bucket(bx, by)
                assert np.all(blk == blk[0, 0])
        p = FLOOR.point_at([0.25, 0.25])
        expected = 0.5 / math.pi * 4 / (p[0] ** 2 + 4 + p[2] ** 2) * (2 / math.sqrt(p[0] ** 2 + 4 + p[2] ** 2))
        npt.assert_allclose(a.bucket(0, 0)[0, 0], expected, rtol=1e-6)

    def test_shaded_mirror_material(self):
        scene = showcase_scene()
        a = B.bake(scene, FLOOR, 2, 2, 4, B.Shaded())
        expected = np.float32(0.9) * traced_texel(scene, FLOOR, 2, 2, 1, 0, (2, 3), 4, T.MAX_DEPTH - 1)
        npt.assert_allclose(a.bucket(1, 0)[3, 2], expected, rtol=1e-6)

    def test_shaded_needs_material(self):
        with pytest.raises(ValidationError):
            B.bake(T.Scene(), FLOOR, 1, 1, 2, B.Shaded())

    def test_bake_sample_bit_exact(self):
        scene = showcase_scene()
        w = h = 3
        n = 8
        a = B.bake(scene, FLOOR, w, h, n, B.Mirror())
        for by in range(h):
            for bx in range(w):
                uv = [(bx + 0.5) / w, (by + 0.5) / h]
                for ly in range(n):
                    for lx in range(n):
                        d = B.texel_direction((lx, ly), n)
                        got = A.sample_plenoptic(a, uv, d, A.NEAREST_BUCKET, "nearest")
                        want = traced_texel(scene, FLOOR, w, h, bx, by, (lx, ly), n)
                        assert got.astype(np.float32).tobytes() == want.astype(np.float32).tobytes()

    def test_thread_count_irrelevant(self):
        scene = showcase_scene()
        a1 = B.bake(scene, FLOOR, 4, 5, 4, B.Mirror(), threads=1)
        a3 = B.bake(scene, FLOOR, 4, 5, 4, B.Mirror(), threads=3)
        assert A.serialize(a1) == A.serialize(a3)

    def test_mirror_normal_texel_traces_along_normal(self):
        scene = showcase_scene()
        a = B.bake(scene, FLOOR, 2, 2, 5, B.Mirror())
        p = FLOOR.point_at(np.array([0.75, 0.25]))
        want = T.trace(scene, (p + T.EPSILON * FLOOR.N, FLOOR.N))
        npt.assert_array_equal(a.bucket(1, 0)[2, 2], want.astype(np.float32))

    def test_u8(self):
        a = B.bake(T.Scene(), FLOOR, 1, 1, 4, B.Mirror(), texel_kind=TexelKind.U8)
        assert a.texels.dtype == np.uint8
        assert set(np.unique(a.texels).tolist()) <= {26, 51, 102, 230}

    def test_supersample_averages(self):
        a1 = B.bake(T.Scene(), FLOOR, 1, 1, 4, B.Mirror(), supersample=1)
        a4 = B.bake(T.Scene(), FLOOR, 1, 1, 4, B.Mirror(), supersample=4)
        assert a4.texels.shape == a1.texels.shape
        assert not np.array_equal(a1.texels, a4.texels)
        lo = np.minimum(T.DEFAULT_SKY.bright, T.DEFAULT_SKY.dark)
        hi = np.maximum(T.DEFAULT_SKY.bright, T.DEFAULT_SKY.dark)
        assert np.all(a4.texels >= lo.astype(np.float32) - 1e-7)
        assert np.all(a4.texels <= hi.astype(np.float32) + 1e-7)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(w=0), dict(n=1), dict(supersample=0), dict(texel_kind=TexelKind.MASK), dict(depth=-1)],
    )
    def test_bad_config(self, kwargs):
        args = dict(w=1, h=1, n=4, supersample=1, texel_kind=TexelKind.F32, depth=2)
        args.update(kwargs)
        with pytest.raises(ConfigurationError):
            B.bake(T.Scene(), FLOOR, args["w"], args["h"], args["n"], B.Mirror(),
                   texel_kind=args["texel_kind"], supersample=args["supersample"], depth=args["depth"])


class TestShadowBake:
    def test_occluder_overhead(self):
        s = T.Scene([T.Sphere((0, 3, 0), 1.0, "m")], {"m": T.Lambert((1, 1, 1))})
        a = B.bake(s, FLOOR, 1, 1, 9, B.ShadowMask())
        assert a.bucket(0, 0)[4, 4, 0] == 0
        assert a.bucket(0, 0)[0, 0, 0] == 1

    def test_max_distance(self):
        s = T.Scene([T.Sphere((0, 3, 0), 1.0, "m")], {"m": T.Lambert((1, 1, 1))})
        a = B.bake(s, FLOOR, 1, 1, 9, B.ShadowMask(max_distance=1.5))
        assert np.all(a.texels == 1)


class TestInterior:
    def test_every_texel_hits_one_wall(self):
        mode = B.Interior(1.5)
        a = B.bake(T.Scene(), FLOOR, 4, 4, 16, mode)
        colours = np.asarray(mode.walls, dtype=np.float32)
        px = a.texels.reshape(-1, 3)
        matches = (px[:, None, :] == colours[None, :, :]).all(axis=2)
        assert np.all(matches.sum(axis=1) == 1)
        assert not np.any(matches[:, 5])

    def test_wall_table(self):
        p = FLOOR
        depth = 1.0
        centre = [0.5, 0.5]
        assert B.interior_wall(p, centre, [0, 0, 1], depth) == 4
        # eye off toward +tangent: continued ray heads to -tangent wall
        assert B.interior_wall(p, centre, [0.99, 0, math.sqrt(1 - 0.99**2)], depth) == 0
        assert B.interior_wall(p, centre, [-0.99, 0, math.sqrt(1 - 0.99**2)], depth) == 1
        assert B.interior_wall(p, centre, [0, 0.99, math.sqrt(1 - 0.99**2)], depth) == 2
        assert B.interior_wall(p, centre, [0, -0.99, math.sqrt(1 - 0.99**2)], depth) == 3

    def test_brute_force_against_tracer_box(self):
        # Trace the continued eye ray inside a real box and compare which face it reaches.
        depth = 0.7
        n = 8
        mode = B.Interior(depth)
        a = B.bake(T.Scene(), FLOOR, 2, 2, n, mode)
        lo = np.array([0.0, 0.0, -depth])
        hi = np.array([2.0, 2.0, 0.0])
        box = T.Scene([T.Box(tuple(lo), tuple(hi), "w")], {"w": T.Lambert((1, 1, 1))})
        for ly in range(n):
            for lx in range(n):
                d = B.texel_direction((lx, ly), n)
                p_local = np.array([0.5, 1.5, 0.0])
                hit = T.intersect_scene(box, T.Ray(p_local, -d, 1e-9))
                face = int(np.argmax(np.abs(hit.normal)))
                if face == 2:
                    want = 4
                else:
                    want = 2 * face + int(hit.point[face] > 1.0)
                npt.assert_array_equal(a.bucket(0, 1)[ly, lx], np.float32(mode.walls[want]))

    def test_invalid_depth(self):
        with pytest.raises(ConfigurationError):
            B.Interior(0.0)
