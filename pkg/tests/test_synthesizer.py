import math

import numpy as np
import numpy.testing as npt
import pytest

from radtex import atlas as A
from radtex import baker as B
from radtex import synthesizer as S
from radtex import tracer as T
from radtex.atlas import AtlasHeader, RadianceAtlas, TexelKind
from radtex.errors import DomainError, ValidationError


def random_atlas(seed=0, w=4, h=4, n=8, kind=TexelKind.F32):
    rng = np.random.default_rng(seed)
    hdr = AtlasHeader(w, h, n, 3, kind)
    if kind is TexelKind.U8:
        return RadianceAtlas(hdr, rng.integers(0, 256, hdr.shape, dtype=np.uint8))
    return RadianceAtlas(hdr, rng.random(hdr.shape, dtype=np.float32))


def head_on(res=33, dist=3.0):
    return S.Camera((0, 0, dist), (0, 0, 0), (0, 1, 0), 40.0, res, res)


class TestCamera:
    def test_centre_pixel_looks_forward(self):
        cam = head_on()
        npt.assert_allclose(cam.pixel_directions()[16, 16], [0, 0, -1], atol=1e-15)

    def test_projection_inverts_rays(self):
        cam = S.Camera((1, 2, 3), (0, 0.5, -1), (0, 1, 0), 55.0, 40, 30)
        d = cam.pixel_directions()
        pts = cam.eye + 2.5 * d
        px = cam.view_to_pixel(cam.to_view(pts))
        xs, ys = np.meshgrid(np.arange(40), np.arange(30))
        npt.assert_allclose(px[..., 0], xs, atol=1e-9)
        npt.assert_allclose(px[..., 1], ys, atol=1e-9)

    @pytest.mark.parametrize(
        "args",
        [
            ((0, 0, 0), (0, 0, 0), (0, 1, 0), 40, 8, 8),
            ((0, 0, 1), (0, 0, 0), (0, 1, 0), 180, 8, 8),
            ((0, 0, 1), (0, 0, 0), (0, 0, 1), 40, 8, 8),
            ((0, 0, 1), (0, 0, 0), (0, 1, 0), 40, 0, 8),
        ],
    )
    def test_invalid(self, args):
        with pytest.raises(ValidationError):
            S.Camera(*args)


class TestMesh:
    def test_quad_layout(self):
        m = S.Mesh.quad()
        assert m.positions.shape == (2, 3, 3)
        npt.assert_array_equal(m.normals, np.broadcast_to([0, 0, 1], (2, 3, 3)))

    def test_cube_normals_outward(self):
        m = S.Mesh.cube((1, 2, 3), 2.0)
        centroid = m.positions.mean(axis=1) - [1, 2, 3]
        assert np.all(np.sum(centroid * m.normals[:, 0], axis=1) > 0)
        assert len(m.positions) == 12

    def test_bad_frame(self):
        m = S.Mesh.quad()
        with pytest.raises(ValidationError):
            S.Mesh(m.positions, m.uvs, m.tangents, m.tangents, m.normals)


class TestRasterize:
    def test_off_frustum(self):
        cam = S.Camera((0, 0, 3), (0, 0, 10), (0, 1, 0), 40.0, 16, 12)
        img = S.rasterize(S.Mesh.quad(), random_atlas(), cam, background=(0.1, 0.2, 0.3))
        assert np.all(img.pixels == [0.1, 0.2, 0.3])
        assert not img.coverage.any()

    def test_head_on_centre(self):
        # odd bucket grid keeps uv 0.5 inside one bucket
        a = random_atlas(1, w=3, h=3)
        img = S.rasterize(S.Mesh.quad(), a, head_on())
        npt.assert_allclose(img.pixels[16, 16], A.sample_plenoptic(a, (0.5, 0.5), (0, 0, 1)), rtol=1e-12)

    def test_vertex_pixel_uv(self):
        patch = B.SurfacePatch((0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1))
        covered, attrs = S.raster_attributes(S.Mesh.quad(patch), head_on())
        assert covered[16, 16]
        npt.assert_allclose(attrs[16, 16, 3:5], [0, 0], atol=1e-4)

    def test_perspective_correct_uv(self):
        patch = B.SurfacePatch((-1, 0, 1), (1, 0, 0), (0, 0, -1), (2, 2))
        cam = S.Camera((0.3, 0.8, 2.0), (0, 0, 0), (0, 1, 0), 60.0, 48, 36)
        covered, attrs = S.raster_attributes(S.Mesh.quad(patch), cam)
        assert covered.sum() > 200
        a = attrs[covered]
        rel = a[:, 0:3] - np.asarray(patch.origin)
        uv = np.stack([rel @ patch.T / 2, rel @ patch.Bt / 2], -1)
        npt.assert_allclose(a[:, 3:5], uv, atol=1e-9)
        # and the pixel ray really passes through the interpolated point
        d = cam.pixel_directions()[covered]
        to_p = a[:, 0:3] - cam.eye
        npt.assert_allclose(np.cross(to_p, d), 0, atol=1e-9)

    def test_nearer_quad_wins(self):
        far = B.SurfacePatch((-1, -1, -1), (1, 0, 0), (0, 1, 0), (2, 2))
        near = B.SurfacePatch((-0.5, -0.5, 0.5), (1, 0, 0), (0, 1, 0), (1, 1))
        for order in ([far, near], [near, far]):
            covered, attrs = S.raster_attributes(S.Mesh.from_patches(order), head_on())
            z = attrs[..., 2]
            assert np.any(covered & (z == -1))
            assert np.all(z[16, 14:19] == 0.5)

    def test_back_face_dropped(self):
        cam = S.Camera((0, 0, -3), (0, 0, 0), (0, 1, 0), 40.0, 17, 17)
        img = S.rasterize(S.Mesh.quad(), random_atlas(), cam)
        assert not img.coverage.any()

    def test_cube_shows_front_faces(self):
        cam = S.Camera((2, 1.5, 3), (0, 0, 0), (0, 1, 0), 45.0, 40, 40)
        covered, attrs = S.raster_attributes(S.Mesh.cube(), cam)
        n = attrs[covered][:, 11:14]
        p = attrs[covered][:, 0:3]
        assert np.all(np.sum(n * (cam.eye - p), -1) >= 0)
        seen = {tuple(v) for v in np.round(n).astype(int)}
        assert seen == {(1, 0, 0), (0, 1, 0), (0, 0, 1)}

    def test_near_plane_clipping(self):
        floor = B.SurfacePatch((-50, 0, 50), (1, 0, 0), (0, 0, -1), (100, 100))
        cam = S.Camera((0, 1, 0), (0, 1, -5), (0, 1, 0), 90.0, 32, 32)
        covered, attrs = S.raster_attributes(S.Mesh.quad(floor), cam)
        assert covered[-1].all()
        assert not covered[0].any()
        a = attrs[covered]
        rel = a[:, 0:3] - np.asarray(floor.origin)
        npt.assert_allclose(a[:, 3:5], np.stack([rel @ floor.T, rel @ floor.Bt], -1) / 100, atol=1e-9)

    def test_bucket_exactness(self):
        # aim a pixel at a bucket centre along a baked texel direction
        scene = T.Scene([T.Sphere((0.2, 0.3, 1.5), 0.4, "m")], {"m": T.Mirror((0.9, 0.7, 0.5))})
        patch = B.SurfacePatch((-1, -1, 0), (1, 0, 0), (0, 1, 0), (2, 2))
        w = h = 4
        n = 8
        a32 = B.bake(scene, patch, w, h, n, B.Mirror())
        a8 = B.bake(scene, patch, w, h, n, B.Mirror(), texel_kind=TexelKind.U8)
        for bx, by, lx, ly in [(1, 2, 3, 5), (0, 0, 7, 0), (3, 1, 4, 4), (2, 3, 1, 6)]:
            p = patch.point_at([(bx + 0.5) / w, (by + 0.5) / h])
            d = patch.to_world(B.texel_direction((lx, ly), n))
            up = (0, 1, 0) if abs(d[1]) < 0.9 else (1, 0, 0)
            cam = S.Camera(tuple(p + 2.0 * d), tuple(p), up, 30.0, 9, 9)
            for atlas, tol in ((a32, 0.0), (a8, 1 / 255)):
                img = S.rasterize(S.Mesh.quad(patch), atlas, cam, texel_filter="nearest")
                want = a32.bucket(bx, by)[ly, lx].astype(np.float64)
                npt.assert_allclose(img.pixels[4, 4], want, rtol=0, atol=tol)

    def test_mask_atlas_renders_grey(self):
        hdr = AtlasHeader(1, 1, 2, 1, TexelKind.MASK)
        a = RadianceAtlas(hdr, np.ones(hdr.shape, np.uint8))
        img = S.rasterize(S.Mesh.quad(), a, head_on())
        assert np.all(img.pixels[img.coverage] == 1)


class TestGroundTruth:
    def test_empty_scene(self):
        cam = S.Camera((0, 0, 0), (1, 0, 0), (0, 1, 0), 90.0, 12, 10)
        img = S.ground_truth(T.Scene(), cam)
        npt.assert_array_equal(img.pixels, T.environment_radiance(cam.pixel_directions()))

    def test_black(self):
        sky = T.CheckerSky((0, 0, 0), (0, 0, 0))
        scene = T.Scene([T.Sphere((0, 0, 0), 1.0, "m")], {"m": T.Lambert((1, 1, 1))}, (), sky)
        img = S.ground_truth(scene, S.Camera((0, 0, -5), (0, 0, 0), (0, 1, 0), 40.0, 16, 16))
        assert np.all(img.pixels == 0)

    def test_mirror_sphere_probes(self):
        tint = np.array([0.9, 0.8, 0.7])
        scene = T.Scene([T.Sphere((0, 0, 0), 1.0, "m")], {"m": T.Mirror(tuple(tint))})
        cam = S.Camera((0, 0, -5), (0, 0, 0), (0, 1, 0), 40.0, 33, 33)
        img = S.ground_truth(scene, cam)
        # centre pixel: normal incidence
        npt.assert_allclose(img.pixels[16, 16], tint * T.environment_radiance([0, 0, -1]))
        # corner pixel misses the sphere
        d = cam.pixel_directions()[0, 0]
        npt.assert_array_equal(img.pixels[0, 0], T.environment_radiance(d))
        # an off-axis pixel: solve the quadratic and reflect by hand
        d = cam.pixel_directions()[12, 20]
        o = cam.eye
        b = o @ d
        t = -b - math.sqrt(b * b - (o @ o - 1))
        p = o + t * d
        r = d - 2 * (d @ p) * p
        npt.assert_allclose(img.pixels[12, 20], tint * T.environment_radiance(r), rtol=1e-12)

    def test_threads_identical(self):
        scene = T.Scene(
            [T.Sphere((0, 0, 0), 1.0, "m"), T.Plane((0, -1, 0), (0, 1, 0), "f")],
            {"m": T.Mirror((0.9, 0.9, 0.9)), "f": T.Lambert((0.5, 0.5, 0.5))},
            [T.PointLight((2, 4, -2), (10, 10, 10))],
        )
        cam = S.Camera((0, 1, -5), (0, 0, 0), (0, 1, 0), 50.0, 24, 18)
        a = S.ground_truth(scene, cam, threads=1)
        b = S.ground_truth(scene, cam, threads=3)
        assert a.pixels.tobytes() == b.pixels.tobytes()


class TestPsnr:
    def test_identical(self):
        x = np.random.default_rng(0).random((8, 8, 3))
        assert S.psnr(S.Image(x), S.Image(x.copy())) == math.inf

    def test_uniform_offset(self):
        x = np.random.default_rng(0).random((8, 8, 3))
        npt.assert_allclose(S.psnr(S.Image(x), S.Image(x + 1 / 255)), 20 * math.log10(255), rtol=1e-9)
        npt.assert_allclose(20 * math.log10(255), 48.13, atol=5e-3)

    def test_checkerboard_inverse(self):
        k = (np.add.outer(np.arange(8), np.arange(8)) % 2).astype(float)
        a = np.repeat(k[..., None], 3, axis=2)
        assert S.psnr(S.Image(a), S.Image(1 - a)) == 0.0

    def test_symmetric_and_monotone(self):
        rng = np.random.default_rng(1)
        x = rng.random((16, 16, 3))
        noise = rng.standard_normal(x.shape)
        vals = [S.psnr(S.Image(x), S.Image(x + s * noise)) for s in (0.001, 0.01, 0.1)]
        assert vals[0] > vals[1] > vals[2]
        y = x + 0.05 * noise
        assert S.psnr(S.Image(x), S.Image(y)) == S.psnr(S.Image(y), S.Image(x))

    def test_mask(self):
        x = np.zeros((2, 2, 3))
        y = x.copy()
        y[0, 0] = 1
        mask = np.array([[False, True], [True, True]])
        assert S.psnr(x, y, mask=mask) == math.inf

    def test_mismatch(self):
        with pytest.raises(DomainError):
            S.psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))

    def test_image_save_load(self, tmp_path):
        x = np.random.default_rng(2).random((5, 7, 3))
        S.Image(x).save(tmp_path / "x.pfm")
        npt.assert_allclose(S.Image.load(tmp_path / "x.pfm").pixels, x, rtol=1e-7)
        S.Image(x).save(tmp_path / "x.ppm")
        back = S.Image.load(tmp_path / "x.ppm").pixels
        assert S.psnr(x, back) > 35
