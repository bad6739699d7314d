"""``radtex`` command line: bake, render, truth, compare, inspect, selftest.

Exit codes: 0 success, 1 usage, 2 file or format problem, 3 validation or
domain problem. Errors are reported on stderr as a single line.
"""

import argparse
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import atlas as A
from . import baker, mapping, synthesizer, tracer
from .errors import ConfigurationError, DomainError, FormatError, ValidationError

EXIT_OK, EXIT_USAGE, EXIT_FILE, EXIT_INVALID = 0, 1, 2, 3


class UsageError(Exception):
    pass


class SceneSyntaxError(FormatError):
    pass


# ---------------------------------------------------------------- scene files

@dataclass
class SceneFile:
    scene: tracer.Scene
    patches: list = field(default_factory=list)

    @property
    def patch(self):
        if len(self.patches) != 1:
            raise ValidationError(f"scene must define exactly one patch (found {len(self.patches)})")
        return self.patches[0]


_ARITY = {"sphere": 5, "plane": 7, "box": 7, "light": 6, "env": 1}


def parse_scene(text, name="<scene>"):
    materials, prims, lights, patches = {}, [], [], []

    def nums(tokens, lineno):
        try:
            vals = [float(t) for t in tokens]
        except ValueError:
            raise SceneSyntaxError(f"{name}:{lineno}: expected numbers, got {' '.join(tokens)!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"{name}:{lineno}: non-finite number")
        return vals

    def material(mid, lineno):
        if mid not in materials:
            raise ValidationError(f"{name}:{lineno}: material {mid!r} used before definition")
        return mid

    for lineno, raw in enumerate(text.splitlines(), 1):
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        kw, args = tok[0], tok[1:]
        if kw == "mat":
            if len(args) != 5 or args[1] not in ("lambert", "mirror"):
                raise SceneSyntaxError(f"{name}:{lineno}: usage: mat <id> lambert|mirror r g b")
            rgb = tuple(nums(args[2:], lineno))
            materials[args[0]] = tracer.Lambert(rgb) if args[1] == "lambert" else tracer.Mirror(rgb)
        elif kw in _ARITY:
            if len(args) != _ARITY[kw]:
                raise SceneSyntaxError(f"{name}:{lineno}: {kw} takes {_ARITY[kw]} arguments")
            if kw == "sphere":
                v = nums(args[:4], lineno)
                prims.append(tracer.Sphere(tuple(v[:3]), v[3], material(args[4], lineno)))
            elif kw == "plane":
                v = nums(args[:6], lineno)
                nrm = np.asarray(v[3:6])
                if not np.linalg.norm(nrm) > 0:
                    raise ValidationError(f"{name}:{lineno}: plane normal is zero")
                nrm = tuple(nrm / np.linalg.norm(nrm))
                prims.append(tracer.Plane(tuple(v[:3]), nrm, material(args[6], lineno)))
            elif kw == "box":
                v = nums(args[:6], lineno)
                prims.append(tracer.Box(tuple(v[:3]), tuple(v[3:6]), material(args[6], lineno)))
            elif kw == "light":
                v = nums(args, lineno)
                lights.append(tracer.PointLight(tuple(v[:3]), tuple(v[3:])))
            elif args != ["default"]:
                raise SceneSyntaxError(f"{name}:{lineno}: only 'env default' is supported")
        elif kw == "patch":
            if len(args) not in (11, 12):
                raise SceneSyntaxError(f"{name}:{lineno}: usage: patch ox oy oz tx ty tz bx by bz ex ey [mat]")
            v = nums(args[:11], lineno)
            mat = material(args[11], lineno) if len(args) == 12 else None
            patches.append(baker.SurfacePatch(tuple(v[0:3]), tuple(v[3:6]), tuple(v[6:9]), tuple(v[9:11]), mat))
        else:
            raise SceneSyntaxError(f"{name}:{lineno}: unknown directive {kw!r}")
    return SceneFile(tracer.Scene(prims, materials, lights), patches)


def load_scene(path):
    with open(path, encoding="utf-8") as f:
        return parse_scene(f.read(), str(path))


# ------------------------------------------------------------ argument types

def _floats(text, count, what):
    parts = text.split(",")
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise UsageError(f"bad {what}: {text!r}") from None
    if len(vals) != count:
        raise UsageError(f"{what} needs {count} comma-separated numbers, got {text!r}")
    return vals


def parse_res(text):
    parts = text.lower().split("x")
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise UsageError(f"resolution must look like WxH, got {text!r}")
    return int(parts[0]), int(parts[1])


def parse_camera(text, res):
    parts = text.split(":")
    if len(parts) != 4:
        raise UsageError("camera must be px,py,pz:lx,ly,lz:ux,uy,uz:vfov")
    pos, look, up = (_floats(p, 3, "camera vector") for p in parts[:3])
    (vfov,) = _floats(parts[3], 1, "vfov")
    return synthesizer.Camera(pos, look, up, vfov, *res)


def parse_bucket(text):
    vals = _floats(text, 2, "bucket")
    if not all(v.is_integer() for v in vals):
        raise UsageError(f"bucket indices must be integers, got {text!r}")
    return int(vals[0]), int(vals[1])


# ----------------------------------------------------------------- commands

def _mode(args):
    if args.mode == "mirror":
        return baker.Mirror()
    if args.mode == "shaded":
        return baker.Shaded()
    if args.mode == "shadow":
        return baker.ShadowMask()
    if args.interior_depth is None:
        raise UsageError("--mode interior needs --interior-depth")
    return baker.Interior(args.interior_depth)


def cmd_bake(args):
    sf = load_scene(args.scene)
    w, h = parse_res(args.grid)
    kind = A.TexelKind.parse(args.texel)
    atlas = baker.bake(sf.scene, sf.patch, w, h, args.bucket, _mode(args), kind,
                       threads=args.threads)
    A.save(atlas, args.out)
    print(f"wrote {args.out}: {w}x{h} buckets of {args.bucket}x{args.bucket} ({atlas.header.texel_kind.name.lower()})")


def cmd_render(args):
    camera = parse_camera(args.camera, parse_res(args.res))
    atlas = A.load(args.atlas)
    if args.mesh == "cube":
        mesh = synthesizer.Mesh.cube()
    elif args.scene:
        mesh = synthesizer.Mesh.quad(load_scene(args.scene).patch)
    else:
        mesh = synthesizer.Mesh.quad()
    mode = A.BUCKET_BLEND if args.blend_buckets else A.NEAREST_BUCKET
    bg = _floats(args.background, 3, "background")
    img = synthesizer.rasterize(mesh, atlas, camera, bg, mode)
    img.save(args.out, pfm=args.pfm)


def cmd_truth(args):
    camera = parse_camera(args.camera, parse_res(args.res))
    sf = load_scene(args.scene)
    img = synthesizer.ground_truth(sf.scene, camera, threads=args.threads)
    img.save(args.out, pfm=args.pfm)


def cmd_compare(args):
    a = synthesizer.Image.load(args.a)
    b = synthesizer.Image.load(args.b)
    db = synthesizer.psnr(a, b, args.peak)
    print("psnr_db=inf" if math.isinf(db) else f"psnr_db={db:.6f}")


def cmd_inspect(args):
    atlas = A.load(args.atlas)
    bx, by = parse_bucket(args.bucket)
    A.export_bucket(atlas, bx, by, args.out)


def selftest(samples=100_000, seed=0, out=None):
    """Quick numeric checks of the mapping; returns True when all pass."""
    out = out or sys.stdout
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((samples, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v[:, 2] = np.abs(v[:, 2])
    disc = mapping.project_equisolid(v)
    checks = []

    err = np.abs(mapping.unproject_equisolid(disc) - v).max()
    checks.append(("round trip (float64)", err < 1e-6, f"max err {err:.2e}"))
    v32 = v.astype(np.float32)
    err32 = np.abs(mapping.unproject_equisolid(mapping.project_equisolid(v32)) - v32).max()
    checks.append(("round trip (float32)", err32 < 1e-4, f"max err {err32:.2e}"))
    theta = np.arccos(np.clip(v[:, 2], -1, 1))
    dev = np.abs(np.linalg.norm(disc, axis=1) - math.sqrt(2) * np.sin(theta / 2)).max()
    checks.append(("radius law", dev < 1e-6, f"max dev {dev:.2e}"))
    sq = rng.uniform(-1, 1, (samples, 2))
    err_sq = np.abs(mapping.disc_to_square(mapping.square_to_disc(sq)) - sq).max()
    checks.append(("square round trip", err_sq < 1e-9, f"max err {err_sq:.2e}"))

    # the hemisphere lands on the unit disc; uniform directions fill it uniformly
    rad = np.linalg.norm(disc, axis=1)
    for r in (0.25, 0.5, 0.75):
        frac = np.mean(rad <= r)
        se = math.sqrt(r * r * (1 - r * r) / samples)
        checks.append((f"equal area r={r}", abs(frac - r * r) < 3 * se, f"{frac:.4f} vs {r * r:.4f}"))

    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}", file=out)
    return all(ok for _, ok, _ in checks)


def cmd_selftest(args):
    if not selftest():
        return EXIT_INVALID
    return EXIT_OK


# ------------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="radtex", description="Bake, render and compare radiance atlases.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    b = sub.add_parser("bake", help="bake a radiance atlas over the scene's patch")
    b.add_argument("--scene", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--grid", required=True, help="buckets, WxH")
    b.add_argument("--bucket", required=True, type=int, help="bucket resolution n")
    b.add_argument("--mode", required=True, choices=["mirror", "shaded", "shadow", "interior"])
    b.add_argument("--interior-depth", type=float)
    b.add_argument("--texel", default="f32", choices=["f32", "u8"])
    b.add_argument("--threads", type=int, default=1)
    b.set_defaults(func=cmd_bake)

    r = sub.add_parser("render", help="rasterize a mesh carrying an atlas")
    r.add_argument("--atlas", required=True)
    r.add_argument("--camera", required=True)
    r.add_argument("--res", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--blend-buckets", action="store_true")
    r.add_argument("--pfm", action="store_true")
    r.add_argument("--scene", help="take the quad from this scene's patch")
    r.add_argument("--mesh", default="quad", choices=["quad", "cube"])
    r.add_argument("--background", default="0,0,0")
    r.set_defaults(func=cmd_render)

    t = sub.add_parser("truth", help="ray trace the scene directly")
    t.add_argument("--scene", required=True)
    t.add_argument("--camera", required=True)
    t.add_argument("--res", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--pfm", action="store_true")
    t.add_argument("--threads", type=int, default=1)
    t.set_defaults(func=cmd_truth)

    c = sub.add_parser("compare", help="PSNR between two images")
    c.add_argument("--a", required=True)
    c.add_argument("--b", required=True)
    c.add_argument("--peak", type=float, default=1.0)
    c.set_defaults(func=cmd_compare)

    i = sub.add_parser("inspect", help="export one bucket as an image")
    i.add_argument("--atlas", required=True)
    i.add_argument("--bucket", required=True, help="BX,BY")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_inspect)

    s = sub.add_parser("selftest", help="run the built-in mapping checks")
    s.set_defaults(func=cmd_selftest)
    return p


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command (bake, render, truth, compare, inspect, selftest)")
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args) or EXIT_OK
    except UsageError as e:
        print(f"radtex: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as e:
        print(f"radtex: {e}", file=sys.stderr)
        return EXIT_FILE
    except (ValidationError, DomainError, ConfigurationError, ValueError) as e:
        print(f"radtex: {e}", file=sys.stderr)
        return EXIT_INVALID


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
