"""Radiance textures: bake ray-traced radiance into per-texel hemispherical buckets and render by lookup."""

__version__ = "0.1.0"
