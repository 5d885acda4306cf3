"""Procedural test scenes for simulations and benchmarks.

The toolkit ships no image corpus; benchmark ground truths are generated
scenes mixing smooth shading, geometric shapes, oriented textures, and fine
lines, which exercise both flat-region denoising and edge reconstruction.
"""

from __future__ import annotations

import numpy as np

from .core.grid import ImageGrid


def make_test_scene(width: int, height: int, seed: int = 0) -> ImageGrid:
    """Natural-texture-like scene: shading + rectangles + disks + stripes."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width]
    u = xs / max(width - 1, 1)
    v = ys / max(height - 1, 1)

    img = 0.35 + 0.3 * (rng.uniform(-1, 1) * u + rng.uniform(-1, 1) * v)
    # low-frequency shading blobs
    for _ in range(3):
        cx, cy = rng.uniform(0, 1, 2)
        sig = rng.uniform(0.15, 0.4)
        img += rng.uniform(-0.2, 0.2) * np.exp(-((u - cx) ** 2 + (v - cy) ** 2) / (2 * sig**2))
    # rectangles with sharp edges
    for _ in range(4):
        x0, y0 = rng.uniform(0, 0.7, 2)
        wd, ht = rng.uniform(0.1, 0.3, 2)
        box = (u >= x0) & (u <= x0 + wd) & (v >= y0) & (v <= y0 + ht)
        img = np.where(box, img + rng.uniform(-0.35, 0.35), img)
    # disks
    for _ in range(3):
        cx, cy = rng.uniform(0.1, 0.9, 2)
        rad = rng.uniform(0.05, 0.18)
        disk = (u - cx) ** 2 + (v - cy) ** 2 <= rad**2
        img = np.where(disk, img + rng.uniform(-0.3, 0.3), img)
    # oriented sinusoid texture patch
    theta = rng.uniform(0, np.pi)
    freq = rng.uniform(4, 9)
    stripes = 0.12 * np.sin(2 * np.pi * freq * (u * np.cos(theta) + v * np.sin(theta)))
    tx0, ty0 = rng.uniform(0, 0.5, 2)
    patch = (u >= tx0) & (u <= tx0 + 0.5) & (v >= ty0) & (v <= ty0 + 0.5)
    img = np.where(patch, img + stripes, img)
    # thin dark lines
    for _ in range(2):
        a = rng.uniform(0, np.pi)
        c = rng.uniform(0.2, 0.8)
        d = np.abs(u * np.cos(a) + v * np.sin(a) - c)
        img -= 0.25 * np.exp(-(d**2) / (2 * (1.2 / max(width, height)) ** 2))
    # broadband fine texture everywhere, as in natural photographs
    import scipy.ndimage as ndi

    tex = ndi.gaussian_filter(rng.standard_normal((height, width)), 0.8)
    img += 0.05 * tex / max(tex.std(), 1e-9)

    lo, hi = img.min(), img.max()
    img = 0.05 + 0.9 * (img - lo) / max(hi - lo, 1e-9)
    return ImageGrid.from_array(img)


def make_vessel_scene(width: int, height: int, seed: int = 0, n_vessels: int = 6) -> ImageGrid:
    """Bright background with dark curvy tubular structures (fundus-like)."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width]
    u = xs / max(width - 1, 1)
    v = ys / max(height - 1, 1)
    backg = 0.75 + 0.15 * np.exp(-((u - 0.5) ** 2 + (v - 0.5) ** 2) / 0.35)

    img = backg.copy()
    for _ in range(n_vessels):
        # quadratic curve across the image with random orientation
        phi = rng.uniform(0, np.pi)
        cu, cv = np.cos(phi), np.sin(phi)
        offset = rng.uniform(0.15, 0.85)
        bend = rng.uniform(-0.6, 0.6)
        t = u * cv - v * cu
        d = np.abs(u * cu + v * cv - offset - bend * (t - 0.5) ** 2)
        width_px = rng.uniform(1.0, 2.2) / max(width, height)
        depth = rng.uniform(0.25, 0.45)
        img -= depth * np.exp(-(d**2) / (2 * (width_px * 1.8) ** 2))
    return ImageGrid.from_array(np.clip(img, 0.02, 0.98))


def make_depth_scene(width: int, height: int, seed: int = 0):
    """Piecewise-smooth range map plus a correlated textured guidance image.

    Returns (range_image, guidance_image); depth discontinuities coincide
    with intensity edges in the guidance while the guidance carries extra
    texture absent from the range data.
    """
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width]
    u = xs / max(width - 1, 1)
    v = ys / max(height - 1, 1)

    depth = 0.55 + 0.15 * (rng.uniform(-1, 1) * u + rng.uniform(-1, 1) * v)
    label = np.zeros((height, width))
    for i in range(3):
        cx, cy = rng.uniform(0.2, 0.8, 2)
        rad = rng.uniform(0.12, 0.25)
        if i % 2 == 0:
            region = (u - cx) ** 2 + (v - cy) ** 2 <= rad**2
        else:
            region = (np.abs(u - cx) <= rad) & (np.abs(v - cy) <= rad * 0.8)
        depth = np.where(region, 0.25 + 0.1 * i + 0.05 * (u - cx), depth)
        label = np.where(region, i + 1.0, label)

    albedo = 0.4 + 0.15 * label
    theta = rng.uniform(0, np.pi)
    texture = 0.1 * np.sin(2 * np.pi * 7 * (u * np.cos(theta) + v * np.sin(theta)))
    texture += 0.05 * rng.standard_normal((height, width))
    import scipy.ndimage as ndi

    texture = ndi.gaussian_filter(texture, 1.0)
    guidance = np.clip(albedo + texture + 0.25 * (1.0 - depth), 0.02, 0.98)
    return ImageGrid.from_array(np.clip(depth, 0.02, 0.98)), ImageGrid.from_array(guidance)
