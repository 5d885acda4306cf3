"""Backward image warping with a validity mask.

Every output pixel is sampled at its transformed location in the source
image. Samples falling outside the source raster are flagged invalid in a
parallel boolean mask instead of being extrapolated; downstream consumers
drop invalid observations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ImageGrid
from .motion import MotionModel

INTERP_MODES = ("nearest", "bilinear", "bicubic")


@dataclass(frozen=True)
class WarpedImage:
    image: ImageGrid
    valid: np.ndarray  # bool (height, width), True where the sample was in bounds


def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Catmull-Rom cubic (a = -0.5), interpolating at integer offsets."""
    a = -0.5
    at = np.abs(t)
    at2 = at * at
    at3 = at2 * at
    w = np.where(
        at <= 1.0,
        (a + 2.0) * at3 - (a + 3.0) * at2 + 1.0,
        np.where(at <= 2.0, a * at3 - 5.0 * a * at2 + 8.0 * a * at - 4.0 * a, 0.0),
    )
    return w


def sample_image(data: np.ndarray, x: np.ndarray, y: np.ndarray, interp: str):
    """Sample data at fractional (x, y); returns (values, valid mask).

    Valid means the location lies inside [0, w-1] x [0, h-1]; kernel taps
    beyond the border use replicated edge values (interpolation only, never
    extrapolation of out-of-bounds sample locations).
    """
    h, w = data.shape
    valid = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    xc = np.clip(x, 0.0, w - 1.0)
    yc = np.clip(y, 0.0, h - 1.0)

    if interp == "nearest":
        xi = np.clip(np.rint(xc).astype(int), 0, w - 1)
        yi = np.clip(np.rint(yc).astype(int), 0, h - 1)
        return data[yi, xi], valid

    if interp == "bilinear":
        x0 = np.clip(np.floor(xc).astype(int), 0, w - 1)
        y0 = np.clip(np.floor(yc).astype(int), 0, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
        fx = xc - x0
        fy = yc - y0
        top = data[y0, x0] * (1 - fx) + data[y0, x1] * fx
        bot = data[y1, x0] * (1 - fx) + data[y1, x1] * fx
        return top * (1 - fy) + bot * fy, valid

    if interp == "bicubic":
        x0 = np.floor(xc).astype(int)
        y0 = np.floor(yc).astype(int)
        fx = xc - x0
        fy = yc - y0
        out = np.zeros_like(xc)
        wsum = np.zeros_like(xc)
        for dy in range(-1, 3):
            wy = _cubic_kernel(fy - dy)
            yy = np.clip(y0 + dy, 0, h - 1)
            for dx in range(-1, 3):
                wx = _cubic_kernel(fx - dx)
                xx = np.clip(x0 + dx, 0, w - 1)
                wgt = wx * wy
                out += wgt * data[yy, xx]
                wsum += wgt
        return out / np.where(wsum == 0.0, 1.0, wsum), valid

    raise ValueError(f"unknown interpolation mode: {interp!r}")


def warp_image(
    src: ImageGrid,
    model: MotionModel,
    interp: str = "bilinear",
    out_shape: tuple[int, int] | None = None,
) -> WarpedImage:
    """Backward-warp src: output pixel p takes the value of src at model(p).

    out_shape is (height, width) of the output grid; defaults to src's.
    """
    if interp not in INTERP_MODES:
        raise ValueError(f"interp must be one of {INTERP_MODES}")
    oh, ow = out_shape if out_shape is not None else (src.height, src.width)
    ys, xs = np.mgrid[0:oh, 0:ow]
    pts = np.stack([xs.ravel().astype(np.float64), ys.ravel().astype(np.float64)], axis=1)
    q = model.transform_points(pts)
    vals, valid = sample_image(src.data, q[:, 0], q[:, 1], interp)
    vals = np.where(valid, vals, 0.0)
    return WarpedImage(
        image=ImageGrid(width=ow, height=oh, data=vals.reshape(oh, ow)),
        valid=valid.reshape(oh, ow),
    )


def resize_image(src: ImageGrid, width: int, height: int, interp: str = "bicubic") -> ImageGrid:
    """Resample to a new size using pixel-area alignment."""
    sx = src.width / width
    sy = src.height / height
    xs = (np.arange(width) + 0.5) * sx - 0.5
    ys = (np.arange(height) + 0.5) * sy - 0.5
    gx, gy = np.meshgrid(xs, ys)
    vals, _ = sample_image(src.data, gx.ravel(), gy.ravel(), interp)
    return ImageGrid(width=width, height=height, data=vals.reshape(height, width))
