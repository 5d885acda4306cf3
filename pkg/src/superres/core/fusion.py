"""Motion-compensated temporal median fusion.

Produces an outlier-insensitive initial guess for super-resolution: every
high-resolution pixel takes the median of the motion-compensated, upsampled
low-resolution frame values covering it.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .grid import ImageGrid
from .motion import MotionModel
from .warp import sample_image


def lr_to_hr_coords(x: np.ndarray, s: float) -> np.ndarray:
    """Map low-resolution pixel-index coordinates to the HR index grid."""
    return (np.asarray(x, dtype=np.float64) + 0.5) * s - 0.5


def hr_to_lr_coords(x: np.ndarray, s: float) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) + 0.5) / s - 0.5


def _lower_median_axis0(values: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel lower median over axis 0, restricted to valid entries."""
    k, n = values.shape
    filled = np.where(valid, values, np.inf)
    order = np.sort(filled, axis=0)
    counts = valid.sum(axis=0)
    has_any = counts > 0
    idx = np.maximum((counts - 1) // 2, 0)
    med = order[idx, np.arange(n)]
    med = np.where(has_any, med, 0.0)
    return med, has_any


def temporal_median_fusion(
    frames: Sequence[ImageGrid],
    motions: Sequence[MotionModel],
    s: float,
) -> ImageGrid:
    """Median of motion-compensated frames on the s-times finer grid.

    Each frame k is sampled (bicubic) at the location its motion model maps
    to the reference HR pixel; pixels with no valid contribution fall back to
    the upsampled reference frame.
    """
    if len(frames) == 0:
        raise ValueError("temporal median fusion needs at least one frame")
    if len(frames) != len(motions):
        raise ValueError("frames and motions must align")
    lh, lw = frames[0].shape
    hw = int(round(lw * s))
    hh = int(round(lh * s))
    ys, xs = np.mgrid[0:hh, 0:hw]
    p_ref = np.stack(
        [hr_to_lr_coords(xs.ravel(), s), hr_to_lr_coords(ys.ravel(), s)], axis=1
    )

    vals = np.empty((len(frames), p_ref.shape[0]))
    valid = np.empty((len(frames), p_ref.shape[0]), dtype=bool)
    for k, (frame, motion) in enumerate(zip(frames, motions)):
        if frame.shape != (lh, lw):
            raise ValueError("all frames must share one size")
        p_k = motion.inverse().transform_points(p_ref)
        v, ok = sample_image(frame.data, p_k[:, 0], p_k[:, 1], "bicubic")
        vals[k] = v
        valid[k] = ok

    med, has_any = _lower_median_axis0(vals, valid)
    if not np.all(has_any):
        ref_vals, _ = sample_image(frames[0].data, p_ref[:, 0], p_ref[:, 1], "bicubic")
        med = np.where(has_any, med, ref_vals)
    return ImageGrid(width=hw, height=hh, data=med.reshape(hh, hw))
