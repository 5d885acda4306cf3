"""Geometric and photometric registration utilities.

Covers subpixel translation by phase correlation, NCC-maximizing affine
registration (coarse-to-fine gradient ascent), multiplicative bias-field
fitting on a coarse control grid, and robust brightness-offset estimation.
"""

from __future__ import annotations

import numpy as np
import scipy.ndimage as ndi

from .grid import ImageGrid
from .motion import Affine, MotionModel, Translation, compose
from .warp import sample_image, warp_image


def _lower_median(values: np.ndarray) -> float:
    """Median with the lower-element convention on even-length inputs."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("median of empty set")
    return float(v[(v.size - 1) // 2])


def estimate_translation_phase_correlation(a: ImageGrid, b: ImageGrid) -> np.ndarray:
    """Translation (dx, dy) such that b approximates a shifted by (dx, dy).

    Integer-pixel estimate from the cross-power spectrum peak, refined to
    subpixel precision by a separable quadratic fit around the peak.
    """
    if a.shape != b.shape:
        raise ValueError("phase correlation requires equal image sizes")
    fa = a.data - a.data.mean()
    fb = b.data - b.data.mean()
    if np.max(np.abs(fa)) == 0.0 or np.max(np.abs(fb)) == 0.0:
        raise ValueError("phase correlation is undefined for constant images")
    fa_hat = np.fft.fft2(fa)
    fb_hat = np.fft.fft2(fb)
    cross = fb_hat * np.conj(fa_hat)
    mag = np.abs(cross)
    cross /= np.where(mag < 1e-12, 1.0, mag)
    corr = np.real(np.fft.ifft2(cross))
    h, w = corr.shape
    py, px = np.unravel_index(np.argmax(corr), corr.shape)

    def parabolic(vm: float, v0: float, vp: float) -> float:
        denom = vm - 2.0 * v0 + vp
        if abs(denom) < 1e-12:
            return 0.0
        return float(np.clip(0.5 * (vm - vp) / denom, -0.5, 0.5))

    dx = parabolic(corr[py, (px - 1) % w], corr[py, px], corr[py, (px + 1) % w])
    dy = parabolic(corr[(py - 1) % h, px], corr[py, px], corr[(py + 1) % h, px])
    sx = px + dx
    sy = py + dy
    if sx > w / 2:
        sx -= w
    if sy > h / 2:
        sy -= h
    return np.array([sx, sy])


def normalized_cross_correlation(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Global NCC over the (optionally masked) overlap; 0 for degenerate input."""
    if mask is not None:
        a = a[mask]
        b = b[mask]
    a = a.ravel() - a.mean()
    b = b.ravel() - b.mean()
    denom = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if denom < 1e-12:
        return 0.0
    return float(np.sum(a * b) / denom)


def _downsample2(img: ImageGrid) -> ImageGrid:
    sm = ndi.gaussian_filter(img.data, sigma=1.0, mode="nearest")
    return ImageGrid.from_array(sm[::2, ::2])


def _photometric_correct(img: ImageGrid, params) -> ImageGrid:
    bias = params.bias_field.data
    return ImageGrid.from_array((img.data / bias) - params.offset)


def register_affine_intensity(
    template: ImageGrid,
    reference: ImageGrid,
    photo=None,
    levels: int = 3,
    max_iterations: int = 50,
):
    """Affine model mapping template coordinates to reference coordinates.

    Maximizes the NCC between the template and the backward-warped reference
    by coarse-to-fine gradient ascent with step halving, initialized from
    phase correlation. ``photo`` optionally holds a (template, reference)
    pair of PhotometricParams applied before matching.

    Returns (model, converged_flag).
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    tmpl, ref = template, reference
    if photo is not None:
        tmpl = _photometric_correct(tmpl, photo[0])
        ref = _photometric_correct(ref, photo[1])

    pyr_t, pyr_r = [tmpl], [ref]
    for _ in range(levels - 1):
        if min(pyr_t[-1].shape) < 16:
            break
        pyr_t.append(_downsample2(pyr_t[-1]))
        pyr_r.append(_downsample2(pyr_r[-1]))

    # Initialize from phase correlation at full resolution: template(p) is
    # reference shifted by d, so template coords map to reference as p + d... The
    # estimated d satisfies template ~ reference shifted by d, hence the map
    # template -> reference subtracts d.
    try:
        d = estimate_translation_phase_correlation(ref, tmpl)
    except ValueError:
        d = np.zeros(2)
    scale0 = 2 ** (len(pyr_t) - 1)
    theta = np.array([1.0, 0.0, 0.0, 1.0, -d[0] / scale0, -d[1] / scale0])

    converged = True
    for level in range(len(pyr_t) - 1, -1, -1):
        t_img, r_img = pyr_t[level], pyr_r[level]

        def score(p: np.ndarray) -> float:
            model = Affine([p[0], p[1], p[2], p[3], p[4], p[5]])
            warped = warp_image(r_img, model, interp="bilinear")
            if warped.valid.sum() < 16:
                return -1.0
            return normalized_cross_correlation(t_img.data, warped.image.data, warped.valid)

        # finite-difference steps: matrix entries vs translations
        eps = np.array([1e-3, 1e-3, 1e-3, 1e-3, 1e-2, 1e-2])
        step = 0.5
        current = score(theta)
        it = 0
        while it < max_iterations and step > 1e-6:
            grad = np.zeros(6)
            for i in range(6):
                tp = theta.copy()
                tp[i] += eps[i]
                tm = theta.copy()
                tm[i] -= eps[i]
                grad[i] = (score(tp) - score(tm)) / (2 * eps[i])
            gn = np.linalg.norm(grad * eps)
            if gn < 1e-10:
                break
            trial = theta + step * grad * eps * eps / gn
            val = score(trial)
            if val > current:
                theta = trial
                current = val
                step = min(step * 1.5, 4.0)
            else:
                step *= 0.5
            it += 1
        if it >= max_iterations:
            converged = False
        if level > 0:
            theta = theta.copy()
            theta[4] *= 2.0
            theta[5] *= 2.0

    model = Affine([theta[0], theta[1], theta[2], theta[3], theta[4], theta[5]])
    return model, converged


def estimate_bias_field(frame: ImageGrid, grid_spacing: int) -> ImageGrid:
    """Smooth multiplicative illumination field fitted on a coarse grid.

    Least-squares fit of a bilinear surface defined on control points spaced
    ``grid_spacing`` pixels apart, clamped strictly positive and interpolated
    back to full resolution.
    """
    if grid_spacing < 4:
        raise ValueError("grid_spacing must be >= 4")
    data = frame.data
    if np.max(np.abs(data)) == 0.0:
        raise ValueError("cannot fit a bias field to an all-zero frame")
    h, w = data.shape
    ncx = max(2, int(np.ceil((w - 1) / grid_spacing)) + 1)
    ncy = max(2, int(np.ceil((h - 1) / grid_spacing)) + 1)
    # normalized coordinates of every pixel on the control lattice
    gx = np.linspace(0.0, ncx - 1.0, w)
    gy = np.linspace(0.0, ncy - 1.0, h)
    x0 = np.clip(np.floor(gx).astype(int), 0, ncx - 2)
    y0 = np.clip(np.floor(gy).astype(int), 0, ncy - 2)
    fx = gx - x0
    fy = gy - y0

    # accumulate normal equations A^T A c = A^T b for the bilinear basis
    n_ctrl = ncx * ncy
    ata = np.zeros((n_ctrl, n_ctrl))
    atb = np.zeros(n_ctrl)
    wx = np.stack([1 - fx, fx], axis=1)  # (w, 2)
    wy = np.stack([1 - fy, fy], axis=1)  # (h, 2)
    for dy in range(2):
        for dx in range(2):
            idx_a = (y0 + dy)[:, None] * ncx + (x0 + dx)[None, :]
            wgt_a = wy[:, dy][:, None] * wx[:, dx][None, :]
            np.add.at(atb, idx_a.ravel(), (wgt_a * data).ravel())
            for dy2 in range(2):
                for dx2 in range(2):
                    idx_b = (y0 + dy2)[:, None] * ncx + (x0 + dx2)[None, :]
                    wgt = wgt_a * (wy[:, dy2][:, None] * wx[:, dx2][None, :])
                    np.add.at(ata, (idx_a.ravel(), idx_b.ravel()), wgt.ravel())
    ata += 1e-9 * np.eye(n_ctrl)
    ctrl = np.linalg.solve(ata, atb)

    floor = max(1e-3 * _lower_median(data), 1e-6)
    ctrl = np.maximum(ctrl, floor)

    # bilinear interpolation of control values back to the full raster
    c = ctrl.reshape(ncy, ncx)
    top = c[y0][:, x0] * np.outer(1 - fy, 1 - fx) + c[y0][:, x0 + 1] * np.outer(1 - fy, fx)
    bot = c[y0 + 1][:, x0] * np.outer(fy, 1 - fx) + c[y0 + 1][:, x0 + 1] * np.outer(fy, fx)
    field = top + bot
    return ImageGrid.from_array(np.maximum(field, floor))


def estimate_brightness_offset(frame: ImageGrid, reference: ImageGrid, biases) -> float:
    """Median temporal brightness of frame relative to reference.

    Both inputs are divided by their bias fields before taking medians; the
    lower-median convention keeps the result deterministic.
    """
    if frame.shape != reference.shape:
        raise ValueError("frame and reference must have equal sizes")
    bias_f, bias_r = biases
    corr_f = frame.data / bias_f.data
    corr_r = reference.data / bias_r.data
    return _lower_median(corr_f) - _lower_median(corr_r)
