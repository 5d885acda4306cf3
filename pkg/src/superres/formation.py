"""Generative image formation: PSF, sparse system matrix, degradation simulator.

The system matrix W maps a vectorized high-resolution image to the stacked
low-resolution observations of all frames. Each LR pixel center is warped
into HR coordinates by its frame's motion model; a truncated isotropic
Gaussian PSF spreads its support over the surrounding HR pixels and the
weights are normalized to unit row sums.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .core.fusion import lr_to_hr_coords
from .core.grid import ImageGrid
from .core.motion import DisplacementField, MotionModel, Rigid, Translation
from .core.photometric import PhotometricParams


@dataclass(frozen=True)
class PsfSpec:
    """Isotropic Gaussian PSF; width is sigma in LR-pixel units."""

    width: float
    truncation: float = 3.0
    kind: str = "isotropic-gaussian"

    def __post_init__(self) -> None:
        if self.width <= 0 or self.truncation <= 0:
            raise ValueError("PSF width and truncation must be positive")
        if self.kind != "isotropic-gaussian":
            raise ValueError(f"unsupported PSF kind: {self.kind!r}")


def psf_weight(dx: np.ndarray, psf: PsfSpec, s: float) -> np.ndarray:
    """Unnormalized kernel value exp(-0.5*|dx|^2/(s*sigma)^2) on the HR grid.

    dx is an offset in HR-pixel units (shape (..., 2)); exactly zero beyond
    the truncation radius truncation * s * sigma.
    """
    dx = np.asarray(dx, dtype=np.float64)
    r2 = np.sum(dx * dx, axis=-1)
    ss = s * psf.width
    w = np.exp(-0.5 * r2 / (ss * ss))
    return np.where(r2 <= (psf.truncation * ss) ** 2, w, 0.0)


@dataclass(frozen=True)
class SparseOperator:
    """Row-stochastic sparse map from HR vector to stacked LR observations.

    Rows whose PSF support falls entirely outside the HR raster are retained
    as all-zero rows and flagged invalid, keeping vector shapes stable.
    """

    matrix: sp.csr_matrix = field(repr=False)
    lr_shape: tuple[int, int]  # (height, width) of one LR frame
    hr_shape: tuple[int, int]
    n_frames: int
    valid_rows: np.ndarray = field(repr=False)  # bool, length n_frames * M

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    @property
    def n_invalid_rows(self) -> int:
        return int((~self.valid_rows).sum())


def _hr_coords_of_lr_pixels(
    lr_shape: tuple[int, int], motion: MotionModel, s: float
) -> np.ndarray:
    lh, lw = lr_shape
    ys, xs = np.mgrid[0:lh, 0:lw]
    pts = np.stack([xs.ravel().astype(np.float64), ys.ravel().astype(np.float64)], axis=1)
    ref_lr = motion.transform_points(pts)
    return lr_to_hr_coords(ref_lr, s)


def build_system_matrix(
    lr_shape: tuple[int, int],
    hr_shape: tuple[int, int],
    motions: Sequence[MotionModel],
    psf: PsfSpec,
) -> SparseOperator:
    """Assemble the joint system matrix for a sequence of frames.

    lr_shape and hr_shape are (height, width); the magnification factor is
    inferred from the grid sizes and must be (near) isotropic.
    """
    lh, lw = lr_shape
    hh, hw = hr_shape
    sx, sy = hw / lw, hh / lh
    if abs(sx - sy) > 1e-9:
        raise ValueError("anisotropic magnification is not supported")
    s = sx
    m = lh * lw
    n = hh * hw
    radius = psf.truncation * s * psf.width
    half = int(np.floor(radius))
    offs = np.arange(-half, half + 1)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    ox = ox.ravel()
    oy = oy.ravel()

    rows_all, cols_all, vals_all = [], [], []
    valid = np.ones(len(motions) * m, dtype=bool)
    ss2 = (s * psf.width) ** 2
    r2max = radius * radius
    for k, motion in enumerate(motions):
        centers = _hr_coords_of_lr_pixels(lr_shape, motion, s)  # (m, 2)
        cx = centers[:, 0][:, None]
        cy = centers[:, 1][:, None]
        nx = np.floor(cx).astype(int) + ox[None, :]
        ny = np.floor(cy).astype(int) + oy[None, :]
        ddx = nx - cx
        ddy = ny - cy
        r2 = ddx * ddx + ddy * ddy
        inside = (nx >= 0) & (nx < hw) & (ny >= 0) & (ny < hh) & (r2 <= r2max)
        w = np.where(inside, np.exp(-0.5 * r2 / ss2), 0.0)
        rowsum = w.sum(axis=1)
        ok = rowsum > 0.0
        valid[k * m : (k + 1) * m] = ok
        w[ok] /= rowsum[ok][:, None]
        r_idx, c_off = np.nonzero(w)
        rows_all.append(r_idx + k * m)
        cols_all.append(ny[r_idx, c_off] * hw + nx[r_idx, c_off])
        vals_all.append(w[r_idx, c_off])

    if not np.any(valid):
        raise ValueError("system matrix has no valid rows (no HR support)")
    mat = sp.csr_matrix(
        (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
        shape=(len(motions) * m, n),
    )
    mat.sum_duplicates()
    return SparseOperator(
        matrix=mat,
        lr_shape=lr_shape,
        hr_shape=hr_shape,
        n_frames=len(motions),
        valid_rows=valid,
    )


def apply_forward(op: SparseOperator, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != op.n_cols:
        raise ValueError(f"expected length {op.n_cols}, got {x.size}")
    return op.matrix @ x


def apply_adjoint(op: SparseOperator, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64).ravel()
    if r.size != op.n_rows:
        raise ValueError(f"expected length {op.n_rows}, got {r.size}")
    return op.matrix.T @ r


@dataclass(frozen=True)
class DegradationConfig:
    """Knobs of the simulated acquisition chain."""

    magnification: float = 2.0
    psf: PsfSpec = PsfSpec(width=0.5)
    gaussian_sigma: float = 0.0
    salt_pepper_fraction: float = 0.0
    poisson: bool = False
    photometric_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.magnification < 1.0:
            raise ValueError("magnification must be >= 1")
        if not 0.0 <= self.salt_pepper_fraction <= 1.0:
            raise ValueError("salt_pepper_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class SimulatedDataset:
    ground_truth: ImageGrid
    frames: list[ImageGrid]
    true_motions: list[MotionModel]
    true_photometrics: list[PhotometricParams]
    config: DegradationConfig


def _degrade(clean: np.ndarray, config: DegradationConfig, rng: np.random.Generator) -> np.ndarray:
    out = clean
    if config.poisson:
        # nominal 255-photon full scale
        out = rng.poisson(np.clip(out, 0.0, None) * 255.0) / 255.0
    if config.gaussian_sigma > 0:
        out = out + rng.normal(0.0, config.gaussian_sigma, size=out.shape)
    if config.salt_pepper_fraction > 0:
        hit = rng.random(out.shape) < config.salt_pepper_fraction
        salt = rng.random(out.shape) < 0.5
        out = np.where(hit, np.where(salt, 1.0, 0.0), out)
    return np.clip(out, 0.0, 1.0)


def simulate_sequence(
    ground_truth: ImageGrid,
    n_frames: int,
    motion_law: dict | None = None,
    config: DegradationConfig = DegradationConfig(),
) -> SimulatedDataset:
    """Project a ground truth through the formation model K times.

    motion_law keys: translation_range (LR px, uniform +/-), rotation_range
    (degrees, uniform +/-), affine (bool, adds small random shear/scale).
    Frame 0 is the reference with identity motion. Deterministic given
    config.seed.
    """
    if n_frames < 1:
        raise ValueError("need at least one frame")
    law = {"translation_range": 1.0, "rotation_range": 0.0, "affine": False}
    law.update(motion_law or {})
    rng = np.random.default_rng(config.seed)
    s = config.magnification
    hh, hw = ground_truth.shape
    lh, lw = int(round(hh / s)), int(round(hw / s))
    if abs(lh * s - hh) > 1e-9 or abs(lw * s - hw) > 1e-9:
        raise ValueError("ground-truth size must be an exact multiple of the magnification")

    motions: list[MotionModel] = []
    for k in range(n_frames):
        if k == 0:
            motions.append(Rigid(0.0, 0.0, 0.0) if law["rotation_range"] else Translation(0.0, 0.0))
            continue
        t = rng.uniform(-law["translation_range"], law["translation_range"], size=2)
        if law["rotation_range"]:
            ang = np.deg2rad(rng.uniform(-law["rotation_range"], law["rotation_range"]))
            motions.append(Rigid(ang, t[0], t[1]))
        else:
            motions.append(Translation(t[0], t[1]))

    # photometric corruption of up to two randomly selected non-reference frames
    photometrics = [PhotometricParams.neutral(lw, lh) for _ in range(n_frames)]
    if config.photometric_sigma > 0 and n_frames > 1:
        n_corrupt = min(2, n_frames - 1)
        chosen = rng.choice(np.arange(1, n_frames), size=n_corrupt, replace=False)
        sp_ = config.photometric_sigma
        for k in chosen:
            gain = rng.uniform(1.0 - sp_ / 2.0, 1.0 + sp_ / 2.0)
            offset = rng.uniform(-sp_ / 2.0, sp_ / 2.0)
            photometrics[k] = PhotometricParams.uniform(lw, lh, gain, offset)

    op = build_system_matrix((lh, lw), (hh, hw), motions, config.psf)
    x = ground_truth.data.ravel()
    stacked = apply_forward(op, x)
    frames = []
    m = lh * lw
    for k in range(n_frames):
        clean = stacked[k * m : (k + 1) * m].reshape(lh, lw)
        clean = photometrics[k].apply(ImageGrid.from_array(clean)).data
        frames.append(ImageGrid.from_array(_degrade(clean, config, rng)))
    return SimulatedDataset(
        ground_truth=ground_truth,
        frames=frames,
        true_motions=motions,
        true_photometrics=photometrics,
        config=config,
    )


def corrupt_flow(field: DisplacementField, sigma: float, seed: int) -> DisplacementField:
    """Add i.i.d. zero-mean Gaussian noise to both displacement components."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return field
    rng = np.random.default_rng(seed)
    return DisplacementField(
        field.width,
        field.height,
        field.du + rng.normal(0.0, sigma, size=field.du.shape),
        field.dv + rng.normal(0.0, sigma, size=field.dv.shape),
    )


def gaussian_blur(image: ImageGrid, sigma: float) -> ImageGrid:
    """Gaussian low-pass used by commuting checks and guidance simulation."""
    import scipy.ndimage as ndi

    return ImageGrid.from_array(ndi.gaussian_filter(image.data, sigma=sigma, mode="nearest"))
