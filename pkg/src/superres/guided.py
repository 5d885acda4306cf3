"""Guidance-driven multi-sensor super-resolution.

A high-resolution guidance modality steers reconstruction of a low-resolution
input modality: optical flow estimated on guidance frames is rescaled and
median-resampled onto the input grid, local guidance similarity gates
observation confidence, local mutual information adapts the regularization
at guidance edges, and MSAC fits per-frame range-correction parameters for
out-of-plane motion.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.ndimage as ndi

from .core.fusion import temporal_median_fusion
from .core.grid import ImageGrid, devectorize
from .core.motion import DenseMotion, DisplacementField, MotionModel, Translation
from .core.register import estimate_translation_phase_correlation
from .core.warp import resize_image, warp_image
from .estimation import SolverOptions, scg_minimize
from .formation import PsfSpec, SparseOperator, apply_adjoint, apply_forward, build_system_matrix
from .report import IterationRecord, ReconstructionReport
from .robust import weighted_mad_scale

FlowEstimator = Callable[[ImageGrid, ImageGrid], DisplacementField]
"""Callback producing the displacement field of a frame toward the reference."""


@dataclass(frozen=True)
class FusionMapping:
    """Integer guidance-to-input pixel-size ratio; each input pixel owns an
    sx-by-sy block of guidance pixels."""

    scale_x: int
    scale_y: int

    def __post_init__(self) -> None:
        if self.scale_x < 1 or self.scale_y < 1:
            raise ValueError("fusion scales must be >= 1")

    def block_view(self, guidance: np.ndarray, lr_shape: tuple[int, int]) -> np.ndarray:
        """Reshape guidance pixels into (lh, lw, sy*sx) blocks."""
        lh, lw = lr_shape
        gh, gw = guidance.shape
        if gh != lh * self.scale_y or gw != lw * self.scale_x:
            raise ValueError("guidance size must equal input size times the fusion scale")
        b = guidance.reshape(lh, self.scale_y, lw, self.scale_x)
        return b.transpose(0, 2, 1, 3).reshape(lh, lw, self.scale_y * self.scale_x)


@dataclass(frozen=True)
class RangeCorrectionParams:
    gamma_m: float = 1.0
    gamma_a: float = 0.0
    success: bool = True


@dataclass(frozen=True)
class GuidedConfig:
    contrast_factor: float = 0.06  # eta
    patch_size: int = 5  # weighting patch a (odd)
    lmi_patch_size: int = 11  # separate window for the joint histogram
    lmi_bins: int = 16
    ncc_threshold: float = 0.5  # rho_0
    huber_tau: float = 5e-4
    lam: float = 0.08
    c_bias: float = 0.02
    c_local: float = 2.0
    t_msac: int = 200
    t_scg: int = 50
    t_irw: int = 5
    tol: float = 1e-3
    edge_low: float = 0.06
    edge_high: float = 0.15
    seed: int = 0

    def __post_init__(self) -> None:
        if self.contrast_factor <= 0:
            raise ValueError("contrast factor must be positive")
        if self.patch_size % 2 == 0 or self.lmi_patch_size % 2 == 0:
            raise ValueError("patch sizes must be odd")
        if not -1.0 <= self.ncc_threshold <= 1.0:
            raise ValueError("NCC threshold must lie in [-1, 1]")


def filter_displacement_field(
    flow_guidance: DisplacementField, input_dims: tuple[int, int], fusion: FusionMapping
) -> DisplacementField:
    """Rescale guidance displacements to LR-pixel units, then take the
    component-wise median over each fusion block."""
    lh, lw = input_dims
    out = []
    for comp, scale in ((flow_guidance.du, fusion.scale_x), (flow_guidance.dv, fusion.scale_y)):
        rescaled = comp / scale
        blocks = fusion.block_view(rescaled, (lh, lw))
        out.append(np.median(blocks, axis=2))
    return DisplacementField(lw, lh, out[0], out[1])


def local_ncc_map(a: ImageGrid, b: ImageGrid, fusion: FusionMapping, lr_shape: tuple[int, int]) -> ImageGrid:
    """Block-wise NCC between two guidance images, one value per input pixel.

    Zero-variance blocks score 0 (uninformative).
    """
    if a.shape != b.shape:
        raise ValueError("NCC inputs must have equal sizes")
    ba = fusion.block_view(a.data, lr_shape)
    bb = fusion.block_view(b.data, lr_shape)
    ma = ba.mean(axis=2, keepdims=True)
    mb = bb.mean(axis=2, keepdims=True)
    da = ba - ma
    db = bb - mb
    num = np.sum(da * db, axis=2)
    den = np.sqrt(np.sum(da * da, axis=2) * np.sum(db * db, axis=2))
    ncc = np.where(den < 1e-12, 0.0, num / np.maximum(den, 1e-300))
    return ImageGrid.from_array(np.clip(ncc, -1.0, 1.0))


def guidance_confidence(
    frames_g: Sequence[ImageGrid],
    warped_reference_g: Sequence[ImageGrid],
    rho0: float,
    fusion: FusionMapping,
    lr_shape: tuple[int, int],
) -> list[np.ndarray]:
    """Per-frame confidence from local guidance similarity: 0 below the NCC
    threshold, (NCC + 1) / 2 at or above it."""
    weights = []
    for g, wref in zip(frames_g, warped_reference_g):
        ncc = local_ncc_map(g, wref, fusion, lr_shape).data
        weights.append(np.where(ncc >= rho0, 0.5 * ncc + 0.5, 0.0).ravel())
    return weights


def detect_edges(image: ImageGrid, low: float, high: float) -> np.ndarray:
    """Gradient-magnitude hysteresis edge map (Canny-style, no thinning)."""
    gx = ndi.sobel(image.data, axis=1, mode="nearest") / 8.0
    gy = ndi.sobel(image.data, axis=0, mode="nearest") / 8.0
    mag = np.hypot(gx, gy)
    strong = mag >= high
    weak = mag >= low
    labels, _ = ndi.label(weak, structure=np.ones((3, 3)))
    keep = np.unique(labels[strong])
    keep = keep[keep != 0]
    return np.isin(labels, keep)


def _normalized_lmi(patch_a: np.ndarray, patch_b: np.ndarray, bins: int) -> float:
    """Entropy-normalized local mutual information of two patches, in [0, 1]."""
    ha, _ = np.histogramdd(
        np.stack([patch_a.ravel(), patch_b.ravel()], axis=1),
        bins=bins,
        range=[(0.0, 1.0), (0.0, 1.0)],
    )
    total = ha.sum()
    if total == 0:
        return 0.0
    pj = ha / total
    pa = pj.sum(axis=1)
    pb = pj.sum(axis=0)
    nz = pj > 0
    mi = float(np.sum(pj[nz] * np.log(pj[nz] / (pa[:, None] * pb[None, :])[nz])))
    h_joint = -float(np.sum(pj[nz] * np.log(pj[nz])))
    if h_joint <= 0:
        return 0.0
    return max(mi / h_joint, 0.0)


def adaptive_reg_weights(
    x_upsampled: ImageGrid,
    guidance_fused: ImageGrid,
    edge_map: np.ndarray,
    eta: float,
    lmi_patch: int,
    hr_shape: tuple[int, int],
    bins: int = 16,
) -> np.ndarray:
    """Edge pixels get weight exp(-S/eta) with S the normalized LMI between
    the current estimate and the guidance; 1 elsewhere. Resampled bicubically
    to the HR grid, clipped to (0, 1]."""
    if x_upsampled.shape != guidance_fused.shape:
        raise ValueError("estimate must be resampled to the guidance size")
    gh, gw = guidance_fused.shape
    half = lmi_patch // 2
    w = np.ones((gh, gw))
    a = x_upsampled.data
    b = guidance_fused.data
    # normalize intensities into [0, 1] for the shared histogram range
    def norm01(img):
        lo, hi = img.min(), img.max()
        return (img - lo) / max(hi - lo, 1e-12)

    an = norm01(a)
    bn = norm01(b)
    ys, xs = np.nonzero(edge_map)
    for y, x in zip(ys, xs):
        y0, y1 = max(0, y - half), min(gh, y + half + 1)
        x0, x1 = max(0, x - half), min(gw, x + half + 1)
        s = _normalized_lmi(an[y0:y1, x0:x1], bn[y0:y1, x0:x1], bins)
        w[y, x] = np.exp(-s / eta)
    hr_h, hr_w = hr_shape
    wmap = resize_image(ImageGrid.from_array(w), hr_w, hr_h, "bicubic").data
    return np.clip(wmap, 1e-6, 1.0).ravel()


def msac_range_correction(
    y_ref: np.ndarray,
    y_warped: np.ndarray,
    sigma: float,
    t_msac: int = 200,
    seed: int = 0,
    valid: np.ndarray | None = None,
) -> RangeCorrectionParams:
    """MSAC line fit y_warped ~ gamma_m * y_ref + gamma_a.

    Two-point hypotheses scored by a truncated quadratic with threshold
    1.96 * sigma; only improving objectives are accepted, starting from the
    identity model (1, 0); the best inlier set gets a least-squares refit.
    """
    yr = np.asarray(y_ref, dtype=np.float64).ravel()
    yw = np.asarray(y_warped, dtype=np.float64).ravel()
    if valid is not None:
        keep = np.asarray(valid, dtype=bool).ravel()
        yr = yr[keep]
        yw = yw[keep]
    if yr.size < 2:
        raise ValueError("MSAC needs at least two sample pairs")
    delta2 = (1.96 * sigma) ** 2
    rng = np.random.default_rng(seed)

    def objective(gm: float, ga: float) -> tuple[float, np.ndarray]:
        r2 = (yw - gm * yr - ga) ** 2
        return float(np.sum(np.minimum(r2, delta2))), r2 < delta2

    best_obj, best_inliers = objective(1.0, 0.0)
    found = False
    for _ in range(t_msac):
        i, j = rng.integers(0, yr.size, size=2)
        if abs(yr[i] - yr[j]) < 1e-12:
            continue
        gm = (yw[i] - yw[j]) / (yr[i] - yr[j])
        ga = yw[i] - gm * yr[i]
        obj, inl = objective(gm, ga)
        if obj < best_obj:
            best_obj, best_inliers = obj, inl
            found = True
    if best_inliers.sum() < 2:
        return RangeCorrectionParams(1.0, 0.0, success=False)
    a = np.stack([yr[best_inliers], np.ones(int(best_inliers.sum()))], axis=1)
    sol, *_ = np.linalg.lstsq(a, yw[best_inliers], rcond=None)
    gm, ga = float(sol[0]), float(sol[1])
    obj_refit, _ = objective(gm, ga)
    if obj_refit > best_obj and not found:
        return RangeCorrectionParams(1.0, 0.0, success=False)
    return RangeCorrectionParams(gm, ga, success=True)


def default_flow_estimator(frame: ImageGrid, reference: ImageGrid) -> DisplacementField:
    """Global phase-correlation translation expanded to a dense field."""
    d = estimate_translation_phase_correlation(reference, frame)
    h, w = frame.shape
    # frame = reference shifted by d, so frame coords map to reference by -d
    return DisplacementField(
        w, h, np.full((h, w), -d[0]), np.full((h, w), -d[1])
    )


def _huber_energy_grad(x_img: np.ndarray, alpha: np.ndarray, tau: float):
    """Adaptively weighted smooth-Huber curvature penalty (Laplacian/4)."""
    from .estimation import laplacian_matrix

    h, w = x_img.shape
    key = (w, h)
    lap = _lap_cache.get(key)
    if lap is None:
        lap = laplacian_matrix(w, h) * 0.25
        _lap_cache[key] = lap
    hx = lap @ x_img.ravel()
    root = np.sqrt(1.0 + (hx / tau) ** 2)
    energy = float(np.sum(alpha * (tau * root - tau)))
    grad = lap.T @ (alpha * hx / (tau * root))
    return energy, grad


_lap_cache: dict = {}


def _guided_energy_grad(x, y, op, beta, lam, alpha, tau, gains=None, offsets=None):
    """Weighted quadratic data term with optional per-frame range correction,
    plus adaptively weighted Huber curvature regularization."""
    hh, hw = op.hr_shape
    wx = apply_forward(op, x)
    if gains is not None:
        m = op.lr_shape[0] * op.lr_shape[1]
        g = np.repeat(gains, m)
        o = np.repeat(offsets, m)
        resid = y - g * wx - o
        wres = beta * resid if beta is not None else resid
        e_d = float(resid @ wres)
        g_d = -2.0 * apply_adjoint(op, g * wres)
    else:
        resid = y - wx
        wres = beta * resid if beta is not None else resid
        e_d = float(resid @ wres)
        g_d = -2.0 * apply_adjoint(op, wres)
    e_p, g_p = _huber_energy_grad(x.reshape(hh, hw), alpha, tau)
    return e_d + lam * e_p, g_d + lam * g_p


def _motions_from_flows(flows: Sequence[DisplacementField]) -> list[MotionModel]:
    return [DenseMotion(f) for f in flows]


def _fuse_guidance(frames_g: Sequence[ImageGrid], flows_g: Sequence[DisplacementField]):
    """Motion-compensated temporal median of the guidance frames."""
    motions = [DenseMotion(f) for f in flows_g]
    return temporal_median_fusion(frames_g, motions, 1.0)


def guided_two_stage(
    frames: Sequence[ImageGrid],
    guidance_frames: Sequence[ImageGrid],
    fusion: FusionMapping,
    s: float,
    psf: PsfSpec,
    config: GuidedConfig = GuidedConfig(),
    flow_estimator: FlowEstimator = default_flow_estimator,
    guidance_flows: Sequence[DisplacementField] | None = None,
) -> ReconstructionReport:
    """Stage 1: uniform-weight solve with filter-transferred motion.
    Stage 2: recompute adaptive regularization weights from the fused
    guidance and refine."""
    if len(frames) != len(guidance_frames):
        raise ValueError("one guidance frame per input frame required")
    lh, lw = frames[0].shape
    hh, hw = int(round(lh * s)), int(round(lw * s))
    if guidance_flows is None:
        guidance_flows = [flow_estimator(g, guidance_frames[0]) for g in guidance_frames]
    lr_flows = [filter_displacement_field(f, (lh, lw), fusion) for f in guidance_flows]
    motions = _motions_from_flows(lr_flows)
    op = build_system_matrix((lh, lw), (hh, hw), motions, psf)
    y = np.concatenate([f.data.ravel() for f in frames])
    beta = op.valid_rows.astype(np.float64)

    x0 = temporal_median_fusion(frames, motions, s).data.ravel()
    opts = SolverOptions(max_iterations=config.t_scg, tolerance=config.tol)
    alpha1 = np.ones(hh * hw)
    x1, tr1 = scg_minimize(
        lambda x: _guided_energy_grad(x, y, op, beta, config.lam, alpha1, config.huber_tau),
        x0,
        opts,
    )

    fused_g = _fuse_guidance(guidance_frames, guidance_flows)
    edges = detect_edges(fused_g, config.edge_low, config.edge_high)
    x1_up = resize_image(devectorize(x1, hw, hh), fused_g.width, fused_g.height, "bicubic")
    alpha2 = adaptive_reg_weights(
        x1_up,
        fused_g,
        edges,
        config.contrast_factor,
        config.lmi_patch_size,
        (hh, hw),
        config.lmi_bins,
    )
    x2, tr2 = scg_minimize(
        lambda x: _guided_energy_grad(x, y, op, beta, config.lam, alpha2, config.huber_tau),
        x1,
        opts,
    )
    records = [
        IterationRecord(1, tr1.energies[-1], config.lam, 0.0, 0.0, tr1.max_abs_change, s),
        IterationRecord(2, tr2.energies[-1], config.lam, 0.0, 0.0, tr2.max_abs_change, s),
    ]
    report = ReconstructionReport(
        image=devectorize(x2, hw, hh),
        iterations=records,
        converged=tr2.converged,
        algorithm="guided-two-stage",
    )
    report.metrics["stage1_energy"] = tr1.energies[-1]
    report.metrics["stage2_energy_trace_monotone"] = bool(
        all(b <= a + 1e-12 for a, b in zip(tr2.energies, tr2.energies[1:]))
    )
    report.extra_images["alpha"] = alpha2
    report.extra_images["lr_flows"] = lr_flows
    report.extra_images["guidance_flows"] = list(guidance_flows)
    report.extra_images["fused_guidance"] = fused_g
    return report


def _warp_frame_to_reference(frame: ImageGrid, flow: DisplacementField) -> tuple[np.ndarray, np.ndarray]:
    """Backward-warp a frame onto the reference grid using its flow toward
    the reference (negation approximation for the inverse)."""
    model = DenseMotion(flow).inverse()
    warped = warp_image(frame, model, "bilinear")
    return warped.image.data, warped.valid


def guided_robust(
    frames: Sequence[ImageGrid],
    guidance_frames: Sequence[ImageGrid],
    fusion: FusionMapping,
    s: float,
    psf: PsfSpec,
    config: GuidedConfig = GuidedConfig(),
    flow_estimator: FlowEstimator = default_flow_estimator,
    guidance_flows: Sequence[DisplacementField] | None = None,
    range_correction: bool = False,
) -> ReconstructionReport:
    """Robust variant: joint confidence = guidance similarity (fixed) times
    residual-driven input confidence (updated per iteration), with optional
    per-frame MSAC range correction in the data term."""
    if len(frames) != len(guidance_frames):
        raise ValueError("one guidance frame per input frame required")
    k = len(frames)
    lh, lw = frames[0].shape
    hh, hw = int(round(lh * s)), int(round(lw * s))
    if guidance_flows is None:
        guidance_flows = [flow_estimator(g, guidance_frames[0]) for g in guidance_frames]

    init = guided_two_stage(
        frames, guidance_frames, fusion, s, psf, config, flow_estimator, guidance_flows
    )
    x = init.image.data.ravel()
    alpha = init.extra_images["alpha"]
    lr_flows = init.extra_images["lr_flows"]
    motions = _motions_from_flows(lr_flows)
    op = build_system_matrix((lh, lw), (hh, hw), motions, psf)
    y = np.concatenate([f.data.ravel() for f in frames])
    m = lh * lw

    # guidance-side confidence: warp the reference toward each frame
    ref_g = guidance_frames[0]
    warped_refs = []
    for flow in guidance_flows:
        warped_refs.append(warp_image(ref_g, DenseMotion(flow), "bilinear").image)
    conf_g = np.concatenate(
        guidance_confidence(guidance_frames, warped_refs, config.ncc_threshold, fusion, (lh, lw))
    )

    gains = np.ones(k)
    offsets = np.zeros(k)
    if range_correction:
        ref_in = ndi.median_filter(frames[0].data, size=3, mode="nearest")
        flow0 = lr_flows[0]
        for kk in range(1, k):
            warped, valid = _warp_frame_to_reference(frames[kk], lr_flows[kk])
            warped = ndi.median_filter(warped, size=3, mode="nearest")
            sigma_k = max(
                weighted_mad_scale((warped - ref_in)[valid], np.ones(int(valid.sum()))), 1e-4
            )
            params = msac_range_correction(
                ref_in, warped, sigma_k, config.t_msac, seed=config.seed + kk, valid=valid
            )
            # warped frame k carries frame k's range level, so the fitted
            # line against the reference is exactly (gamma_m^k, gamma_a^k)
            if params.success:
                gains[kk] = params.gamma_m
                offsets[kk] = params.gamma_a

    opts = SolverOptions(max_iterations=config.t_scg, tolerance=config.tol)
    records = []
    converged = False
    g_rep = np.repeat(gains, m)
    o_rep = np.repeat(offsets, m)
    for t in range(1, config.t_irw + 1):
        resid = y - g_rep * apply_forward(op, x) - o_rep
        sigma = max(weighted_mad_scale(resid, np.maximum(conf_g, 1e-12)), 1e-6)
        absr = np.abs(resid)
        thresh = config.c_local * sigma
        local = np.where(absr <= thresh, 1.0, thresh / np.maximum(absr, 1e-300))
        per_frame = resid.reshape(k, m)
        med = np.sort(per_frame, axis=1)[:, (m - 1) // 2]
        bias = (np.abs(med) <= config.c_bias).astype(np.float64)
        beta_in = (bias[:, None] * local.reshape(k, m)).ravel()
        beta = conf_g * beta_in * op.valid_rows
        if beta.sum() <= 0:
            raise ValueError("all observations rejected as outliers")
        x_new, tr = scg_minimize(
            lambda xx: _guided_energy_grad(
                xx, y, op, beta, config.lam, alpha, config.huber_tau, gains, offsets
            ),
            x,
            opts,
        )
        change = float(np.max(np.abs(x_new - x)))
        x = x_new
        records.append(IterationRecord(t, tr.energies[-1], config.lam, sigma, 0.0, change, s))
        if change < config.tol:
            converged = True
            break

    report = ReconstructionReport(
        image=devectorize(x, hw, hh),
        iterations=records,
        converged=converged,
        algorithm="guided-robust",
    )
    report.metrics["gains"] = gains.tolist()
    report.metrics["offsets"] = offsets.tolist()
    return report
