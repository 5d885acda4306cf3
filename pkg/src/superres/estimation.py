"""Image priors, energy/gradient assembly, and the scaled-conjugate-gradient
solver shared by all reconstruction drivers.

Priors: Tikhonov (Laplacian), Huber (Laplacian), isotropic TV, and
(weighted) bilateral total variation. All l1-type terms are smoothed by the
Charbonnier function sqrt(z^2 + tau) - sqrt(tau), which keeps gradients
defined at zero and makes constant images have exactly zero energy.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .core.grid import ImageGrid, devectorize
from .core.warp import resize_image
from .formation import SparseOperator, apply_adjoint, apply_forward


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 50
    tolerance: float = 1e-3  # max-abs change between iterates
    charbonnier_tau: float = 1e-4

    def __post_init__(self) -> None:
        if self.max_iterations < 1 or self.tolerance <= 0 or self.charbonnier_tau <= 0:
            raise ValueError("solver options must be positive")


@dataclass(frozen=True)
class PriorSpec:
    """Regularizer choice: tikhonov-laplacian | huber-laplacian | tv-isotropic
    | btv | wbtv (btv with fixed coefficient weights)."""

    kind: str
    tau: float = 1e-3  # huber scale
    btv_radius: int = 2
    btv_decay: float = 0.7
    weights: np.ndarray | None = None  # wbtv only, length (2P+1)^2 * N

    def __post_init__(self) -> None:
        if self.kind not in ("tikhonov-laplacian", "huber-laplacian", "tv-isotropic", "btv", "wbtv"):
            raise ValueError(f"unknown prior kind: {self.kind!r}")
        if self.kind == "huber-laplacian" and self.tau <= 0:
            raise ValueError("huber tau must be positive")
        if self.btv_radius < 1 or not 0.0 < self.btv_decay <= 1.0:
            raise ValueError("invalid BTV parameters")
        if self.kind == "wbtv" and self.weights is None:
            raise ValueError("wbtv prior needs weights")


@dataclass(frozen=True)
class SparsifyingTransform:
    """Stacked BTV shift-difference transform, ((2P+1)^2 * N) x N sparse."""

    operator: sp.csr_matrix = field(repr=False)
    width: int
    height: int
    radius: int
    decay: float

    @property
    def n_shifts(self) -> int:
        return (2 * self.radius + 1) ** 2

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.operator @ x

    def apply_adjoint(self, z: np.ndarray) -> np.ndarray:
        return self.operator.T @ z


def build_btv_transform(width: int, height: int, radius: int, decay: float) -> SparsifyingTransform:
    """Stack alpha0^(|m|+|n|) * (I - S_v^m S_h^n) over (m, n) in [-P, P]^2.

    Rows whose shifted pixel leaves the grid are zero (difference defined as
    0 there), so the transform annihilates constant images.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    n = width * height
    ys, xs = np.mgrid[0:height, 0:width]
    flat = (ys * width + xs).ravel()
    rows, cols, vals = [], [], []
    block = 0
    for m in range(-radius, radius + 1):
        for nn in range(-radius, radius + 1):
            base = block * n
            block += 1
            if m == 0 and nn == 0:
                continue
            w = decay ** (abs(m) + abs(nn))
            sy = ys + m
            sx = xs + nn
            ok = ((sy >= 0) & (sy < height) & (sx >= 0) & (sx < width)).ravel()
            src = (np.clip(sy, 0, height - 1) * width + np.clip(sx, 0, width - 1)).ravel()
            idx = flat[ok]
            rows.extend([base + idx, base + idx])
            cols.extend([idx, src[ok]])
            vals.extend([np.full(ok.sum(), w), np.full(ok.sum(), -w)])
    op = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=((2 * radius + 1) ** 2 * n, n),
    )
    op.sum_duplicates()
    return SparsifyingTransform(operator=op, width=width, height=height, radius=radius, decay=decay)


def laplacian_matrix(width: int, height: int) -> sp.csr_matrix:
    """5-point Laplacian with replicated edges (annihilates constants)."""
    n = width * height
    ys, xs = np.mgrid[0:height, 0:width]
    center = (ys * width + xs).ravel()
    rows, cols, vals = [center], [center], [np.full(n, 4.0)]
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        sy = np.clip(ys + dy, 0, height - 1)
        sx = np.clip(xs + dx, 0, width - 1)
        rows.append(center)
        cols.append((sy * width + sx).ravel())
        vals.append(np.full(n, -1.0))
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    mat.sum_duplicates()
    return mat


def _charbonnier(z: np.ndarray, tau: float):
    root = np.sqrt(z * z + tau)
    return root - np.sqrt(tau), z / root


_transform_cache: dict[tuple, SparsifyingTransform] = {}
_laplace_cache: dict[tuple, sp.csr_matrix] = {}


def cached_btv_transform(width: int, height: int, radius: int, decay: float) -> SparsifyingTransform:
    key = (width, height, radius, decay)
    if key not in _transform_cache:
        _transform_cache[key] = build_btv_transform(width, height, radius, decay)
    return _transform_cache[key]


def _cached_laplacian(width: int, height: int) -> sp.csr_matrix:
    key = (width, height)
    if key not in _laplace_cache:
        _laplace_cache[key] = laplacian_matrix(width, height)
    return _laplace_cache[key]


def prior_energy_grad(
    x: np.ndarray,
    spec: PriorSpec,
    width: int,
    height: int,
    charbonnier_tau: float = 1e-4,
) -> tuple[float, np.ndarray]:
    """Energy and analytic gradient of the chosen prior at x."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != width * height:
        raise ValueError("vector length does not match image size")

    if spec.kind == "tikhonov-laplacian":
        lap = _cached_laplacian(width, height)
        hx = lap @ x
        return float(hx @ hx), 2.0 * (lap.T @ hx)

    if spec.kind == "huber-laplacian":
        lap = _cached_laplacian(width, height)
        hx = lap @ x
        t = spec.tau
        root = np.sqrt(1.0 + (hx / t) ** 2)
        energy = float(np.sum(t * root - t))
        return energy, lap.T @ (hx / (t * root))

    if spec.kind == "tv-isotropic":
        img = x.reshape(height, width)
        gx = np.zeros_like(img)
        gy = np.zeros_like(img)
        gx[:, :-1] = img[:, 1:] - img[:, :-1]
        gy[:-1, :] = img[1:, :] - img[:-1, :]
        root = np.sqrt(gx * gx + gy * gy + charbonnier_tau)
        energy = float(np.sum(root - np.sqrt(charbonnier_tau)))
        px = gx / root
        py = gy / root
        grad = np.zeros_like(img)
        grad[:, :-1] -= px[:, :-1]
        grad[:, 1:] += px[:, :-1]
        grad[:-1, :] -= py[:-1, :]
        grad[1:, :] += py[:-1, :]
        return energy, grad.ravel()

    if spec.kind in ("btv", "wbtv"):
        trans = cached_btv_transform(width, height, spec.btv_radius, spec.btv_decay)
        z = trans.apply(x)
        if spec.kind == "wbtv":
            z = spec.weights * z
        e, psi = _charbonnier(z, charbonnier_tau)
        if spec.kind == "wbtv":
            psi = spec.weights * psi
        return float(e.sum()), trans.apply_adjoint(psi)

    raise AssertionError("unreachable")


@dataclass
class ScgTrace:
    energies: list[float]
    iterations: int
    converged: bool
    max_abs_change: float


def scg_minimize(
    energy_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    opts: SolverOptions = SolverOptions(),
) -> tuple[np.ndarray, ScgTrace]:
    """Scaled conjugate gradients (Moller) with periodic restarts.

    Only improving steps are accepted, so the energy trace is monotone
    non-increasing. Terminates when the max-abs change between accepted
    iterates drops below opts.tolerance, or on the iteration budget.
    """
    x = np.asarray(x0, dtype=np.float64).ravel().copy()
    n = x.size
    f, g = energy_and_grad(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite energy or gradient at the initial point")

    sigma0 = 1.0e-4
    lamb = 1.0e-6
    lamb_bar = 0.0
    r = -g
    p = r.copy()
    success = True
    energies = [f]
    delta = 0.0
    max_change = np.inf
    nsucc = 0
    it = 0
    converged = False

    while it < opts.max_iterations:
        it += 1
        pnorm2 = float(p @ p)
        if pnorm2 < 1e-300:
            converged = True
            break
        if success:
            sigma = sigma0 / np.sqrt(pnorm2)
            _, g_plus = energy_and_grad(x + sigma * p)
            delta = float(p @ (g_plus - (-r))) / sigma
        delta_s = delta + (lamb - lamb_bar) * pnorm2
        if delta_s <= 0:
            lamb_bar = 2.0 * (lamb - delta_s / pnorm2)
            delta_s = -delta_s + lamb * pnorm2
            lamb = lamb_bar
        mu = float(p @ r)
        alpha = mu / delta_s
        x_new = x + alpha * p
        f_new, g_new = energy_and_grad(x_new)
        if not np.isfinite(f_new):
            raise FloatingPointError("non-finite energy during SCG line search")
        comparison = 2.0 * delta_s * (f - f_new) / (mu * mu) if mu != 0 else -1.0

        if comparison >= 0:
            max_change = float(np.max(np.abs(x_new - x))) if n else 0.0
            x = x_new
            f = f_new
            r_new = -g_new
            lamb_bar = 0.0
            success = True
            nsucc += 1
            if nsucc % n == 0:
                p = r_new.copy()
            else:
                beta = float((r_new @ r_new) - (r_new @ r)) / mu
                p = r_new + beta * p
            r = r_new
            energies.append(f)
            if comparison >= 0.75:
                lamb = max(0.25 * lamb, 1e-15)
            if max_change < opts.tolerance:
                converged = True
                break
        else:
            lamb_bar = lamb
            success = False
        if comparison < 0.25:
            lamb = lamb + delta_s * (1.0 - comparison) / pnorm2
        if lamb > 1e100:
            break

    return x, ScgTrace(
        energies=energies,
        iterations=it,
        converged=converged,
        max_abs_change=float(max_change if np.isfinite(max_change) else 0.0),
    )


def default_initial_guess(y: np.ndarray, op: SparseOperator) -> np.ndarray:
    """Bicubic upsample of the first frame onto the HR grid."""
    lh, lw = op.lr_shape
    hh, hw = op.hr_shape
    first = devectorize(np.asarray(y).ravel()[: lh * lw], lw, lh)
    return resize_image(first, hw, hh, "bicubic").data.ravel()


def data_energy_grad(
    x: np.ndarray, y: np.ndarray, op: SparseOperator, weights: np.ndarray | None
) -> tuple[float, np.ndarray]:
    """Weighted quadratic data term (y - Wx)' B (y - Wx) and gradient."""
    resid = y - apply_forward(op, x)
    if weights is None:
        wr = resid
    else:
        wr = weights * resid
    return float(resid @ wr), -2.0 * apply_adjoint(op, wr)


def _effective_weights(op: SparseOperator, weights: np.ndarray | None) -> np.ndarray | None:
    """Combine user weights with the operator's invalid-row mask."""
    mask = op.valid_rows
    if weights is None:
        return None if mask.all() else mask.astype(np.float64)
    return np.where(mask, np.asarray(weights, dtype=np.float64).ravel(), 0.0)


def ml_estimate(
    y: np.ndarray,
    op: SparseOperator,
    opts: SolverOptions = SolverOptions(),
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, ScgTrace]:
    """Least-squares estimate of the HR image via SCG."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != op.n_rows:
        raise ValueError("observation vector does not match the operator")
    w = _effective_weights(op, None)
    x0 = default_initial_guess(y, op) if x0 is None else np.asarray(x0, dtype=np.float64).ravel()
    return scg_minimize(lambda x: data_energy_grad(x, y, op, w), x0, opts)


def map_estimate(
    y: np.ndarray,
    op: SparseOperator,
    prior: PriorSpec,
    lam: float,
    weights: np.ndarray | None = None,
    opts: SolverOptions = SolverOptions(),
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, ScgTrace]:
    """MAP estimate: weighted quadratic data term plus lam * prior."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != op.n_rows:
        raise ValueError("observation vector does not match the operator")
    hh, hw = op.hr_shape
    w = _effective_weights(op, weights)
    x0 = default_initial_guess(y, op) if x0 is None else np.asarray(x0, dtype=np.float64).ravel()

    def eg(x: np.ndarray) -> tuple[float, np.ndarray]:
        e_d, g_d = data_energy_grad(x, y, op, w)
        if lam == 0:
            return e_d, g_d
        e_p, g_p = prior_energy_grad(x, prior, hw, hh, opts.charbonnier_tau)
        return e_d + lam * e_p, g_d + lam * g_p

    return scg_minimize(eg, x0, opts)
