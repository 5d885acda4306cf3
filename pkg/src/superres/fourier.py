"""Frequency-domain multi-channel reconstruction for 1-D signals.

K channels sample a band-limited signal at pitch T with offsets t_k
(t_1 = 0). Each DFT bin n of a channel mixes the 2L spectral samples that
alias onto it; stacking channels gives a per-bin K x 2L linear system whose
solution recovers the dense spectrum, hence the signal at s = 2L times the
original rate. Elements are exp(-j*2*pi*f*t_k) at the aliased frequencies
f = (n/N - m) * fs, optionally scaled by per-channel kernel spectra.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ChannelSet:
    """K equally long sample sequences with channel offsets (time units)."""

    samples: np.ndarray  # (K, N)
    offsets: np.ndarray  # (K,), offsets[0] == 0
    pitch: float
    kernel_spectra: Sequence[Callable[[np.ndarray], np.ndarray]] | None = None

    def __post_init__(self) -> None:
        s = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        t = np.asarray(self.offsets, dtype=np.float64).ravel()
        if s.shape[0] != t.size:
            raise ValueError("one offset per channel required")
        if self.pitch <= 0:
            raise ValueError("sampling pitch must be positive")
        if abs(t[0]) > 1e-12:
            raise ValueError("the first channel is the reference (offset 0)")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "offsets", t)

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class FourierSystem:
    """Per-frequency stacked blocks of the multi-channel sampling model.

    blocks[n] is the K x 2L matrix tying bin n of every channel's DFT to the
    spectral samples at indices freq_indices[n] (units of fs / N).
    """

    blocks: np.ndarray = field(repr=False)  # (N, K, 2L) complex
    freq_indices: np.ndarray = field(repr=False)  # (N, 2L) int
    band_factor: int
    sample_rate: float
    n_samples: int

    @property
    def n_channels(self) -> int:
        return self.blocks.shape[1]

    def to_dense(self) -> np.ndarray:
        """Full (K*N) x (2L*N) matrix, rows channel-major, columns bin-major.

        Entries outside the per-bin blocks are exactly zero.
        """
        n = self.n_samples
        k = self.n_channels
        twol = 2 * self.band_factor
        dense = np.zeros((k * n, twol * n), dtype=complex)
        for bin_idx in range(n):
            for ch in range(k):
                dense[ch * n + bin_idx, bin_idx * twol : (bin_idx + 1) * twol] = self.blocks[
                    bin_idx, ch
                ]
        return dense


def _alias_indices(n_samples: int, band_factor: int) -> np.ndarray:
    """Spectral sample indices q with q = n (mod N), q in [-L*N, L*N)."""
    bands = np.arange(-band_factor, band_factor) * n_samples
    return bands[None, :] + np.arange(n_samples)[:, None]


def assemble_ideal_system(
    offsets: Sequence[float], fs: float, band_factor: int, n_samples: int
) -> FourierSystem:
    """Ideal (Dirac-comb) sampling system: pure phase factors."""
    if band_factor < 1:
        raise ValueError("band factor L must be >= 1")
    t = np.asarray(offsets, dtype=np.float64).ravel()
    qs = _alias_indices(n_samples, band_factor)
    freqs = qs * (fs / n_samples)  # (N, 2L)
    blocks = np.exp(-2j * np.pi * freqs[:, None, :] * t[None, :, None])
    return FourierSystem(
        blocks=blocks,
        freq_indices=qs,
        band_factor=band_factor,
        sample_rate=fs,
        n_samples=n_samples,
    )


def assemble_real_system(
    offsets: Sequence[float],
    fs: float,
    band_factor: int,
    n_samples: int,
    kernel_spectra: Sequence[Callable[[np.ndarray], np.ndarray]],
) -> FourierSystem:
    """Non-ideal sampling: ideal phases scaled by each channel's kernel
    spectrum at the aliased frequency. Reports fully-suppressed spectral
    columns (kernel cut-off condition) via ValueError."""
    sys_ideal = assemble_ideal_system(offsets, fs, band_factor, n_samples)
    t = np.asarray(offsets, dtype=np.float64).ravel()
    if len(kernel_spectra) != t.size:
        raise ValueError("one kernel spectrum per channel required")
    freqs = sys_ideal.freq_indices * (fs / n_samples)
    blocks = sys_ideal.blocks.copy()
    for ch, spectrum in enumerate(kernel_spectra):
        blocks[:, ch, :] *= np.asarray(spectrum(freqs), dtype=complex)
    col_power = np.sum(np.abs(blocks), axis=1)  # (N, 2L)
    if np.any(np.all(col_power < 1e-12, axis=1)):
        raise ValueError("all kernels vanish on an entire frequency block")
    return FourierSystem(
        blocks=blocks,
        freq_indices=sys_ideal.freq_indices,
        band_factor=band_factor,
        sample_rate=fs,
        n_samples=n_samples,
    )


def check_uniqueness_ideal(offsets: Sequence[float], pitch: float):
    """Theorem-style uniqueness test for ideal sampling with s = K.

    Unique iff no pair satisfies t_j = c1 * t_i + c2 * T for integers c1, c2
    (searched over |c1|, |c2| <= K, sufficient for offsets in [0, K*T)).
    Returns (unique, violating_pair_or_None).
    """
    t = np.asarray(offsets, dtype=np.float64).ravel()
    k = t.size
    rng = np.arange(-k, k + 1)
    tol = 1e-9 * max(pitch, 1.0)
    for i in range(k):
        for j in range(i + 1, k):
            diff = t[j] - rng[:, None] * t[i] - rng[None, :] * pitch
            if np.any(np.abs(diff) <= tol):
                return False, (i, j)
    return True, None


def effective_magnification(fs: float, f0: float, fh: float | None = None) -> float:
    """Upper bound on the useful magnification factor.

    Ideal sampling: 1 when fs >= 2*f0 (no aliasing to exploit), else
    2*f0/fs. A kernel cut-off fh additionally caps the recoverable band.
    """
    if fs <= 0 or f0 <= 0:
        raise ValueError("frequencies must be positive")
    if fh is None:
        return 1.0 if fs >= 2.0 * f0 else 2.0 * f0 / fs
    if fs >= 2.0 * f0:
        return min(fs, fh) / fs
    return min(2.0 * f0, fh) / fs


def reconstruct_fourier(channels: ChannelSet, s: int) -> np.ndarray:
    """Recover s*N samples of the underlying signal from K >= s channels.

    DFT each channel, solve each per-bin block (exactly for K = 2L, least
    squares with a tiny Tikhonov jitter for K > 2L), then inverse DFT the
    stitched spectrum. Raises on singular systems or a non-real result.
    """
    if s < 1:
        raise ValueError("magnification must be >= 1")
    if s % 2 != 0 and s != 1:
        raise ValueError("magnification must be 1 or even (s = 2L)")
    k = channels.n_channels
    n = channels.n_samples
    if k < s:
        raise ValueError("need at least s channels")
    if s == 1:
        return channels.samples[0].copy()

    l = s // 2
    if channels.kernel_spectra is not None:
        system = assemble_real_system(
            channels.offsets, 1.0 / channels.pitch, l, n, channels.kernel_spectra
        )
    else:
        system = assemble_ideal_system(channels.offsets, 1.0 / channels.pitch, l, n)

    dfts = np.fft.fft(channels.samples, axis=1)  # (K, N)
    spectrum = np.zeros(s * n, dtype=complex)
    for bin_idx in range(n):
        a = system.blocks[bin_idx]  # (K, 2L)
        b = dfts[:, bin_idx]
        if k == 2 * l:
            cond = np.linalg.cond(a)
            if not np.isfinite(cond) or cond > 1e10:
                raise np.linalg.LinAlgError(
                    f"singular sampling system at frequency bin {bin_idx} (cond={cond:.2e})"
                )
            x = np.linalg.solve(a, b)
        else:
            ata = a.conj().T @ a + 1e-12 * np.eye(2 * l)
            x = np.linalg.solve(ata, a.conj().T @ b)
        spectrum[system.freq_indices[bin_idx] % (s * n)] = x

    signal = np.fft.ifft(spectrum * s)
    if np.max(np.abs(signal.imag)) > 1e-8 * max(1.0, np.max(np.abs(signal.real))):
        raise ValueError("reconstruction has a non-negligible imaginary part")
    return signal.real
