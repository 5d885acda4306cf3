"""Multi-frame super-resolution toolkit.

Reconstructs high-resolution images from low-resolution frame sequences by
Bayesian energy minimization: robust single-sensor reconstruction with
iteratively re-weighted minimization, guidance-driven multi-sensor
reconstruction, joint multi-channel reconstruction with a locally linear
inter-channel prior, a frequency-domain reference solver for 1-D signals,
and quality assessment plus a simulation/benchmark harness.
"""

from . import core, estimation, formation, fourier, guided, llr, phantoms, quality, robust

__all__ = [
    "core",
    "estimation",
    "formation",
    "fourier",
    "guided",
    "llr",
    "phantoms",
    "quality",
    "robust",
]

__version__ = "0.1.0"
