"""Reconstruction result container with per-iteration diagnostics."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .core.grid import ImageGrid


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    energy: float
    lam: float
    sigma_noise: float
    sigma_prior: float
    max_abs_change: float
    magnification: float = 0.0
    rel_change: float = 0.0  # ||x_t - x_{t-1}||_2 / ||x_{t-1}||_2


@dataclass
class ReconstructionReport:
    image: ImageGrid
    iterations: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    algorithm: str = ""
    metrics: dict = field(default_factory=dict)
    extra_images: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "converged": self.converged,
            "iterations": [asdict(r) for r in self.iterations],
            "metrics": self.metrics,
            "image_size": [self.image.width, self.image.height],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2))

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "iteration",
                    "energy",
                    "lambda",
                    "sigma_noise",
                    "sigma_prior",
                    "max_abs_change",
                    "magnification",
                ]
            )
            for r in self.iterations:
                writer.writerow(
                    [
                        r.iteration,
                        f"{r.energy:.10g}",
                        f"{r.lam:.10g}",
                        f"{r.sigma_noise:.10g}",
                        f"{r.sigma_prior:.10g}",
                        f"{r.max_abs_change:.10g}",
                        f"{r.magnification:.10g}",
                    ]
                )
