"""Photometric model: multiplicative bias field plus a global offset."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ImageGrid


@dataclass(frozen=True)
class PhotometricParams:
    """Per-frame photometric state: frame = bias_field * clean + offset."""

    bias_field: ImageGrid
    offset: float = 0.0

    def __post_init__(self) -> None:
        if not np.all(self.bias_field.data > 0.0):
            raise ValueError("bias field must be strictly positive")
        if not np.isfinite(self.offset):
            raise ValueError("offset must be finite")

    @classmethod
    def neutral(cls, width: int, height: int) -> "PhotometricParams":
        return cls(ImageGrid.from_array(np.ones((height, width))), 0.0)

    @classmethod
    def uniform(cls, width: int, height: int, gain: float, offset: float) -> "PhotometricParams":
        return cls(ImageGrid.from_array(np.full((height, width), float(gain))), float(offset))

    def apply(self, image: ImageGrid) -> ImageGrid:
        return ImageGrid.from_array(self.bias_field.data * image.data + self.offset)

    def remove(self, image: ImageGrid) -> ImageGrid:
        return ImageGrid.from_array((image.data - self.offset) / self.bias_field.data)
