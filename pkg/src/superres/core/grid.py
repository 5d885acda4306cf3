"""Image container and vectorization utilities.

Images are rectangular scalar rasters with intensities nominally in [0, 1],
stored row-major. Vectorization follows line-by-line scanning, so pixel
(row r, column c) of a ``width``-wide image maps to index ``r * width + c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ImageGrid:
    """Immutable 2-D scalar image.

    Attributes
    ----------
    width, height : int
        Grid dimensions in pixels (both >= 1).
    data : np.ndarray
        Read-only float64 array of shape (height, width); all values finite.
    """

    width: int
    height: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        a = np.asarray(self.data, dtype=np.float64)
        if a.shape != (self.height, self.width):
            raise ValueError(
                f"data shape {a.shape} does not match ({self.height}, {self.width})"
            )
        if not np.all(np.isfinite(a)):
            raise ValueError("image values must be finite")
        a = np.ascontiguousarray(a)
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @classmethod
    def from_array(cls, a: np.ndarray) -> "ImageGrid":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("expected a 2-D array")
        return cls(width=a.shape[1], height=a.shape[0], data=a)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def to_array(self) -> np.ndarray:
        """Writable copy of the pixel data."""
        return self.data.copy()


def vectorize(image: ImageGrid) -> np.ndarray:
    """Row-major (line-by-line) scan of an image into a 1-D vector."""
    return image.data.ravel().copy()


def devectorize(vector: np.ndarray, width: int, height: int) -> ImageGrid:
    """Inverse of :func:`vectorize`; raises on size mismatch."""
    v = np.asarray(vector, dtype=np.float64).ravel()
    if v.size != width * height:
        raise ValueError(f"vector length {v.size} != {width}x{height}")
    return ImageGrid(width=width, height=height, data=v.reshape(height, width))


def pixel_index(row: int, col: int, width: int) -> int:
    """Flat index of pixel (row, col) under row-major scanning."""
    return row * width + col
