"""Geometric motion models.

A motion model maps points from one image's pixel coordinate frame into
another's. Points are (x, y) pairs where x indexes columns and y rows, in
pixel units. The hierarchy ranges from pure translation up to projective
homographies, plus dense per-pixel displacement fields.

Frame-to-reference convention: the model attached to frame k maps frame-k
coordinates to reference-frame coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DisplacementField:
    """Per-pixel displacements (pixel units) toward the reference frame."""

    width: int
    height: int
    du: np.ndarray = field(repr=False)
    dv: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        for name in ("du", "dv"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != (self.height, self.width):
                raise ValueError(f"{name} shape {a.shape} != ({self.height}, {self.width})")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be finite")
            a = np.ascontiguousarray(a)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def zero(cls, width: int, height: int) -> "DisplacementField":
        z = np.zeros((height, width))
        return cls(width, height, z, z.copy())


class MotionModel:
    """Base class; concrete variants implement transform_points()."""

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def transform_point(self, p) -> np.ndarray:
        return self.transform_points(np.asarray(p, dtype=np.float64).reshape(1, 2))[0]

    def inverse(self) -> "MotionModel":
        raise NotImplementedError

    def to_json_dict(self) -> dict:
        raise NotImplementedError


def _check_points(pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must have shape (n, 2)")
    return pts


class _ParametricMotion(MotionModel):
    """Motion expressible as a 3x3 homography acting on (x, y, 1)."""

    def as_matrix(self) -> np.ndarray:
        raise NotImplementedError

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        pts = _check_points(pts)
        h = self.as_matrix()
        x = pts @ h[:2, :2].T + h[:2, 2]
        w = pts @ h[2, :2] + h[2, 2]
        if np.any(np.abs(w) < 1e-12):
            raise ValueError("projective transform maps a point to infinity")
        return x / w[:, None]

    def inverse(self) -> "MotionModel":
        return Projective.from_matrix(np.linalg.inv(self.as_matrix()))


class Translation(_ParametricMotion):
    def __init__(self, tx: float, ty: float):
        self.tx = float(tx)
        self.ty = float(ty)

    def as_matrix(self) -> np.ndarray:
        return np.array([[1.0, 0.0, self.tx], [0.0, 1.0, self.ty], [0.0, 0.0, 1.0]])

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        return _check_points(pts) + np.array([self.tx, self.ty])

    def inverse(self) -> "Translation":
        return Translation(-self.tx, -self.ty)

    def to_json_dict(self) -> dict:
        return {"type": "translation", "params": [self.tx, self.ty]}

    def __repr__(self) -> str:
        return f"Translation({self.tx:g}, {self.ty:g})"


class Rigid(_ParametricMotion):
    def __init__(self, angle: float, tx: float, ty: float):
        self.angle = float(angle)
        self.tx = float(tx)
        self.ty = float(ty)

    def as_matrix(self) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        return np.array([[c, -s, self.tx], [s, c, self.ty], [0.0, 0.0, 1.0]])

    def inverse(self) -> "Rigid":
        c, s = np.cos(self.angle), np.sin(self.angle)
        # R^T applied to -t
        return Rigid(-self.angle, -(c * self.tx + s * self.ty), -(-s * self.tx + c * self.ty))

    def to_json_dict(self) -> dict:
        return {"type": "rigid", "params": [self.angle, self.tx, self.ty]}

    def __repr__(self) -> str:
        return f"Rigid(angle={self.angle:g}, t=({self.tx:g}, {self.ty:g}))"


class Affine(_ParametricMotion):
    """Affine map with coefficients (a11, a12, a21, a22, tx, ty)."""

    def __init__(self, coeffs) -> None:
        c = np.asarray(coeffs, dtype=np.float64).ravel()
        if c.size != 6:
            raise ValueError("affine model takes 6 coefficients")
        self.coeffs = c

    @classmethod
    def identity(cls) -> "Affine":
        return cls([1.0, 0.0, 0.0, 1.0, 0.0, 0.0])

    def as_matrix(self) -> np.ndarray:
        a11, a12, a21, a22, tx, ty = self.coeffs
        return np.array([[a11, a12, tx], [a21, a22, ty], [0.0, 0.0, 1.0]])

    def inverse(self) -> "Affine":
        m = np.linalg.inv(self.as_matrix())
        return Affine([m[0, 0], m[0, 1], m[1, 0], m[1, 1], m[0, 2], m[1, 2]])

    def to_json_dict(self) -> dict:
        return {"type": "affine", "params": list(map(float, self.coeffs))}

    def __repr__(self) -> str:
        return f"Affine({np.array2string(self.coeffs, precision=4)})"


class Projective(_ParametricMotion):
    """Projective homography, 8 coefficients (p11..p32), p33 fixed to 1."""

    def __init__(self, coeffs) -> None:
        c = np.asarray(coeffs, dtype=np.float64).ravel()
        if c.size != 8:
            raise ValueError("projective model takes 8 coefficients")
        m = np.append(c, 1.0).reshape(3, 3)
        if abs(np.linalg.det(m)) < 1e-12:
            raise ValueError("projective matrix must have full rank")
        self.coeffs = c

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "MotionModel":
        m = np.asarray(m, dtype=np.float64)
        if abs(m[2, 2]) < 1e-12:
            raise ValueError("cannot normalize homography with zero corner")
        m = m / m[2, 2]
        if abs(m[2, 0]) < 1e-14 and abs(m[2, 1]) < 1e-14:
            return Affine([m[0, 0], m[0, 1], m[1, 0], m[1, 1], m[0, 2], m[1, 2]])
        return cls(m.ravel()[:8])

    def as_matrix(self) -> np.ndarray:
        return np.append(self.coeffs, 1.0).reshape(3, 3)

    def to_json_dict(self) -> dict:
        return {"type": "projective", "params": list(map(float, self.coeffs))}

    def __repr__(self) -> str:
        return f"Projective({np.array2string(self.coeffs, precision=4)})"


class DenseMotion(MotionModel):
    """Dense displacement model: p -> p + m(p), m interpolated bilinearly."""

    def __init__(self, field: DisplacementField):
        self.field = field

    def transform_points(self, pts: np.ndarray) -> np.ndarray:
        pts = _check_points(pts)
        du = _bilinear_lookup(self.field.du, pts)
        dv = _bilinear_lookup(self.field.dv, pts)
        return pts + np.stack([du, dv], axis=1)

    def inverse(self) -> "DenseMotion":
        # Small-displacement approximation: invert by negating the field.
        f = self.field
        return DenseMotion(DisplacementField(f.width, f.height, -f.du, -f.dv))

    def to_json_dict(self) -> dict:
        return {
            "type": "dense",
            "params": [self.field.width, self.field.height],
            "du": self.field.du.ravel().tolist(),
            "dv": self.field.dv.ravel().tolist(),
        }

    def __repr__(self) -> str:
        return f"DenseMotion({self.field.width}x{self.field.height})"


def _bilinear_lookup(a: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinear sample of a 2-D array at (x, y) points, edges replicated."""
    h, w = a.shape
    x = np.clip(pts[:, 0], 0.0, w - 1.0)
    y = np.clip(pts[:, 1], 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(int), 0, w - 1)
    y0 = np.clip(np.floor(y).astype(int), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = a[y0, x0] * (1 - fx) + a[y0, x1] * fx
    bot = a[y1, x0] * (1 - fx) + a[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def compose(a: MotionModel, b: MotionModel) -> MotionModel:
    """Model applying b first, then a: compose(a, b)(p) = a(b(p)).

    Only defined for parametric models.
    """
    if not isinstance(a, _ParametricMotion) or not isinstance(b, _ParametricMotion):
        raise TypeError("compose is only defined for parametric motion models")
    return Projective.from_matrix(a.as_matrix() @ b.as_matrix())


def motion_from_json_dict(d: dict) -> MotionModel:
    kind = d.get("type")
    params = d.get("params", [])
    if kind == "translation":
        return Translation(*params)
    if kind == "rigid":
        return Rigid(*params)
    if kind == "affine":
        return Affine(params)
    if kind == "projective":
        return Projective(params)
    if kind == "dense":
        w, h = int(params[0]), int(params[1])
        du = np.asarray(d["du"], dtype=np.float64).reshape(h, w)
        dv = np.asarray(d["dv"], dtype=np.float64).reshape(h, w)
        return DenseMotion(DisplacementField(w, h, du, dv))
    raise ValueError(f"unknown motion model type: {kind!r}")
