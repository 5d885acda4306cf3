"""Image containers, motion models, warping, registration, and fusion."""

from .grid import ImageGrid, devectorize, pixel_index, vectorize
from .motion import (
    Affine,
    DenseMotion,
    DisplacementField,
    MotionModel,
    Projective,
    Rigid,
    Translation,
    compose,
    motion_from_json_dict,
)
from .warp import WarpedImage, resize_image, sample_image, warp_image
from .register import (
    estimate_bias_field,
    estimate_brightness_offset,
    estimate_translation_phase_correlation,
    normalized_cross_correlation,
    register_affine_intensity,
)
from .fusion import hr_to_lr_coords, lr_to_hr_coords, temporal_median_fusion
from .photometric import PhotometricParams

__all__ = [
    "Affine",
    "DenseMotion",
    "DisplacementField",
    "ImageGrid",
    "MotionModel",
    "PhotometricParams",
    "Projective",
    "Rigid",
    "Translation",
    "WarpedImage",
    "compose",
    "devectorize",
    "estimate_bias_field",
    "estimate_brightness_offset",
    "estimate_translation_phase_correlation",
    "hr_to_lr_coords",
    "lr_to_hr_coords",
    "motion_from_json_dict",
    "normalized_cross_correlation",
    "pixel_index",
    "resize_image",
    "sample_image",
    "temporal_median_fusion",
    "vectorize",
    "warp_image",
]
