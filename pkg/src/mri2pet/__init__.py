"""mri2pet: 3D adversarial MRI-to-PET synthesis conditioned on a plasma
amyloid biomarker, with training, augmentation, and evaluation tooling."""

__version__ = "0.1.0"

from .volume import (
    NormalizationStats,
    PairedSample,
    Volume,
    broadcast_scalar,
    denormalize_intensity,
    normalize_abeta,
    normalize_intensity,
    read_volume,
    read_xvol,
    resample_trilinear,
    write_xvol,
)

__all__ = [
    "NormalizationStats",
    "PairedSample",
    "Volume",
    "broadcast_scalar",
    "denormalize_intensity",
    "normalize_abeta",
    "normalize_intensity",
    "read_volume",
    "read_xvol",
    "resample_trilinear",
    "write_xvol",
]
