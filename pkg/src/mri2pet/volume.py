"""Volumetric data model: 3D scalar grids, intensity normalization, resampling,
scalar broadcasting, and the on-disk volume formats (XVOL1, NIfTI-1 read)."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

XVOL_MAGIC = b"XVOL1"


@dataclass(frozen=True)
class Volume:
    """A 3D scalar grid of float32 intensities with per-axis spacing in mm.

    Shape convention is (D, H, W) with W the fastest-varying axis on disk.
    Intensities must be finite; spacing is metadata only.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"volume data must be 3D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"volume axes must be >= 1, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("volume contains non-finite intensities")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class PairedSample:
    """Co-registered MRI+PET volumes with the subject's plasma Abeta42/40 ratio."""

    subject_id: str
    mri: Volume
    pet: Volume
    abeta_ratio: float

    def __post_init__(self):
        if self.mri.shape != self.pet.shape:
            raise ValueError(
                f"mri/pet shapes differ: {self.mri.shape} vs {self.pet.shape}"
            )
        if not (np.isfinite(self.abeta_ratio) and self.abeta_ratio > 0):
            raise ValueError(f"abeta_ratio must be positive, got {self.abeta_ratio}")


@dataclass(frozen=True)
class NormalizationStats:
    """Intensity and biomarker ranges fitted on the training split.

    One instance describes a single modality's intensity range plus the shared
    Abeta42/40 range. Intensities map to [-1, 1], the biomarker to [0, 1].
    """

    intensity_lo: float
    intensity_hi: float
    abeta_lo: float
    abeta_hi: float

    def __post_init__(self):
        for lo, hi, name in (
            (self.intensity_lo, self.intensity_hi, "intensity"),
            (self.abeta_lo, self.abeta_hi, "abeta"),
        ):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ValueError(f"{name} range must be finite")
            if not hi > lo:
                raise ValueError(f"{name} range requires hi > lo, got [{lo}, {hi}]")


def normalize_intensity(v: Volume, stats: NormalizationStats) -> Volume:
    """Affine map [lo, hi] -> [-1, 1], clamped.

    Out-of-range intensities (possible on held-out data) are clamped rather
    than rejected.
    """
    if not np.isfinite(v.data).all():
        raise ValueError("cannot normalize volume with non-finite intensities")
    lo, hi = stats.intensity_lo, stats.intensity_hi
    out = (v.data.astype(np.float64) - lo) / (hi - lo) * 2.0 - 1.0
    out = np.clip(out, -1.0, 1.0)
    return Volume(out.astype(np.float32), v.spacing)


def denormalize_intensity(v: Volume, stats: NormalizationStats) -> Volume:
    """Inverse of normalize_intensity on the non-clamped range."""
    lo, hi = stats.intensity_lo, stats.intensity_hi
    out = (v.data.astype(np.float64) + 1.0) / 2.0 * (hi - lo) + lo
    return Volume(out.astype(np.float32), v.spacing)


def normalize_abeta(ratio: float, stats: NormalizationStats) -> float:
    """Min-max map of the plasma ratio to [0, 1], clamped at the fitted range."""
    if not np.isfinite(ratio):
        raise ValueError(f"abeta ratio must be finite, got {ratio}")
    x = (ratio - stats.abeta_lo) / (stats.abeta_hi - stats.abeta_lo)
    return float(min(max(x, 0.0), 1.0))


def resample_trilinear(v: Volume, target_shape: tuple[int, int, int]) -> Volume:
    """Resample to target_shape by trilinear interpolation.

    Uses the align-corners-false convention: output index i samples input
    coordinate (i + 0.5) * (in / out) - 0.5, clamped at the edges.
    """
    target_shape = tuple(int(t) for t in target_shape)
    if len(target_shape) != 3 or min(target_shape) < 1:
        raise ValueError(f"target shape must be three axes >= 1, got {target_shape}")
    if target_shape == v.shape:
        return Volume(v.data.copy(), v.spacing)

    axes = [
        (np.arange(t, dtype=np.float64) + 0.5) * (s / t) - 0.5
        for s, t in zip(v.shape, target_shape)
    ]
    grid = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([g.ravel() for g in grid])
    out = map_coordinates(
        v.data.astype(np.float64), coords, order=1, mode="nearest"
    ).reshape(target_shape)
    new_spacing = tuple(
        sp * s / t for sp, s, t in zip(v.spacing, v.shape, target_shape)
    )
    return Volume(out.astype(np.float32), new_spacing)


def broadcast_scalar(s: float, shape: tuple[int, ...]) -> np.ndarray:
    """Constant field of value s, either (D,H,W) or a channel block (C,D,H,W)."""
    if not np.isfinite(s):
        raise ValueError(f"broadcast value must be finite, got {s}")
    shape = tuple(int(c) for c in shape)
    if len(shape) not in (3, 4) or min(shape) < 1:
        raise ValueError(f"shape must be (D,H,W) or (C,D,H,W) with axes >= 1, got {shape}")
    return np.full(shape, s, dtype=np.float32)


# ---------------------------------------------------------------------------
# XVOL1: little-endian magic "XVOL1", uint32 dims (D,H,W), float32 spacing,
# then D*H*W float32 intensities in row-major (W fastest) order.
# ---------------------------------------------------------------------------

def write_xvol(v: Volume, path) -> None:
    with open(path, "wb") as fh:
        fh.write(XVOL_MAGIC)
        fh.write(struct.pack("<3I", *v.shape))
        fh.write(struct.pack("<3f", *v.spacing))
        fh.write(v.data.astype("<f4").tobytes(order="C"))


def read_xvol(path) -> Volume:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != XVOL_MAGIC:
            raise ValueError(f"{path}: not an XVOL1 file (magic {magic!r})")
        d, h, w = struct.unpack("<3I", fh.read(12))
        spacing = struct.unpack("<3f", fh.read(12))
        raw = fh.read(4 * d * h * w)
        if len(raw) != 4 * d * h * w:
            raise ValueError(f"{path}: truncated voxel payload")
        data = np.frombuffer(raw, dtype="<f4").reshape(d, h, w)
    return Volume(data, spacing)


# ---------------------------------------------------------------------------
# NIfTI-1 reading (348-byte header, optional gzip). Only what is needed to
# ingest user-supplied co-registered volumes; no write support.
# ---------------------------------------------------------------------------

_NIFTI_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}


def read_nifti(path) -> Volume:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        hdr = fh.read(348)
        if len(hdr) < 348:
            raise ValueError(f"{path}: truncated NIfTI header")
        magic = hdr[344:348]
        if magic not in (b"n+1\x00", b"ni1\x00"):
            raise ValueError(f"{path}: bad NIfTI magic {magic!r}")
        # sizeof_hdr doubles as the byte-order sentinel
        endian = "<" if struct.unpack("<i", hdr[:4])[0] == 348 else ">"
        dim = struct.unpack(endian + "8h", hdr[40:56])
        datatype = struct.unpack(endian + "h", hdr[70:72])[0]
        pixdim = struct.unpack(endian + "8f", hdr[76:108])
        vox_offset = int(struct.unpack(endian + "f", hdr[108:112])[0])
        scl_slope = struct.unpack(endian + "f", hdr[112:116])[0]
        scl_inter = struct.unpack(endian + "f", hdr[116:120])[0]
        if dim[0] < 3:
            raise ValueError(f"{path}: need a 3D image, header says {dim[0]}D")
        nx, ny, nz = dim[1], dim[2], dim[3]
        if datatype not in _NIFTI_DTYPES:
            raise ValueError(f"{path}: unsupported NIfTI datatype {datatype}")
        dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(endian)
        if magic == b"n+1\x00":
            fh.read(max(vox_offset, 348) - 348)
        else:  # .hdr/.img pair: voxels live in the sibling .img
            img_path = str(path).replace(".hdr", ".img")
            fh.close()
            fh = opener(img_path, "rb")
        n = nx * ny * nz
        raw = fh.read(n * dtype.itemsize)
        if len(raw) < n * dtype.itemsize:
            raise ValueError(f"{path}: truncated voxel payload")
    data = np.frombuffer(raw, dtype=dtype, count=n)
    # NIfTI stores x fastest; transpose to our (D,H,W) = (z,y,x) convention
    data = data.reshape(nz, ny, nx, order="C").astype(np.float64)
    if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        data = data * slope + scl_inter
    spacing = (abs(pixdim[3]), abs(pixdim[2]), abs(pixdim[1]))
    return Volume(data.astype(np.float32), spacing)


def read_volume(path) -> Volume:
    """Dispatch on extension: .xvol (native) or .nii/.nii.gz/.hdr."""
    p = str(path)
    if p.endswith(".xvol"):
        return read_xvol(p)
    if p.endswith((".nii", ".nii.gz", ".hdr")):
        return read_nifti(p)
    raise ValueError(f"{path}: unknown volume format (expect .xvol or .nii[.gz])")
