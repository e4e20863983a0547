"""Deterministic phantom dataset: paired MRI/PET-like ellipsoid volumes whose
target-region uptake rises linearly as the plasma Abeta42/40 ratio falls,
plus fixed target/cerebellum masks and an on-disk dataset writer."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import write_manifest
from .metrics import AMYLOID_SUVR_THRESHOLD, RegionMasks, mcsuvr
from .volume import PairedSample, Volume, write_xvol

# region geometry in normalized [-1,1] coordinates; masks stay fixed across
# subjects so one mask pair serves a whole dataset
_HEAD_RADII = (0.85, 0.80, 0.80)
_SHELL_INNER, _SHELL_OUTER = 0.35, 0.55
_CEREB_CENTER = (0.50, 0.30, 0.0)
_CEREB_RADIUS = 0.16
_TARGET_BASE_UPTAKE = 0.85
_CEREB_UPTAKE = 1.0


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = (64, 64, 64)
    n_subjects: int = 40
    images_per_subject: int = 2
    abeta_range: tuple[float, float] = (0.03, 0.09)
    uptake_coupling: float = 0.7
    mri_noise: float = 0.02
    pet_noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "abeta_range", tuple(self.abeta_range))
        if any(s % 8 != 0 or s < 16 for s in self.shape):
            raise ValueError(f"shape must be >=16 and divisible by 8, got {self.shape}")
        lo, hi = self.abeta_range
        if not (0 < lo < hi):
            raise ValueError(f"abeta_range must be positive with lo < hi, got {self.abeta_range}")
        if self.n_subjects < 3:
            raise ValueError("need at least 3 subjects")
        if self.images_per_subject < 1:
            raise ValueError("images_per_subject must be >= 1")


def _norm_coords(shape):
    axes = [np.linspace(-1.0, 1.0, s) for s in shape]
    return np.meshgrid(*axes, indexing="ij")


def build_region_masks(shape) -> RegionMasks:
    z, y, x = _norm_coords(shape)
    r = np.sqrt(z * z + y * y + x * x)
    shell = (r >= _SHELL_INNER) & (r <= _SHELL_OUTER) & (z <= 0.0)
    dz, dy, dx = (z - _CEREB_CENTER[0], y - _CEREB_CENTER[1], x - _CEREB_CENTER[2])
    cereb = np.sqrt(dz * dz + dy * dy + dx * dx) <= _CEREB_RADIUS
    return RegionMasks(
        target_mask=Volume(shell.astype(np.float32)),
        cerebellum_mask=Volume(cereb.astype(np.float32)),
    )


def _subject_abeta(spec: PhantomSpec, subject_index: int) -> float:
    rng = np.random.default_rng([spec.seed, subject_index, 0xA])
    lo, hi = spec.abeta_range
    return float(rng.uniform(lo, hi))


def amyloid_load(spec: PhantomSpec, abeta: float) -> float:
    """Linear, inverted biomarker coupling: low plasma ratio, high load."""
    lo, hi = spec.abeta_range
    return float((hi - abeta) / (hi - lo))


def generate_phantom_pair(
    spec: PhantomSpec, subject_index: int, image_index: int = 0
) -> tuple[PairedSample, RegionMasks]:
    """One co-registered MRI/PET pair for the given subject and repeat scan.

    The subject's plasma ratio and anatomy jitter depend only on
    (seed, subject_index); scan texture also varies with image_index.
    """
    if not 0 <= subject_index < spec.n_subjects:
        raise ValueError(f"subject_index out of range: {subject_index}")
    subj_rng = np.random.default_rng([spec.seed, subject_index, 0xB])
    scan_rng = np.random.default_rng([spec.seed, subject_index, image_index, 0xC])

    abeta = _subject_abeta(spec, subject_index)
    radii = np.asarray(_HEAD_RADII) * (1.0 + 0.05 * subj_rng.uniform(-1.0, 1.0, size=3))

    z, y, x = _norm_coords(spec.shape)
    re2 = (z / radii[0]) ** 2 + (y / radii[1]) ** 2 + (x / radii[2]) ** 2
    head = re2 <= 1.0
    tissue = np.clip(1.0 - re2, 0.0, 1.0)

    mri = np.where(head, 0.25 + 0.75 * tissue, 0.0)
    mri = mri + spec.mri_noise * scan_rng.standard_normal(spec.shape)
    mri = np.clip(mri, 0.0, None)

    masks = build_region_masks(spec.shape)
    load = amyloid_load(spec, abeta)
    pet = np.where(head, 0.15 + 0.85 * tissue, 0.0)
    pet[masks.cerebellum_bool] = _CEREB_UPTAKE
    pet[masks.target_bool] = _TARGET_BASE_UPTAKE + spec.uptake_coupling * load
    pet = pet + spec.pet_noise * scan_rng.standard_normal(spec.shape)
    pet = np.clip(pet, 0.0, None)

    sample = PairedSample(
        subject_id=f"sub{subject_index:03d}",
        mri=Volume(mri.astype(np.float32)),
        pet=Volume(pet.astype(np.float32)),
        abeta_ratio=abeta,
    )
    return sample, masks


def generate_dataset(spec: PhantomSpec) -> tuple[list[PairedSample], RegionMasks]:
    samples = []
    masks = build_region_masks(spec.shape)
    for s in range(spec.n_subjects):
        for i in range(spec.images_per_subject):
            pair, _ = generate_phantom_pair(spec, s, i)
            samples.append(pair)
    return samples, masks


def write_dataset(samples: list[PairedSample], masks: RegionMasks, out_dir) -> Path:
    """Write volumes (XVOL1), masks, the manifest CSV, and a labels sidecar
    recording each image's true uptake ratio and amyloid label."""
    out_dir = Path(out_dir)
    vol_dir = out_dir / "volumes"
    try:
        vol_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {vol_dir}: {exc}") from exc

    write_xvol(masks.target_mask, out_dir / "target_mask.xvol")
    write_xvol(masks.cerebellum_mask, out_dir / "cerebellum_mask.xvol")

    rows = []
    labels = []
    seen: dict[str, int] = {}
    for sample in samples:
        idx = seen.get(sample.subject_id, 0)
        seen[sample.subject_id] = idx + 1
        stem = f"{sample.subject_id}_img{idx:02d}"
        mri_rel = f"volumes/{stem}_mri.xvol"
        pet_rel = f"volumes/{stem}_pet.xvol"
        try:
            write_xvol(sample.mri, out_dir / mri_rel)
            write_xvol(sample.pet, out_dir / pet_rel)
        except OSError as exc:
            raise OSError(f"failed writing {out_dir / mri_rel}: {exc}") from exc
        rows.append(
            dict(
                subject_id=sample.subject_id,
                mri_path=mri_rel,
                pet_path=pet_rel,
                abeta_ratio=repr(sample.abeta_ratio),
            )
        )
        ratio = mcsuvr(sample.pet, masks)
        labels.append(
            dict(
                subject_id=sample.subject_id,
                pet_path=pet_rel,
                mcsuvr=repr(ratio),
                amyloid_positive=int(ratio > AMYLOID_SUVR_THRESHOLD),
            )
        )

    manifest_path = write_manifest(rows, out_dir / "manifest.csv")
    with open(out_dir / "labels.csv", "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["subject_id", "pet_path", "mcsuvr", "amyloid_positive"]
        )
        writer.writeheader()
        for row in labels:
            writer.writerow(row)
    return manifest_path


def load_labels(path) -> dict[str, int]:
    """Map pet_path (as written in the sidecar) to its amyloid label."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["pet_path"]] = int(row["amyloid_positive"])
    return out
