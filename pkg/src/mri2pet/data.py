"""Dataset manifests, subject-level splitting, and normalization-stat fitting.

A manifest is a CSV with header ``subject_id,mri_path,pet_path,abeta_ratio``;
relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import NormalizationStats, PairedSample, read_volume

MANIFEST_COLUMNS = ("subject_id", "mri_path", "pet_path", "abeta_ratio")
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    mri_path: Path
    pet_path: Path
    abeta_ratio: float


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    base = path.parent
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_COLUMNS:
            raise ValueError(
                f"{path}: manifest header must be {','.join(MANIFEST_COLUMNS)}, "
                f"got {reader.fieldnames}"
            )
        for i, row in enumerate(reader, start=2):
            try:
                ratio = float(row["abeta_ratio"])
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{i}: bad abeta_ratio {row['abeta_ratio']!r}")
            if not (np.isfinite(ratio) and ratio > 0):
                raise ValueError(f"{path}:{i}: abeta_ratio must be positive, got {ratio}")
            entries.append(
                ManifestEntry(
                    subject_id=row["subject_id"],
                    mri_path=(base / row["mri_path"]).resolve(),
                    pet_path=(base / row["pet_path"]).resolve(),
                    abeta_ratio=ratio,
                )
            )
    if not entries:
        raise ValueError(f"{path}: manifest has no rows")
    return entries


def write_manifest(rows: list[dict], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(MANIFEST_COLUMNS))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def load_sample(entry: ManifestEntry) -> PairedSample:
    return PairedSample(
        subject_id=entry.subject_id,
        mri=read_volume(entry.mri_path),
        pet=read_volume(entry.pet_path),
        abeta_ratio=entry.abeta_ratio,
    )


# ---------------------------------------------------------------------------
# Subject-level splitting: whole subjects are assigned greedily (in seeded
# random order) to whichever split is furthest below its image-count target,
# so no individual's images ever straddle splits.
# ---------------------------------------------------------------------------

def split_by_subject(
    entries: list[ManifestEntry], sizes: tuple[int, int, int], seed: int = 0
) -> dict[str, str]:
    if len(sizes) != 3 or any(s < 0 for s in sizes):
        raise ValueError(f"sizes must be three non-negative counts, got {sizes}")
    if sum(sizes) != len(entries):
        raise ValueError(
            f"infeasible sizes: targets sum to {sum(sizes)} but manifest has "
            f"{len(entries)} images"
        )
    counts: dict[str, int] = {}
    for e in entries:
        counts[e.subject_id] = counts.get(e.subject_id, 0) + 1
    subjects = sorted(counts)
    order = np.random.default_rng(seed).permutation(len(subjects))

    targets = dict(zip(SPLIT_NAMES, sizes))
    filled = {name: 0 for name in SPLIT_NAMES}
    assignment: dict[str, str] = {}
    for idx in order:
        sid = subjects[idx]
        name = max(SPLIT_NAMES, key=lambda k: targets[k] - filled[k])
        assignment[sid] = name
        filled[name] += counts[sid]
    return assignment


def save_split(assignment: dict[str, str], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "split"])
        for sid in sorted(assignment):
            writer.writerow([sid, assignment[sid]])
    return path


def load_split(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"split file not found: {path}")
    assignment = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != ("subject_id", "split"):
            raise ValueError(f"{path}: split header must be subject_id,split")
        for row in reader:
            if row["split"] not in SPLIT_NAMES:
                raise ValueError(f"{path}: unknown split name {row['split']!r}")
            assignment[row["subject_id"]] = row["split"]
    return assignment


def subset(
    entries: list[ManifestEntry], assignment: dict[str, str], name: str
) -> list[ManifestEntry]:
    if name not in SPLIT_NAMES:
        raise ValueError(f"unknown split name {name!r}")
    missing = {e.subject_id for e in entries} - set(assignment)
    if missing:
        raise ValueError(f"subjects missing from split assignment: {sorted(missing)[:5]}")
    return [e for e in entries if assignment[e.subject_id] == name]


def check_no_leakage(assignment: dict[str, str]) -> None:
    by_split: dict[str, set] = {name: set() for name in SPLIT_NAMES}
    for sid, name in assignment.items():
        by_split[name].add(sid)
    for a in SPLIT_NAMES:
        for b in SPLIT_NAMES:
            if a < b and by_split[a] & by_split[b]:
                raise AssertionError(f"subject leakage between {a} and {b}")


# ---------------------------------------------------------------------------
# Normalization statistics are fitted on the training split only and persist
# with every checkpoint.
# ---------------------------------------------------------------------------

def fit_normalization_stats(
    entries: list[ManifestEntry],
) -> dict[str, NormalizationStats]:
    if not entries:
        raise ValueError("cannot fit normalization stats on an empty split")
    mri_lo = pet_lo = np.inf
    mri_hi = pet_hi = -np.inf
    ratios = []
    for e in entries:
        s = load_sample(e)
        mri_lo = min(mri_lo, float(s.mri.data.min()))
        mri_hi = max(mri_hi, float(s.mri.data.max()))
        pet_lo = min(pet_lo, float(s.pet.data.min()))
        pet_hi = max(pet_hi, float(s.pet.data.max()))
        ratios.append(e.abeta_ratio)
    a_lo, a_hi = float(min(ratios)), float(max(ratios))
    if a_hi <= a_lo:
        # a single-subject split: widen so the range stays valid
        a_hi = a_lo + max(abs(a_lo), 1e-6)
    if mri_hi <= mri_lo or pet_hi <= pet_lo:
        raise ValueError("degenerate intensity range in training split")
    return {
        "mri": NormalizationStats(mri_lo, mri_hi, a_lo, a_hi),
        "pet": NormalizationStats(pet_lo, pet_hi, a_lo, a_hi),
    }
