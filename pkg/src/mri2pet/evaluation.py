"""Test-set evaluation: per-image quality metrics, uptake-ratio correlation,
and amyloid-positivity classification, collected into a serializable report."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import ManifestEntry, load_sample
from .metrics import (
    AMYLOID_SUVR_THRESHOLD,
    RegionMasks,
    accuracy_f1,
    classify_amyloid,
    mcsuvr,
    mse,
    pearson,
    psnr,
    ssim3d,
    to_eval_range,
)
from .training import Checkpoint, generate_pet, load_checkpoint
from .volume import Volume, read_volume


@dataclass(frozen=True)
class EvalRow:
    subject_id: str
    pet_path: str
    ssim: float
    psnr: float
    mse: float
    mcsuvr_generated: float
    mcsuvr_true: float
    positive_generated: bool
    positive_true: bool


@dataclass
class EvalReport:
    rows: list[EvalRow]
    threshold: float
    ssim_mean: float
    ssim_std: float
    psnr_mean: float
    psnr_std: float
    mse_mean: float
    mse_std: float
    pcc: float | None
    p_value: float | None
    accuracy: float
    f1: float

    @property
    def n_images(self) -> int:
        return len(self.rows)

    @classmethod
    def from_rows(cls, rows: list[EvalRow], threshold: float = AMYLOID_SUVR_THRESHOLD):
        if not rows:
            raise ValueError("no evaluation rows")
        ssim_v = np.array([r.ssim for r in rows])
        psnr_v = np.array([r.psnr for r in rows])
        mse_v = np.array([r.mse for r in rows])
        gen = np.array([r.mcsuvr_generated for r in rows])
        true = np.array([r.mcsuvr_true for r in rows])
        if len(rows) >= 3 and np.std(gen) > 0 and np.std(true) > 0:
            pcc, p_value = pearson(gen, true)
        else:
            pcc, p_value = None, None
        acc, f1 = accuracy_f1(
            [r.positive_generated for r in rows], [r.positive_true for r in rows]
        )
        return cls(
            rows=rows,
            threshold=threshold,
            ssim_mean=float(ssim_v.mean()),
            ssim_std=float(ssim_v.std()),
            psnr_mean=float(psnr_v.mean()),
            psnr_std=float(psnr_v.std()) if np.isfinite(psnr_v).all() else math.inf,
            mse_mean=float(mse_v.mean()),
            mse_std=float(mse_v.std()),
            pcc=pcc,
            p_value=p_value,
            accuracy=acc,
            f1=f1,
        )

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "rows"}
        d["n_images"] = self.n_images
        return d

    def write_csv(self, path) -> Path:
        path = Path(path)
        fields = list(EvalRow.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(fields)
            for r in self.rows:
                writer.writerow(
                    [getattr(r, f) if f in ("subject_id", "pet_path")
                     else repr(getattr(r, f)) if isinstance(getattr(r, f), float)
                     else int(getattr(r, f))
                     for f in fields]
                )
        return path

    def write_json(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def evaluate_testset(
    checkpoint: Checkpoint | str | Path,
    entries: list[ManifestEntry],
    masks: RegionMasks,
    threshold: float = AMYLOID_SUVR_THRESHOLD,
) -> EvalReport:
    """Generate a PET volume for every manifest entry and score it against the
    ground truth. Quality metrics use the [0,255] domain mapped from the
    training PET intensity range; uptake ratios use raw intensities."""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    if not entries:
        raise ValueError("no entries to evaluate")
    pet_stats = ckpt.stats["pet"]
    lo, hi = pet_stats.intensity_lo, pet_stats.intensity_hi
    rows = []
    for e in entries:
        s = load_sample(e)
        fake = generate_pet(ckpt, s.mri, s.abeta_ratio)
        a = to_eval_range(fake, lo, hi)
        b = to_eval_range(s.pet, lo, hi)
        su_gen = mcsuvr(fake, masks)
        su_true = mcsuvr(s.pet, masks)
        rows.append(
            EvalRow(
                subject_id=e.subject_id,
                pet_path=str(e.pet_path),
                ssim=ssim3d(a, b, max_val=255.0),
                psnr=psnr(a, b, max_val=255.0),
                mse=mse(a, b),
                mcsuvr_generated=su_gen,
                mcsuvr_true=su_true,
                positive_generated=bool(classify_amyloid([su_gen], threshold)[0]),
                positive_true=bool(classify_amyloid([su_true], threshold)[0]),
            )
        )
    return EvalReport.from_rows(rows, threshold)


def load_region_masks(target_path, cerebellum_path) -> RegionMasks:
    return RegionMasks(
        target_mask=read_volume(target_path),
        cerebellum_mask=read_volume(cerebellum_path),
    )


def label_recovery_accuracy(report: EvalReport, labels_by_name: dict[str, int]) -> float | None:
    """Fraction of rows whose true-PET classification matches the dataset's
    generating label; None if no row has a recorded label."""
    hits, total = 0, 0
    for r in report.rows:
        name = Path(r.pet_path).name
        if name in labels_by_name:
            total += 1
            hits += int(int(r.positive_true) == labels_by_name[name])
    return hits / total if total else None
