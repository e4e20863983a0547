import json
import math
from pathlib import Path

import numpy as np
import pytest

from mri2pet.data import load_manifest
from mri2pet.evaluation import (
    EvalReport,
    EvalRow,
    evaluate_testset,
    label_recovery_accuracy,
    load_region_masks,
)
from mri2pet.phantom import load_labels
from mri2pet.training import TrainConfig, load_checkpoint, train

from helpers import write_phantom_dataset


@pytest.fixture(scope="module")
def tiny_eval(tmp_path_factory):
    root = tmp_path_factory.mktemp("eval")
    _, manifest, _ = write_phantom_dataset(root / "d", n_subjects=3, shape=(32, 32, 32))
    entries = load_manifest(manifest)
    config = TrainConfig(model="cyclegan", conditioning="latent_add", epochs=1,
                         batch_size=3, max_steps=2, seed=1, augment_enabled=False)
    result = train(config, entries, root / "run")
    masks = load_region_masks(root / "d" / "target_mask.xvol",
                              root / "d" / "cerebellum_mask.xvol")
    return root, entries, result, masks


def _row(i, ssim=0.8, mse_v=10.0, su_g=1.1, su_t=1.2):
    return EvalRow(
        subject_id=f"s{i}", pet_path=f"p{i}.xvol", ssim=ssim,
        psnr=10 * math.log10(255.0**2 / mse_v), mse=mse_v,
        mcsuvr_generated=su_g, mcsuvr_true=su_t,
        positive_generated=su_g > 1.19, positive_true=su_t > 1.19,
    )


class TestReportAggregates:
    def test_aggregates_recomputable_from_rows(self, rng):
        rows = [_row(i, ssim=float(s), mse_v=float(m), su_g=float(g), su_t=float(t))
                for i, (s, m, g, t) in enumerate(zip(
                    rng.uniform(0, 1, 10), rng.uniform(1, 400, 10),
                    rng.uniform(0.9, 1.6, 10), rng.uniform(0.9, 1.6, 10)))]
        report = EvalReport.from_rows(rows)
        assert report.ssim_mean == pytest.approx(np.mean([r.ssim for r in rows]))
        assert report.ssim_std == pytest.approx(np.std([r.ssim for r in rows]))
        assert report.mse_mean == pytest.approx(np.mean([r.mse for r in rows]))
        from mri2pet.metrics import accuracy_f1, pearson

        r, p = pearson([x.mcsuvr_generated for x in rows], [x.mcsuvr_true for x in rows])
        assert report.pcc == pytest.approx(r)
        assert report.p_value == pytest.approx(p)
        acc, f1 = accuracy_f1([x.positive_generated for x in rows],
                              [x.positive_true for x in rows])
        assert report.accuracy == acc and report.f1 == f1

    def test_empty_rows_rejected(self):
        with pytest.raises(ValueError):
            EvalReport.from_rows([])

    def test_json_and_csv(self, tmp_path, rng):
        rows = [_row(i) for i in range(4)]
        report = EvalReport.from_rows(rows)
        jpath = report.write_json(tmp_path / "summary.json")
        loaded = json.loads(jpath.read_text())
        assert loaded["n_images"] == 4
        cpath = report.write_csv(tmp_path / "report.csv")
        lines = cpath.read_text().strip().splitlines()
        assert len(lines) == 5
        assert lines[0].startswith("subject_id,pet_path,ssim")


class TestEvaluateTestset:
    def test_row_count_and_determinism(self, tiny_eval):
        _, entries, result, masks = tiny_eval
        r1 = evaluate_testset(result.final_checkpoint, entries, masks)
        r2 = evaluate_testset(load_checkpoint(result.final_checkpoint), entries, masks)
        assert r1.n_images == len(entries)
        assert r1.rows == r2.rows

    def test_label_recovery_on_phantom(self, tiny_eval):
        root, entries, result, masks = tiny_eval
        report = evaluate_testset(result.final_checkpoint, entries, masks)
        labels = {Path(k).name: v for k, v in load_labels(root / "d" / "labels.csv").items()}
        assert label_recovery_accuracy(report, labels) == 1.0

    def test_true_mcsuvr_matches_direct_computation(self, tiny_eval):
        root, entries, result, masks = tiny_eval
        from mri2pet.data import load_sample
        from mri2pet.metrics import mcsuvr

        report = evaluate_testset(result.final_checkpoint, entries, masks)
        for row, e in zip(report.rows, entries):
            assert row.mcsuvr_true == pytest.approx(mcsuvr(load_sample(e).pet, masks))

    def test_rejects_empty_entries(self, tiny_eval):
        _, _, result, masks = tiny_eval
        with pytest.raises(ValueError):
            evaluate_testset(result.final_checkpoint, [], masks)
