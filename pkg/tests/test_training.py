import numpy as np
import pytest
import torch

from mri2pet.data import load_manifest
from mri2pet.losses import LossWeights
from mri2pet.phantom import PhantomSpec, generate_phantom_pair
from mri2pet.training import (
    TrainConfig,
    TrainingDiverged,
    _check_finite,
    config_from_dict,
    config_hash,
    config_to_dict,
    generate_pet,
    load_checkpoint,
    train,
)

from helpers import write_phantom_dataset


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    _, manifest, _ = write_phantom_dataset(root / "data", n_subjects=3, shape=(32, 32, 32))
    entries = load_manifest(manifest)
    config = TrainConfig(
        model="cyclegan", conditioning="latent_concat", epochs=1, batch_size=3,
        max_steps=2, seed=7, augment_enabled=False,
    )
    result = train(config, entries, root / "run")
    return entries, config, result


class TestConfig:
    def test_round_trip(self):
        c = TrainConfig(model="sharegan", conditioning="latent_add", epochs=5,
                        weights=LossWeights(lambda_idt=0.5), max_steps=10)
        d = config_to_dict(c)
        back = config_from_dict(d)
        assert back == c
        assert config_hash(back) == config_hash(c)

    def test_defaults_weights_per_model(self):
        assert TrainConfig(model="cyclegan").weights.lambda_idt == 0.3
        assert TrainConfig(model="sharegan").weights.lambda_idt == 0.5

    def test_pix2pix_dropout_default(self):
        assert TrainConfig(model="pix2pix").generator_dropout == 0.5
        assert TrainConfig(model="cyclegan").generator_dropout == 0.0

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(model="stylegan")
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)


class TestDivergenceGuard:
    def test_non_finite_term_raises(self):
        with pytest.raises(TrainingDiverged, match="g_total"):
            _check_finite({"g_total": float("nan")})


class TestTrainLoop:
    def test_artifacts_written(self, tiny_run):
        _, _, result = tiny_run
        assert result.final_checkpoint.exists()
        assert result.loss_log.exists()
        header = result.loss_log.read_text().splitlines()[0]
        assert header == "epoch,step,term,value"
        terms = {row["term"] for row in result.history}
        assert {"d_mri", "d_pet", "cycle_m", "cycle_p", "identity",
                "l1_m2p", "g_total"} <= terms

    def test_checkpoint_round_trip_generation(self, tiny_run):
        entries, _, result = tiny_run
        ckpt = load_checkpoint(result.final_checkpoint)
        from mri2pet.volume import read_volume

        mri = read_volume(entries[0].mri_path)
        out1 = generate_pet(ckpt, mri, entries[0].abeta_ratio)
        out2 = generate_pet(result.final_checkpoint, mri, entries[0].abeta_ratio)
        assert out1.shape == mri.shape
        assert np.array_equal(out1.data, out2.data)

    def test_save_load_is_bit_identical_to_live_model(self, tiny_run, tmp_path):
        entries, _, result = tiny_run
        from mri2pet.training import save_checkpoint
        from mri2pet.volume import read_volume

        ckpt = load_checkpoint(result.final_checkpoint)
        mri = read_volume(entries[1].mri_path)
        live = generate_pet(ckpt, mri, 0.06)
        resaved = save_checkpoint(ckpt, tmp_path / "again.ckpt")
        back = generate_pet(load_checkpoint(resaved), mri, 0.06)
        assert np.array_equal(live.data, back.data)

    def test_generation_is_deterministic(self, tiny_run):
        entries, _, result = tiny_run
        from mri2pet.volume import read_volume

        ckpt = load_checkpoint(result.final_checkpoint)
        mri = read_volume(entries[0].mri_path)
        a = generate_pet(ckpt, mri, 0.05)
        b = generate_pet(ckpt, mri, 0.05)
        assert np.array_equal(a.data, b.data)

    def test_generate_rejects_bad_shape(self, tiny_run):
        _, _, result = tiny_run
        from mri2pet.volume import Volume

        bad = Volume(np.zeros((20, 20, 20), dtype=np.float32))
        with pytest.raises(ValueError, match="divisible"):
            generate_pet(result.final_checkpoint, bad, 0.05)

    def test_generate_rejects_bad_abeta(self, tiny_run):
        _, _, result = tiny_run
        from mri2pet.volume import Volume

        v = Volume(np.zeros((32, 32, 32), dtype=np.float32))
        with pytest.raises(ValueError, match="positive"):
            generate_pet(result.final_checkpoint, v, -1.0)

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="missing checkpoint"):
            load_checkpoint(tmp_path / "none.ckpt")

    def test_empty_train_split_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="empty"):
            train(TrainConfig(epochs=1), [], tmp_path)


class TestDeterminism:
    def test_same_seed_same_losses(self, tmp_path):
        _, manifest, _ = write_phantom_dataset(tmp_path / "d", n_subjects=3, shape=(32, 32, 32))
        entries = load_manifest(manifest)
        config = TrainConfig(model="pix2pix", conditioning="image_add", epochs=1,
                             batch_size=3, max_steps=2, seed=3)
        r1 = train(config, entries, tmp_path / "r1")
        r2 = train(config, entries, tmp_path / "r2")
        assert r1.history == r2.history
        assert r1.loss_log.read_text() == r2.loss_log.read_text()


class TestShareganSharing:
    def test_single_parameter_set_trained(self, tmp_path):
        _, manifest, _ = write_phantom_dataset(tmp_path / "d", n_subjects=3, shape=(32, 32, 32))
        entries = load_manifest(manifest)
        config = TrainConfig(model="sharegan", conditioning="none", epochs=1,
                             batch_size=3, max_steps=1, seed=0, augment_enabled=False)
        result = train(config, entries, tmp_path / "run")
        ckpt = load_checkpoint(result.final_checkpoint)
        assert "g_shared" in ckpt.state
        assert "g_p2m" not in ckpt.state
