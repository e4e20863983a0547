"""Training loops for the three translation models, subject-level splitting
glue, checkpointing, and single-volume inference."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentConfig, compose_random_pipeline
from .conditioning import CONDITIONING_MODES
from .data import ManifestEntry, fit_normalization_stats, load_sample
from .losses import (
    CompositeTerms,
    LossWeights,
    cgan_loss,
    cycle_loss,
    cyclegan_objective,
    identity_loss,
    l1_loss,
    lsgan_loss,
    pix2pix_objective,
    sharegan_objective,
)
from .metrics import ssim3d, to_eval_range
from .networks import (
    DiscriminatorSpec,
    Generator3d,
    GeneratorSpec,
    SharedGenerator,
    build_discriminator,
    build_generator,
)
from .volume import (
    NormalizationStats,
    PairedSample,
    Volume,
    denormalize_intensity,
    normalize_abeta,
    normalize_intensity,
)

MODEL_KINDS = ("pix2pix", "cyclegan", "sharegan")
CHECKPOINT_FORMAT = "mri2pet-checkpoint-v1"


class TrainingDiverged(RuntimeError):
    """Raised when any loss term stops being finite."""


def default_weights(model: str) -> LossWeights:
    if model == "sharegan":
        return LossWeights(lambda_idt=0.5)
    return LossWeights(lambda_idt=0.3)


@dataclass(frozen=True)
class TrainConfig:
    model: str = "cyclegan"
    conditioning: str = "none"
    learning_rate: float = 2e-4
    epochs: int = 100
    weights: LossWeights | None = None
    batch_size: int = 2
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    augment_enabled: bool = True
    adversarial: str = "log"          # "log" (written objective) or "lsgan"
    lr_schedule: str = "constant"     # "constant" or "linear"
    decay_start_epoch: int = 50
    dropout_p: float | None = None    # None: 0.5 for pix2pix, 0 otherwise
    max_steps: int | None = None      # optional hard cap for smoke runs
    split_sizes: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise ValueError(f"unknown model {self.model!r}")
        if self.conditioning not in CONDITIONING_MODES:
            raise ValueError(f"unknown conditioning {self.conditioning!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.adversarial not in ("log", "lsgan"):
            raise ValueError(f"unknown adversarial form {self.adversarial!r}")
        if self.lr_schedule not in ("constant", "linear"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.weights is None:
            object.__setattr__(self, "weights", default_weights(self.model))
        if self.split_sizes is not None:
            object.__setattr__(self, "split_sizes", tuple(self.split_sizes))

    @property
    def generator_dropout(self) -> float:
        if self.dropout_p is not None:
            return self.dropout_p
        return 0.5 if self.model == "pix2pix" else 0.0


def config_to_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["augment"]["flip_axes"] = list(config.augment.flip_axes)
    d["augment"]["contrast_range"] = list(config.augment.contrast_range)
    if config.split_sizes is not None:
        d["split_sizes"] = list(config.split_sizes)
    return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    if d.get("weights") is not None:
        d["weights"] = LossWeights(**d["weights"])
    if d.get("augment") is not None:
        aug = dict(d["augment"])
        aug["flip_axes"] = tuple(aug.get("flip_axes", (0, 1, 2)))
        aug["contrast_range"] = tuple(aug.get("contrast_range", (0.9, 1.1)))
        d["augment"] = AugmentConfig(**aug)
    if d.get("split_sizes") is not None:
        d["split_sizes"] = tuple(d["split_sizes"])
    return TrainConfig(**d)


def config_hash(config: TrainConfig) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    model: str
    conditioning: str
    generator_spec: GeneratorSpec
    discriminator_spec: DiscriminatorSpec
    state: dict
    stats: dict[str, NormalizationStats]
    config: dict
    config_hash: str
    epoch: int
    val_ssim: float | None = None

    def build_m2p(self) -> Generator3d:
        g = build_generator(self.generator_spec, self.conditioning)
        key = "g_shared" if self.model == "sharegan" else "g_m2p"
        g.load_state_dict(self.state[key])
        g.eval()
        return g


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "model": ckpt.model,
        "conditioning": ckpt.conditioning,
        "generator_spec": asdict(ckpt.generator_spec),
        "discriminator_spec": asdict(ckpt.discriminator_spec),
        "state": ckpt.state,
        "stats": {k: asdict(v) for k, v in ckpt.stats.items()},
        "config": ckpt.config,
        "config_hash": ckpt.config_hash,
        "epoch": ckpt.epoch,
        "val_ssim": ckpt.val_ssim,
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if "stats" not in payload or not payload["stats"]:
        raise ValueError(f"{path}: missing normalization stats")
    gspec = dict(payload["generator_spec"])
    gspec["encoder_channels"] = tuple(gspec["encoder_channels"])
    dspec = dict(payload["discriminator_spec"])
    dspec["conv_channels"] = tuple(dspec["conv_channels"])
    dspec["fc_features"] = tuple(dspec["fc_features"])
    return Checkpoint(
        model=payload["model"],
        conditioning=payload["conditioning"],
        generator_spec=GeneratorSpec(**gspec),
        discriminator_spec=DiscriminatorSpec(**dspec),
        state=payload["state"],
        stats={k: NormalizationStats(**v) for k, v in payload["stats"].items()},
        config=payload["config"],
        config_hash=payload["config_hash"],
        epoch=payload["epoch"],
        val_ssim=payload["val_ssim"],
    )


def generate_pet(checkpoint: Checkpoint | str | Path, mri: Volume, abeta_ratio: float) -> Volume:
    """Translate one MRI volume to the PET intensity domain."""
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    if not (np.isfinite(abeta_ratio) and abeta_ratio > 0):
        raise ValueError(f"abeta_ratio must be positive, got {abeta_ratio}")
    k = ckpt.generator_spec.downsample_factor
    if any(s % k != 0 for s in mri.shape):
        raise ValueError(f"volume shape {mri.shape} not divisible by {k}")
    if "mri" not in ckpt.stats or "pet" not in ckpt.stats:
        raise ValueError("checkpoint is missing normalization stats")

    g = ckpt.build_m2p()
    x = normalize_intensity(mri, ckpt.stats["mri"])
    abeta = normalize_abeta(abeta_ratio, ckpt.stats["mri"])
    with torch.no_grad():
        t = torch.from_numpy(x.data).unsqueeze(0).unsqueeze(0)
        out = g(t, abeta if ckpt.conditioning != "none" else None)
    fake = Volume(out.squeeze(0).squeeze(0).numpy(), mri.spacing)
    return denormalize_intensity(fake, ckpt.stats["pet"])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    out_dir: Path
    final_checkpoint: Path
    best_checkpoint: Path | None
    loss_log: Path
    history: list[dict]
    best_val_ssim: float | None


class _Nets:
    """Model components plus which parameters each optimizer owns."""

    def __init__(self, config: TrainConfig):
        gspec = GeneratorSpec(dropout_p=config.generator_dropout)
        self.generator_spec = gspec
        if config.model == "pix2pix":
            self.discriminator_spec = DiscriminatorSpec(in_channels=2)
            self.g = build_generator(gspec, config.conditioning)
            self.d_pair = build_discriminator(self.discriminator_spec)
            self.g_modules = [self.g]
            self.d_modules = [self.d_pair]
        else:
            self.discriminator_spec = DiscriminatorSpec(in_channels=1)
            if config.model == "sharegan":
                core = build_generator(gspec, config.conditioning)
                self.shared = SharedGenerator(core)
                self.g_m2p = core
                self.g_p2m = core
                self.g_modules = [core]
            else:
                self.g_m2p = build_generator(gspec, config.conditioning)
                self.g_p2m = build_generator(gspec, config.conditioning)
                self.g_modules = [self.g_m2p, self.g_p2m]
            self.d_mri = build_discriminator(self.discriminator_spec)
            self.d_pet = build_discriminator(self.discriminator_spec)
            self.d_modules = [self.d_mri, self.d_pet]

    def generator_parameters(self):
        seen, out = set(), []
        for m in self.g_modules:
            for p in m.parameters():
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out

    def discriminator_parameters(self):
        return [p for m in self.d_modules for p in m.parameters()]

    def generator_parameter_count(self) -> int:
        return int(sum(p.numel() for p in self.generator_parameters()))

    def train(self):
        for m in self.g_modules + self.d_modules:
            m.train()

    def eval(self):
        for m in self.g_modules + self.d_modules:
            m.eval()

    def state(self, model: str) -> dict:
        if model == "pix2pix":
            return {"g_m2p": self.g.state_dict(), "d_pair": self.d_pair.state_dict()}
        if model == "sharegan":
            return {
                "g_shared": self.g_m2p.state_dict(),
                "d_mri": self.d_mri.state_dict(),
                "d_pet": self.d_pet.state_dict(),
            }
        return {
            "g_m2p": self.g_m2p.state_dict(),
            "g_p2m": self.g_p2m.state_dict(),
            "d_mri": self.d_mri.state_dict(),
            "d_pet": self.d_pet.state_dict(),
        }


def _prepare_batch(
    entries: list[ManifestEntry],
    stats: dict[str, NormalizationStats],
    config: TrainConfig,
    rng: np.random.Generator,
):
    mris, pets, abetas = [], [], []
    for e in entries:
        s = load_sample(e)
        pair = PairedSample(
            s.subject_id,
            normalize_intensity(s.mri, stats["mri"]),
            normalize_intensity(s.pet, stats["pet"]),
            s.abeta_ratio,
        )
        if config.augment_enabled:
            pair = compose_random_pipeline(pair, config.augment, rng)
        mris.append(torch.from_numpy(pair.mri.data))
        pets.append(torch.from_numpy(pair.pet.data))
        abetas.append(normalize_abeta(e.abeta_ratio, stats["mri"]))
    m = torch.stack(mris).unsqueeze(1)
    p = torch.stack(pets).unsqueeze(1)
    a = torch.tensor(abetas, dtype=torch.float32)
    return m, p, a


def _check_finite(values: dict[str, float]):
    for name, v in values.items():
        if not np.isfinite(v):
            raise TrainingDiverged(f"non-finite loss term {name}={v}")


def _validation_ssim(
    nets: _Nets, config: TrainConfig, val_entries, stats
) -> float | None:
    if not val_entries:
        return None
    nets.eval()
    g = nets.g if config.model == "pix2pix" else nets.g_m2p
    pet_stats = stats["pet"]
    scores = []
    with torch.no_grad():
        for e in val_entries:
            s = load_sample(e)
            x = normalize_intensity(s.mri, stats["mri"])
            abeta = normalize_abeta(e.abeta_ratio, stats["mri"])
            t = torch.from_numpy(x.data).unsqueeze(0).unsqueeze(0)
            out = g(t, abeta if config.conditioning != "none" else None)
            fake = denormalize_intensity(
                Volume(out.squeeze(0).squeeze(0).numpy()), pet_stats
            )
            a = to_eval_range(fake, pet_stats.intensity_lo, pet_stats.intensity_hi)
            b = to_eval_range(s.pet, pet_stats.intensity_lo, pet_stats.intensity_hi)
            scores.append(ssim3d(a, b, max_val=255.0))
    nets.train()
    return float(np.mean(scores))


def train(
    config: TrainConfig,
    train_entries: list[ManifestEntry],
    out_dir,
    val_entries: list[ManifestEntry] | None = None,
) -> TrainResult:
    """Run the configured adversarial training loop and write checkpoints and
    a per-step loss log under out_dir."""
    if not train_entries:
        raise ValueError("training split is empty")
    val_entries = val_entries or []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    data_rng = np.random.default_rng([config.seed, 0xDA7A])
    aug_rng = np.random.default_rng([config.augment.seed, config.seed])

    stats = fit_normalization_stats(train_entries)
    nets = _Nets(config)
    nets.train()
    expected_gen_params = nets.generator_parameter_count()

    adv = cgan_loss if config.adversarial == "log" else lsgan_loss
    w = config.weights
    opt_g = torch.optim.Adam(
        nets.generator_parameters(), lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
    )
    opt_d = torch.optim.Adam(
        nets.discriminator_parameters(), lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
    )

    chash = config_hash(config)
    history: list[dict] = []
    loss_log = out_dir / "loss_log.csv"
    best_val = None
    best_path = None
    step = 0
    stop = False

    def log(epoch, terms: dict[str, float]):
        for name, value in terms.items():
            history.append(dict(epoch=epoch, step=step, term=name, value=value))

    def snapshot(epoch, val) -> Checkpoint:
        return Checkpoint(
            model=config.model,
            conditioning=config.conditioning,
            generator_spec=nets.generator_spec,
            discriminator_spec=nets.discriminator_spec,
            state=nets.state(config.model),
            stats=stats,
            config=config_to_dict(config),
            config_hash=chash,
            epoch=epoch,
            val_ssim=val,
        )

    for epoch in range(config.epochs):
        if config.lr_schedule == "linear" and epoch >= config.decay_start_epoch:
            factor = (config.epochs - epoch) / max(1, config.epochs - config.decay_start_epoch)
            for opt in (opt_g, opt_d):
                for group in opt.param_groups:
                    group["lr"] = config.learning_rate * factor

        order = data_rng.permutation(len(train_entries))
        for start in range(0, len(order), config.batch_size):
            batch = [train_entries[i] for i in order[start : start + config.batch_size]]
            m, p, a = _prepare_batch(batch, stats, config, aug_rng)
            cond = a if config.conditioning != "none" else None
            step += 1

            if config.model == "pix2pix":
                fake_p = nets.g(m, cond)
                real_scores = nets.d_pair(torch.cat([m, p], dim=1))
                fake_scores_d = nets.d_pair(torch.cat([m, fake_p.detach()], dim=1))
                _, d_term = adv(real_scores, fake_scores_d)
                opt_d.zero_grad()
                d_term.backward()
                opt_d.step()

                gen_scores = nets.d_pair(torch.cat([m, fake_p], dim=1))
                gen_term, _ = adv(real_scores.detach(), gen_scores)
                l1 = l1_loss(fake_p, p)
                g_total = pix2pix_objective(gen_term, l1, w)
                opt_g.zero_grad()
                g_total.backward()
                opt_g.step()

                terms = {
                    "d_pair": d_term.item(),
                    "adv_m2p": gen_term.item(),
                    "l1_m2p": l1.item(),
                    "g_total": g_total.item(),
                }
            else:
                fake_p = nets.g_m2p(m, cond)
                fake_m = nets.g_p2m(p, cond)

                _, d_pet_term = adv(nets.d_pet(p), nets.d_pet(fake_p.detach()))
                _, d_mri_term = adv(nets.d_mri(m), nets.d_mri(fake_m.detach()))
                opt_d.zero_grad()
                (d_pet_term + d_mri_term).backward()
                opt_d.step()

                rec_m = nets.g_p2m(fake_p, cond)
                rec_p = nets.g_m2p(fake_m, cond)
                idt_p = nets.g_m2p(p, cond)
                idt_m = nets.g_p2m(m, cond)

                zero = torch.zeros(1)
                adv_m2p, _ = adv(zero, nets.d_pet(fake_p))
                adv_p2m, _ = adv(zero, nets.d_mri(fake_m))
                cyc_m = cycle_loss(m, rec_m)
                cyc_p = cycle_loss(p, rec_p)
                idt = identity_loss(idt_p, p, idt_m, m)
                comp = CompositeTerms(adv_m2p, adv_p2m, cyc_m, cyc_p, idt)
                objective = (
                    sharegan_objective if config.model == "sharegan" else cyclegan_objective
                )
                g_total = objective(comp, w)
                opt_g.zero_grad()
                g_total.backward()
                opt_g.step()

                terms = {
                    "d_mri": d_mri_term.item(),
                    "d_pet": d_pet_term.item(),
                    "adv_m2p": adv_m2p.item(),
                    "adv_p2m": adv_p2m.item(),
                    "cycle_m": cyc_m.item(),
                    "cycle_p": cyc_p.item(),
                    "identity": idt.item(),
                    "l1_m2p": l1_loss(fake_p, p).item(),
                    "g_total": g_total.item(),
                }

            _check_finite(terms)
            log(epoch, terms)
            if config.max_steps is not None and step >= config.max_steps:
                stop = True
                break

        if config.model == "sharegan" and nets.generator_parameter_count() != expected_gen_params:
            raise AssertionError("shared generator grew a second parameter set")

        val = _validation_ssim(nets, config, val_entries, stats)
        if val is not None:
            log(epoch, {"val_ssim": val})
            if best_val is None or val > best_val:
                best_val = val
                best_path = save_checkpoint(snapshot(epoch, val), out_dir / "best.ckpt")
        if stop:
            break

    final_path = save_checkpoint(snapshot(epoch, best_val), out_dir / "final.ckpt")
    with open(loss_log, "w") as fh:
        fh.write("epoch,step,term,value\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['step']},{row['term']},{row['value']!r}\n")
    with open(out_dir / "config.json", "w") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return TrainResult(
        out_dir=out_dir,
        final_checkpoint=final_path,
        best_checkpoint=best_path,
        loss_log=loss_log,
        history=history,
        best_val_ssim=best_val,
    )
