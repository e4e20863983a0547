"""Acceptance suite: one test per numbered criterion, each printing a PASS
line. Run with `pytest tests/test_acceptance.py -v -s`."""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from mri2pet.cli import run as cli_run
from mri2pet.data import load_manifest, load_split
from mri2pet.losses import (
    CompositeTerms,
    LossWeights,
    cgan_loss,
    cycle_loss,
    cyclegan_objective,
    identity_loss,
    l1_loss,
    pix2pix_objective,
    sharegan_objective,
)
from mri2pet.metrics import mse, pearson, psnr, ssim3d
from mri2pet.networks import (
    DiscriminatorSpec,
    GeneratorSpec,
    build_discriminator,
    build_generator,
    count_parameters,
    tie_generators,
)
from mri2pet.conditioning import stack_condition_channel
from mri2pet.phantom import PhantomSpec, generate_dataset, write_dataset
from mri2pet.training import TrainConfig, load_checkpoint, train
from mri2pet.volume import normalize_intensity, read_volume

from helpers import brute_force_ssim, rel_err

SMOKE_SECONDS_BUDGET = 900.0
GRADIENT_SECONDS_BUDGET = 600.0
SHAPE_SECONDS_BUDGET = 60.0


# ---------------------------------------------------------------------------
# shared expensive fixtures: the tiny-overfit smoke run and the end-to-end
# CLI pipeline, each executed twice with identical seeds for the determinism
# criterion
# ---------------------------------------------------------------------------

def _smoke_once(root: Path):
    spec = PhantomSpec(shape=(32, 32, 32), n_subjects=4, images_per_subject=1, seed=0)
    samples, masks = generate_dataset(spec)
    manifest = write_dataset(samples, masks, root / "data")
    entries = load_manifest(manifest)
    config = TrainConfig(
        model="cyclegan", conditioning="latent_concat", epochs=100, batch_size=2,
        max_steps=200, seed=0, augment_enabled=False,
    )
    t0 = time.time()
    result = train(config, entries, root / "run")
    return dict(entries=entries, result=result, elapsed=time.time() - t0)


@pytest.fixture(scope="module")
def smoke_runs(tmp_path_factory):
    a = _smoke_once(tmp_path_factory.mktemp("smoke_a"))
    b = _smoke_once(tmp_path_factory.mktemp("smoke_b"))
    return a, b


def _pipeline_once(root: Path):
    data = root / "data"
    split = root / "split.csv"
    rundir = root / "run"
    evaldir = root / "eval"
    repdir = root / "rep"
    codes = {}
    codes["synth"] = cli_run([
        "synth-data", "--out", str(data), "--subjects", "40",
        "--images-per-subject", "2", "--shape", "32", "--seed", "11",
    ])
    codes["split"] = cli_run([
        "split", "--manifest", str(data / "manifest.csv"),
        "--train", "54", "--val", "15", "--test", "11", "--seed", "12",
        "--out", str(split),
    ])
    codes["train"] = cli_run([
        "train", "--manifest", str(data / "manifest.csv"), "--split", str(split),
        "--model", "cyclegan", "--cond", "latent_concat", "--epochs", "1",
        "--batch-size", "2", "--seed", "13", "--out", str(rundir),
    ])
    codes["evaluate"] = cli_run([
        "evaluate", "--checkpoint", str(rundir / "final.ckpt"),
        "--manifest", str(data / "manifest.csv"), "--split", str(split),
        "--target-mask", str(data / "target_mask.xvol"),
        "--cerebellum-mask", str(data / "cerebellum_mask.xvol"),
        "--out", str(evaldir),
    ])
    codes["report"] = cli_run([
        "report", "--checkpoint", str(rundir / "final.ckpt"),
        "--manifest", str(data / "manifest.csv"), "--split", str(split),
        "--max-images", "2", "--loss-log", str(rundir / "loss_log.csv"),
        "--out", str(repdir),
    ])
    return dict(root=root, data=data, split=split, rundir=rundir,
                evaldir=evaldir, repdir=repdir, codes=codes)


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    a = _pipeline_once(tmp_path_factory.mktemp("e2e_a"))
    b = _pipeline_once(tmp_path_factory.mktemp("e2e_b"))
    return a, b


# ---------------------------------------------------------------------------
# criterion 1: architecture shape contract
# ---------------------------------------------------------------------------

def test_c1_architecture_shape_contract(rng):
    t0 = time.time()
    # 64^3 probes at 64-bit across every conditioning mode
    x64 = torch.tensor(rng.uniform(-1, 1, size=(1, 1, 64, 64, 64)), dtype=torch.float64)
    for mode in ("none", "image_add", "latent_add", "latent_concat"):
        torch.manual_seed(0)
        g = build_generator(GeneratorSpec(), mode).double().eval()
        with torch.no_grad():
            f = g.bottleneck(x64, 0.5 if mode != "none" else None)
            assert f.shape == (1, 128, 8, 8, 8)
            assert g.decode(g.blocks(f)).shape == x64.shape

    # one 128^3 probe: bottleneck exactly (128,16,16,16); pre-fusion concat
    # exactly (129,16,16,16)
    torch.manual_seed(0)
    g = build_generator(GeneratorSpec(), "latent_concat").double().eval()
    x128 = torch.zeros(1, 1, 128, 128, 128, dtype=torch.float64)
    with torch.no_grad():
        f = g.encode(x128)
        assert f.shape == (1, 128, 16, 16, 16)
        stacked = stack_condition_channel(f, 0.5)
        assert stacked.shape == (1, 129, 16, 16, 16)
        fused = g.fusion(stacked)
        assert fused.shape == (1, 128, 16, 16, 16)
    elapsed = time.time() - t0
    assert elapsed < SHAPE_SECONDS_BUDGET
    print(f"\nACCEPT C1 PASS: bottleneck (128,16,16,16), concat (129,16,16,16) "
          f"[{elapsed:.1f}s]")


# ---------------------------------------------------------------------------
# criterion 2: loss algebra
# ---------------------------------------------------------------------------

def test_c2_loss_algebra(rng):
    w = LossWeights(lambda_cyc1=10.0, lambda_cyc2=10.0, lambda_idt=0.3)
    terms = CompositeTerms(adv_m2p=0.0, adv_p2m=0.0, cycle_m=0.1, cycle_p=0.1,
                           identity=0.2)
    assert abs(cyclegan_objective(terms, w) - 2.06) < 1e-12

    for _ in range(50):
        vals = rng.uniform(0.0, 3.0, size=5)
        t = CompositeTerms(*[float(v) for v in vals])
        by_hand = (vals[0] + vals[1] + 10.0 * vals[2] + 10.0 * vals[3] + 0.3 * vals[4])
        assert abs(cyclegan_objective(t, w) - by_hand) < 1e-12
        ws = LossWeights(lambda_cyc1=10.0, lambda_cyc2=10.0, lambda_idt=0.5)
        assert sharegan_objective(t, ws) == cyclegan_objective(t, ws)

    with pytest.raises(ValueError):
        LossWeights(lambda_cls=0.25)
    print("\nACCEPT C2 PASS: composite objectives reproduce hand arithmetic to 1e-12")


# ---------------------------------------------------------------------------
# criterion 3: gradient suite
# ---------------------------------------------------------------------------

def _autograd_vs_fd(fn, free: torch.Tensor, n_probe: int, eps: float, tol: float, rng):
    x = free.clone().requires_grad_(True)
    fn(x).backward()
    flat = x.grad.flatten()
    idxs = rng.choice(free.numel(), size=min(n_probe, free.numel()), replace=False)
    for i in idxs:
        i = int(i)
        with torch.no_grad():
            up = free.flatten().clone()
            up[i] += eps
            dn = free.flatten().clone()
            dn[i] -= eps
            fd = (fn(up.view(free.shape)).item() - fn(dn.view(free.shape)).item()) / (2 * eps)
        assert rel_err(flat[i].item(), fd) < tol, f"index {i}: {flat[i].item()} vs {fd}"


def test_c3_gradient_suite(rng):
    t0 = time.time()
    f64 = torch.float64

    # pure losses at < 1e-6
    real = torch.tensor(rng.normal(size=6), dtype=f64)
    fake0 = torch.tensor(rng.normal(size=6), dtype=f64)
    _autograd_vs_fd(lambda s: cgan_loss(real, s)[0], fake0, 6, 1e-6, 1e-6, rng)
    _autograd_vs_fd(lambda s: cgan_loss(real, s)[1], fake0, 6, 1e-6, 1e-6, rng)
    _autograd_vs_fd(lambda s: cgan_loss(s, fake0)[1], real, 6, 1e-6, 1e-6, rng)

    y = torch.tensor(rng.normal(size=(4, 4, 4)), dtype=f64)
    yhat0 = torch.tensor(rng.normal(size=(4, 4, 4)), dtype=f64)
    _autograd_vs_fd(lambda t: l1_loss(t, y), yhat0, 8, 1e-7, 1e-6, rng)
    _autograd_vs_fd(lambda t: cycle_loss(y, t), yhat0, 8, 1e-7, 1e-6, rng)
    _autograd_vs_fd(lambda t: identity_loss(t, y), yhat0, 8, 1e-7, 1e-6, rng)

    w = LossWeights(lambda_idt=0.3)
    term0 = torch.tensor(rng.uniform(0, 1, size=5), dtype=f64)
    _autograd_vs_fd(
        lambda t: cyclegan_objective(CompositeTerms(t[0], t[1], t[2], t[3], t[4]), w),
        term0, 5, 1e-7, 1e-6, rng,
    )
    _autograd_vs_fd(
        lambda t: pix2pix_objective(t[0], t[1], w),
        term0[:2].clone(), 2, 1e-7, 1e-6, rng,
    )

    # network forward maps at < 1e-3 (inputs <= 32^3, 64-bit)
    torch.manual_seed(5)
    for mode in ("none", "latent_concat"):
        g = build_generator(GeneratorSpec(), mode).double().eval()
        x0 = torch.tensor(rng.uniform(-0.8, 0.8, size=(1, 1, 16, 16, 16)), dtype=f64)
        cond = 0.37 if mode != "none" else None
        _autograd_vs_fd(lambda t: g(t, cond).sum(), x0, 4, 1e-5, 1e-3, rng)

    d = build_discriminator(DiscriminatorSpec()).double().eval()
    xd0 = torch.tensor(rng.uniform(-0.8, 0.8, size=(1, 1, 32, 32, 32)), dtype=f64)
    _autograd_vs_fd(lambda t: d(t).sum(), xd0, 4, 1e-5, 1e-3, rng)

    elapsed = time.time() - t0
    assert elapsed < GRADIENT_SECONDS_BUDGET
    print(f"\nACCEPT C3 PASS: losses and forward maps match central differences "
          f"[{elapsed:.1f}s]")


# ---------------------------------------------------------------------------
# criterion 4: metric oracles
# ---------------------------------------------------------------------------

def test_c4_metric_oracles(rng):
    worst = 0.0
    for _ in range(100):
        a = rng.uniform(0, 255, size=(16, 16, 16))
        b = np.clip(a + rng.normal(scale=rng.uniform(1, 80), size=a.shape), 0, 255)
        worst = max(worst, abs(ssim3d(a, b) - brute_force_ssim(a, b)))
    assert worst < 1e-6

    a = rng.uniform(0, 255, size=(12, 12, 12))
    b = rng.uniform(0, 255, size=(12, 12, 12))
    assert psnr(a, b, 255.0) == 10.0 * math.log10(255.0**2 / mse(a, b))

    n, target = 186, 0.807
    x = rng.normal(size=n)
    xh = (x - x.mean()) / np.linalg.norm(x - x.mean())
    z = rng.normal(size=n)
    z -= z.mean()
    z -= (z @ xh) * xh
    y = target * xh + math.sqrt(1 - target**2) * z / np.linalg.norm(z)
    r, p = pearson(x, y)
    assert abs(r - target) < 1e-12
    assert 5.6e-45 < p < 5.6e-43
    print(f"\nACCEPT C4 PASS: ssim oracle dev {worst:.2e}, psnr identity exact, "
          f"p(n=186, r=0.807) = {p:.2e}")


# ---------------------------------------------------------------------------
# criterion 5: parameter sharing
# ---------------------------------------------------------------------------

def test_c5_sharegan_parameter_sharing(rng):
    spec = GeneratorSpec()
    g1 = build_generator(spec, "latent_concat")
    g2 = build_generator(spec, "latent_concat")
    shared = tie_generators(g1, g2)
    assert count_parameters(g1) + count_parameters(g2) == 2 * count_parameters(shared)

    x = torch.tensor(rng.uniform(-1, 1, size=(1, 1, 16, 16, 16)), dtype=torch.float32)
    shared.eval()
    with torch.no_grad():
        before = shared.p2m(x, 0.5).clone()
    opt = torch.optim.SGD(shared.parameters(), lr=0.2)
    opt.zero_grad()
    shared.m2p(x, 0.5).abs().mean().backward()
    opt.step()
    with torch.no_grad():
        after = shared.p2m(x, 0.5)
    assert not torch.equal(before, after)
    print("\nACCEPT C5 PASS: one parameter set serves both directions and "
          "updates are mutually visible")


# ---------------------------------------------------------------------------
# criteria 6 and 7: tiny-overfit smoke run and conditioning sensitivity
# ---------------------------------------------------------------------------

def _l1_series(history):
    return [(row["step"], row["value"]) for row in history if row["term"] == "l1_m2p"]


def test_c6_tiny_overfit_smoke(smoke_runs):
    run_a, _ = smoke_runs
    series = dict(_l1_series(run_a["result"].history))
    assert max(series) == 200
    at_10 = series[10]
    tail = float(np.mean([v for s, v in series.items() if s > 190]))
    assert tail <= 0.5 * at_10, f"L1 {at_10:.4f} -> {tail:.4f}"
    assert run_a["elapsed"] < SMOKE_SECONDS_BUDGET
    print(f"\nACCEPT C6 PASS: MRI->PET L1 {at_10:.4f} @step10 -> {tail:.4f} tail "
          f"({100 * (1 - tail / at_10):.0f}% drop) [{run_a['elapsed']:.0f}s]")


def test_c7_conditioning_sensitivity(smoke_runs):
    run_a, _ = smoke_runs
    ckpt = load_checkpoint(run_a["result"].final_checkpoint)
    entry = run_a["entries"][0]
    mri = read_volume(entry.mri_path)
    x = torch.from_numpy(normalize_intensity(mri, ckpt.stats["mri"]).data)[None, None]

    g = ckpt.build_m2p()
    with torch.no_grad():
        diff = (g(x, 0.0) - g(x, 1.0)).abs().mean().item()
    assert diff > 1e-4

    gd = g.double()
    xd = x.double()
    a = torch.tensor(0.5, dtype=torch.float64, requires_grad=True)
    gd(xd, a).sum().backward()
    grad = a.grad.item()
    eps = 1e-4
    with torch.no_grad():
        up = gd(xd, torch.tensor(0.5 + eps, dtype=torch.float64)).sum().item()
        dn = gd(xd, torch.tensor(0.5 - eps, dtype=torch.float64)).sum().item()
    fd = (up - dn) / (2 * eps)
    assert fd != 0.0
    assert rel_err(grad, fd) < 1e-3
    print(f"\nACCEPT C7 PASS: output diff {diff:.2e} for abeta 0->1, "
          f"d(out)/d(abeta) = {grad:.3f} (fd {fd:.3f})")


# ---------------------------------------------------------------------------
# criteria 8 and 9: end-to-end pipeline and determinism
# ---------------------------------------------------------------------------

def test_c8_end_to_end_pipeline(pipeline_runs):
    run_a, _ = pipeline_runs
    assert all(code == 0 for code in run_a["codes"].values()), run_a["codes"]

    entries = load_manifest(run_a["data"] / "manifest.csv")
    assignment = load_split(run_a["split"])
    by_split = {"train": set(), "val": set(), "test": set()}
    for sid, name in assignment.items():
        by_split[name].add(sid)
    assert not (by_split["train"] & by_split["val"])
    assert not (by_split["train"] & by_split["test"])
    assert not (by_split["val"] & by_split["test"])

    n_test = sum(1 for e in entries if assignment[e.subject_id] == "test")
    report_rows = (run_a["evaldir"] / "report.csv").read_text().strip().splitlines()
    assert len(report_rows) - 1 == n_test

    summary = json.loads((run_a["evaldir"] / "summary.json").read_text())
    assert summary["n_images"] == n_test
    assert summary["label_recovery_accuracy"] == 1.0
    print(f"\nACCEPT C8 PASS: pipeline exit codes 0, {n_test} test rows, "
          f"no leakage, ground-truth label recovery accuracy 1.0")


def test_c9_determinism(smoke_runs, pipeline_runs):
    run_a, run_b = smoke_runs
    assert run_a["result"].history == run_b["result"].history
    assert (run_a["result"].loss_log.read_text()
            == run_b["result"].loss_log.read_text())

    e2e_a, e2e_b = pipeline_runs
    for rel in sorted(
        p.relative_to(e2e_a["data"]) for p in e2e_a["data"].rglob("*") if p.is_file()
    ):
        assert (e2e_a["data"] / rel).read_bytes() == (e2e_b["data"] / rel).read_bytes(), rel
    assert (e2e_a["split"].read_text() == e2e_b["split"].read_text())
    assert ((e2e_a["rundir"] / "loss_log.csv").read_text()
            == (e2e_b["rundir"] / "loss_log.csv").read_text())
    assert ((e2e_a["evaldir"] / "report.csv").read_text()
            == (e2e_b["evaldir"] / "report.csv").read_text())
    assert ((e2e_a["evaldir"] / "summary.json").read_text()
            == (e2e_b["evaldir"] / "summary.json").read_text())
    print("\nACCEPT C9 PASS: identical seeds give identical loss logs and "
          "bitwise-identical artifacts")
