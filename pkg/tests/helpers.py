"""Shared test utilities: finite-difference oracles and tiny dataset builders."""

from __future__ import annotations

import numpy as np
import torch

from mri2pet.phantom import PhantomSpec, generate_dataset, write_dataset
from mri2pet.volume import Volume


def rand_volume(rng: np.random.Generator, shape=(16, 16, 16), lo=-1.0, hi=1.0) -> Volume:
    return Volume(rng.uniform(lo, hi, size=shape).astype(np.float32))


def central_diff(f, x0: float, eps: float = 1e-5) -> float:
    return (f(x0 + eps) - f(x0 - eps)) / (2.0 * eps)


def rel_err(a: float, b: float, floor: float = 1e-12) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def fd_input_grad(fn, x: torch.Tensor, index: tuple, eps: float = 1e-5) -> float:
    """Central difference of a scalar-valued fn w.r.t. one tensor element."""
    with torch.no_grad():
        xp = x.clone()
        xp[index] += eps
        xm = x.clone()
        xm[index] -= eps
        return (fn(xp).item() - fn(xm).item()) / (2.0 * eps)


def brute_force_ssim(a, b, window=11, sigma=1.5, max_val=255.0):
    """Dense sliding-window reference: full 3D kernel, explicit window stats."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    half = (window - 1) / 2.0
    g = np.arange(window) - half
    gz, gy, gx = np.meshgrid(g, g, g, indexing="ij")
    k = np.exp(-(gz**2 + gy**2 + gx**2) / (2 * sigma**2))
    k /= k.sum()
    wx = np.lib.stride_tricks.sliding_window_view(x, (window,) * 3)
    wy = np.lib.stride_tricks.sliding_window_view(y, (window,) * 3)
    mu_x = np.tensordot(wx, k, axes=3)
    mu_y = np.tensordot(wy, k, axes=3)
    e_xx = np.tensordot(wx * wx, k, axes=3)
    e_yy = np.tensordot(wy * wy, k, axes=3)
    e_xy = np.tensordot(wx * wy, k, axes=3)
    var_x = e_xx - mu_x**2
    var_y = e_yy - mu_y**2
    cov = e_xy - mu_x * mu_y
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return float(s.mean())


def write_phantom_dataset(tmp_path, n_subjects=4, images_per_subject=1,
                          shape=(32, 32, 32), seed=0, **kw):
    spec = PhantomSpec(
        shape=shape, n_subjects=n_subjects, images_per_subject=images_per_subject,
        seed=seed, **kw,
    )
    samples, masks = generate_dataset(spec)
    manifest = write_dataset(samples, masks, tmp_path)
    return spec, manifest, masks
