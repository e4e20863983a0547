"""Seeded 3D training augmentations: additive noise, recursive Gaussian
smoothing, rotation, flip, translation, brightness/contrast, and the random
pipeline composer that keeps MRI/PET geometry locked together."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import affine_transform

from .volume import PairedSample, Volume

AUGMENT_STEPS = ("smooth", "noise", "rotation", "flip", "translation", "brightness_contrast")


@dataclass(frozen=True)
class AugmentConfig:
    noise_sigma: float = 0.02
    smooth_sigma: float = 1.0          # voxels; 0 disables the smoothing step
    max_rotation_deg: float = 10.0
    flip_axes: tuple[int, ...] = (0, 1, 2)
    brightness_delta: float = 0.1
    contrast_range: tuple[float, float] = (0.9, 1.1)
    max_translation_voxels: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.smooth_sigma < 0:
            raise ValueError("smooth_sigma must be >= 0")
        if self.max_rotation_deg < 0:
            raise ValueError("max_rotation_deg must be >= 0")
        if self.contrast_range[0] > self.contrast_range[1]:
            raise ValueError("contrast_range lo must be <= hi")
        if self.max_translation_voxels < 0:
            raise ValueError("max_translation_voxels must be >= 0")
        if any(a not in (0, 1, 2) for a in self.flip_axes):
            raise ValueError("flip_axes must be a subset of {0,1,2}")
        object.__setattr__(self, "flip_axes", tuple(self.flip_axes))
        object.__setattr__(self, "contrast_range", tuple(self.contrast_range))


def additive_gaussian_noise(v: Volume, sigma: float, rng: np.random.Generator) -> Volume:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return Volume(v.data.copy(), v.spacing)
    noise = rng.normal(0.0, sigma, size=v.shape)
    return Volume(v.data + noise.astype(np.float32), v.spacing)


# ---------------------------------------------------------------------------
# Recursive Gaussian smoothing: Deriche's 4th-order IIR approximation, run
# forward+backward per axis on a reflect-padded signal. DC gain is normalized
# to exactly 1, so constants and total mass are preserved.
# ---------------------------------------------------------------------------

_DERICHE = dict(a0=1.6800, a1=3.7350, c0=-0.6803, c1=-0.2598,
                b0=1.7830, b1=1.7230, w0=0.6318, w1=1.9970)


def _deriche_coeffs(sigma: float):
    p = _DERICHE
    e0, e1 = np.exp(-p["b0"] / sigma), np.exp(-p["b1"] / sigma)
    cw0, sw0 = np.cos(p["w0"] / sigma), np.sin(p["w0"] / sigma)
    cw1, sw1 = np.cos(p["w1"] / sigma), np.sin(p["w1"] / sigma)
    # each damped cosine pair is a 2nd-order section; combine into one 4th-order
    num_a = [p["a0"], -e0 * (p["a0"] * cw0 - p["a1"] * sw0)]
    den_a = [1.0, -2.0 * e0 * cw0, e0 * e0]
    num_b = [p["c0"], -e1 * (p["c0"] * cw1 - p["c1"] * sw1)]
    den_b = [1.0, -2.0 * e1 * cw1, e1 * e1]
    num = np.polymul(num_a, den_b) + np.polymul(num_b, den_a)
    den = np.polymul(den_a, den_b)
    n = np.zeros(5)
    n[: num.size] = num
    d = den
    # anticausal numerator so that causal+anticausal tile the symmetric response
    m = np.zeros(5)
    for k in range(1, 5):
        m[k] = n[k] - d[k] * n[0]
    gain = (n.sum() + m.sum()) / d.sum()
    return n / gain, m / gain, d


def _deriche_axis(arr: np.ndarray, sigma: float, axis: int) -> np.ndarray:
    n, m, d = _deriche_coeffs(sigma)
    pad = int(np.ceil(8.0 * sigma)) + 8
    x = np.moveaxis(arr, axis, 0)
    lead = x.shape[0]
    x = np.pad(x, [(pad, pad)] + [(0, 0)] * (x.ndim - 1), mode="reflect")
    total = x.shape[0]
    flat = x.reshape(total, -1)
    causal = np.zeros_like(flat)
    for i in range(total):
        acc = n[0] * flat[i]
        for k in range(1, 4):
            if i - k >= 0:
                acc += n[k] * flat[i - k]
        for k in range(1, 5):
            if i - k >= 0:
                acc -= d[k] * causal[i - k]
        causal[i] = acc
    anti = np.zeros_like(flat)
    for i in range(total - 1, -1, -1):
        acc = np.zeros(flat.shape[1])
        for k in range(1, 5):
            if i + k < total:
                acc += m[k] * flat[i + k] - d[k] * anti[i + k]
        anti[i] = acc
    out = (causal + anti)[pad : pad + lead].reshape(x.shape[0] - 2 * pad, *x.shape[1:])
    return np.moveaxis(out, 0, axis)


def recursive_gaussian_smooth(v: Volume, sigma: float) -> Volume:
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    out = v.data.astype(np.float64)
    for axis in range(3):
        out = _deriche_axis(out, sigma, axis)
    return Volume(out.astype(np.float32), v.spacing)


# ---------------------------------------------------------------------------
# Geometric transforms. Rotation and translation fill exposed voxels with the
# volume minimum (the background level of a normalized image).
# ---------------------------------------------------------------------------

def _rotation_matrix(angles_deg) -> np.ndarray:
    mats = []
    for axis, deg in enumerate(angles_deg):
        th = np.deg2rad(deg)
        c, s = np.cos(th), np.sin(th)
        r = np.eye(3)
        i, j = [a for a in range(3) if a != axis]
        r[i, i], r[i, j] = c, -s
        r[j, i], r[j, j] = s, c
        mats.append(r)
    # apply axis-0 rotation first, then 1, then 2
    return mats[2] @ mats[1] @ mats[0]


def random_rotation(v: Volume, angles_deg: tuple[float, float, float]) -> Volume:
    if all(a == 0 for a in angles_deg):
        return Volume(v.data.copy(), v.spacing)
    r = _rotation_matrix(angles_deg)
    center = (np.asarray(v.shape, dtype=np.float64) - 1.0) / 2.0
    inv = r.T  # sample input at R^-1 (out - c) + c
    offset = center - inv @ center
    fill = float(v.data.min())
    out = affine_transform(
        v.data.astype(np.float64), inv, offset=offset, order=1,
        mode="constant", cval=fill,
    )
    return Volume(out.astype(np.float32), v.spacing)


def random_flip(v: Volume, axis: int) -> Volume:
    if axis not in (0, 1, 2):
        raise ValueError(f"axis must be 0, 1, or 2, got {axis}")
    return Volume(np.flip(v.data, axis=axis).copy(), v.spacing)


def brightness_contrast(
    v: Volume, delta: float, gain: float, clamp: tuple[float, float] = (-1.0, 1.0)
) -> Volume:
    mean = float(v.data.mean())
    out = gain * (v.data.astype(np.float64) - mean) + mean + delta
    out = np.clip(out, clamp[0], clamp[1])
    return Volume(out.astype(np.float32), v.spacing)


def translate(v: Volume, offset: tuple[int, int, int]) -> Volume:
    offset = tuple(int(o) for o in offset)
    fill = float(v.data.min())
    out = np.full(v.shape, fill, dtype=np.float32)
    src = []
    dst = []
    for size, o in zip(v.shape, offset):
        if abs(o) >= size:
            return Volume(out, v.spacing)
        if o >= 0:
            src.append(slice(0, size - o))
            dst.append(slice(o, size))
        else:
            src.append(slice(-o, size))
            dst.append(slice(0, size + o))
    out[tuple(dst)] = v.data[tuple(src)]
    return Volume(out, v.spacing)


# ---------------------------------------------------------------------------
# Random pipeline: a uniformly drawn nonempty subset of the six steps, applied
# in canonical order. Geometry (rotation/flip/translation) uses one shared draw
# for both modalities; intensity steps draw independently per modality.
# ---------------------------------------------------------------------------

def compose_random_pipeline(
    sample: PairedSample, cfg: AugmentConfig, rng: np.random.Generator
) -> PairedSample:
    include = rng.random(len(AUGMENT_STEPS)) < 0.5
    while not include.any():
        include = rng.random(len(AUGMENT_STEPS)) < 0.5
    selected = {name for name, on in zip(AUGMENT_STEPS, include) if on}

    mri, pet = sample.mri, sample.pet

    if "smooth" in selected and cfg.smooth_sigma > 0:
        mri = recursive_gaussian_smooth(mri, cfg.smooth_sigma)
        pet = recursive_gaussian_smooth(pet, cfg.smooth_sigma)

    if "noise" in selected and cfg.noise_sigma > 0:
        mri = additive_gaussian_noise(mri, cfg.noise_sigma, rng)
        pet = additive_gaussian_noise(pet, cfg.noise_sigma, rng)

    if "rotation" in selected and cfg.max_rotation_deg > 0:
        angles = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg, size=3)
        mri = random_rotation(mri, tuple(angles))
        pet = random_rotation(pet, tuple(angles))

    if "flip" in selected and cfg.flip_axes:
        axis = int(rng.choice(np.asarray(cfg.flip_axes)))
        mri = random_flip(mri, axis)
        pet = random_flip(pet, axis)

    if "translation" in selected and cfg.max_translation_voxels > 0:
        k = cfg.max_translation_voxels
        off = tuple(int(o) for o in rng.integers(-k, k + 1, size=3))
        mri = translate(mri, off)
        pet = translate(pet, off)

    if "brightness_contrast" in selected:
        lo, hi = cfg.contrast_range
        for which in ("mri", "pet"):
            delta = float(rng.uniform(-cfg.brightness_delta, cfg.brightness_delta))
            gain = float(rng.uniform(lo, hi))
            if delta == 0.0 and gain == 1.0:
                continue
            if which == "mri":
                mri = brightness_contrast(mri, delta, gain)
            else:
                pet = brightness_contrast(pet, delta, gain)

    return PairedSample(sample.subject_id, mri, pet, sample.abeta_ratio)
