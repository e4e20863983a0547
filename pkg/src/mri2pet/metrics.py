"""Volumetric image-quality metrics (SSIM/PSNR/MSE), regional uptake-ratio
quantification, Pearson correlation with exact t-distribution p-values, and
threshold classification statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d
from scipy.special import betainc

from .volume import Volume

AMYLOID_SUVR_THRESHOLD = 1.19


def _arr(v) -> np.ndarray:
    return np.asarray(v.data if isinstance(v, Volume) else v, dtype=np.float64)


def mse(a, b) -> float:
    x, y = _arr(a), _arr(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.mean((x - y) ** 2))


def psnr(a, b, max_val: float = 255.0) -> float:
    if max_val <= 0:
        raise ValueError("max_val must be > 0")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return float(10.0 * np.log10(max_val * max_val / err))


def to_eval_range(v, lo: float, hi: float) -> np.ndarray:
    """Map intensities from [lo, hi] to the 8-bit-like [0, 255] metric domain."""
    if hi <= lo:
        raise ValueError("requires hi > lo")
    x = (_arr(v) - lo) / (hi - lo)
    return np.clip(x, 0.0, 1.0) * 255.0


def _gaussian_kernel1d(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _windowed_sums(vol: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # constant-pad correlate then crop == sums over fully interior windows
    out = vol
    for axis in range(3):
        out = correlate1d(out, kernel, axis=axis, mode="constant", cval=0.0)
    r = kernel.size // 2
    return out[r:-r, r:-r, r:-r]


def ssim3d(a, b, window: int = 11, sigma: float = 1.5, max_val: float = 255.0) -> float:
    """Mean local SSIM over all fully interior Gaussian windows.

    The window is the separable 3D Gaussian of the given size and sigma;
    stabilizers are C1=(0.01*max_val)^2 and C2=(0.03*max_val)^2.
    """
    x, y = _arr(a), _arr(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if window % 2 != 1 or window < 3:
        raise ValueError("window must be an odd size >= 3")
    if min(x.shape) < window:
        raise ValueError(f"volume shape {x.shape} smaller than window {window}")

    k = _gaussian_kernel1d(window, sigma)
    mu_x = _windowed_sums(x, k)
    mu_y = _windowed_sums(y, k)
    e_xx = _windowed_sums(x * x, k)
    e_yy = _windowed_sums(y * y, k)
    e_xy = _windowed_sums(x * y, k)
    var_x = e_xx - mu_x * mu_x
    var_y = e_yy - mu_y * mu_y
    cov = e_xy - mu_x * mu_y

    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class RegionMasks:
    """Target (cortical composite) and cerebellum reference masks on the
    evaluation grid. Nonzero voxels belong to the region."""

    target_mask: Volume
    cerebellum_mask: Volume

    def __post_init__(self):
        if self.target_mask.shape != self.cerebellum_mask.shape:
            raise ValueError("masks must share one grid")
        t = self.target_bool
        c = self.cerebellum_bool
        if not t.any() or not c.any():
            raise ValueError("each mask must be nonempty")
        if (t & c).any():
            raise ValueError("target and cerebellum masks must be disjoint")

    @property
    def target_bool(self) -> np.ndarray:
        return self.target_mask.data > 0.5

    @property
    def cerebellum_bool(self) -> np.ndarray:
        return self.cerebellum_mask.data > 0.5

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.target_mask.shape


def mcsuvr(pet, masks: RegionMasks) -> float:
    """Mean uptake over the target region divided by the cerebellum mean."""
    x = _arr(pet)
    if x.shape != masks.shape:
        raise ValueError(f"volume shape {x.shape} does not match masks {masks.shape}")
    ref = float(x[masks.cerebellum_bool].mean())
    if ref <= 0:
        raise ValueError(f"cerebellum mean must be positive, got {ref}")
    return float(x[masks.target_bool].mean() / ref)


def pearson(x, y) -> tuple[float, float]:
    """Sample correlation and its two-sided p-value from the exact Student-t
    distribution (regularized incomplete beta), valid far into the tails."""
    xv = np.asarray(x, dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    if xv.size != yv.size:
        raise ValueError("inputs must have equal length")
    n = xv.size
    if n < 3:
        raise ValueError("need at least 3 points")
    xd = xv - xv.mean()
    yd = yv - yv.mean()
    sx = float(np.sqrt((xd * xd).sum()))
    sy = float(np.sqrt((yd * yd).sum()))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("zero variance input")
    r = float((xd * yd).sum() / (sx * sy))
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        return r, 0.0
    t2 = r * r * df / (1.0 - r * r)
    p = float(betainc(df / 2.0, 0.5, df / (df + t2)))
    return r, p


def classify_amyloid(values, threshold: float = AMYLOID_SUVR_THRESHOLD) -> np.ndarray:
    """Positive iff the value strictly exceeds the threshold."""
    v = np.asarray(values, dtype=np.float64)
    if not np.isfinite(v).all():
        raise ValueError("uptake ratios must be finite")
    return v > threshold


def accuracy_f1(pred, truth) -> tuple[float, float]:
    p = np.asarray(pred, dtype=bool).ravel()
    t = np.asarray(truth, dtype=bool).ravel()
    if p.size != t.size:
        raise ValueError("length mismatch")
    if p.size == 0:
        raise ValueError("empty inputs")
    acc = float((p == t).mean())
    tp = int((p & t).sum())
    fp = int((p & ~t).sum())
    fn = int((~p & t).sum())
    denom = 2 * tp + fp + fn
    f1 = 0.0 if denom == 0 else 2.0 * tp / denom
    return acc, f1
