"""Image-quality metrics, measurement residual and Monte Carlo moments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

PSNR_CAP = 100.0


def psnr(x, ref, peak: float = 1.0) -> float:
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {ref.shape}")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak ** 2 / mse))


def ssim(x, ref, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean SSIM over a Gaussian-weighted sliding window.

    Local statistics use a Gaussian filter truncated to ``window`` pixels with
    unbiased (``N / (N - 1)``) covariance; the border of half a window is
    excluded from the mean.
    """
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape or x.ndim != 2:
        raise ValueError("ssim needs two 2-D images of the same shape")
    if min(x.shape) < window:
        raise ValueError(f"image side {min(x.shape)} is smaller than the window {window}")
    radius = (window - 1) // 2
    filt = lambda a: gaussian_filter(a, sigma, mode="reflect", truncate=radius / sigma)
    npix = window ** 2
    cov_norm = npix / (npix - 1)
    ux, uy = filt(x), filt(ref)
    vx = cov_norm * (filt(x * x) - ux * ux)
    vy = cov_norm * (filt(ref * ref) - uy * uy)
    vxy = cov_norm * (filt(x * ref) - ux * uy)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux ** 2 + uy ** 2 + c1) * (vx + vy + c2))
    return float(s[radius:-radius, radius:-radius].mean())


def measurement_residual(op, y, x) -> float:
    """``0.5 ||y - A(x)||^2``."""
    r = np.asarray(y, dtype=np.float64) - op.apply(x)
    return 0.5 * float(r @ r)


@dataclass(frozen=True)
class MCMoments:
    mean: np.ndarray
    cov: np.ndarray
    stderr_mean: np.ndarray
    n: int


def mc_moments(samples) -> MCMoments:
    """Unbiased sample mean and covariance of an ``(N, d)`` array."""
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim == 1:
        s = s[:, None]
    n = s.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    mean = s.mean(axis=0)
    c = s - mean
    cov = c.T @ c / (n - 1)
    return MCMoments(mean, cov, np.sqrt(np.diag(cov) / n), n)


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float | None
    residual: float

    def __post_init__(self):
        if self.residual < 0:
            raise ValueError("residual must be >= 0")
        if self.ssim is not None and self.ssim > 1 + 1e-12:
            raise ValueError("ssim must be <= 1")

    def to_dict(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim, "residual": self.residual}
