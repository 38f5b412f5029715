"""Image-quality metrics quantifying how visible a perturbation is."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..encoder import ImageTensor
from ..errors import ArgumentError, ShapeError

PSNR_SENTINEL_DB = 99.0  # stands in for +inf when images are identical
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_DYNAMIC_RANGE = 1.0


@dataclass(frozen=True)
class QualityReport:
    psnr_db: float
    psnr_infinite: bool
    ssim: float
    mean_abs_diff: float


def _check_same_dims(a: ImageTensor, b: ImageTensor):
    if a.pixels.shape != b.pixels.shape:
        raise ShapeError(f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")


def psnr(a: ImageTensor, b: ImageTensor) -> float:
    """Peak signal-to-noise ratio in dB with peak value 1.0.

    Identical images return the capped sentinel 99.0 dB; pair with
    :func:`quality_report` to get the explicit infinity flag.
    """
    _check_same_dims(a, b)
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL_DB
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: ImageTensor, b: ImageTensor) -> float:
    """Mean structural similarity over 8x8 sliding windows (stride 1).

    Images are converted to grayscale by channel mean; window statistics are
    unweighted population moments; constants K1=0.01, K2=0.03 with dynamic
    range 1.0.
    """
    _check_same_dims(a, b)
    h, w = a.pixels.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ArgumentError(
            f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    ga = a.pixels.mean(axis=2)
    gb = b.pixels.mean(axis=2)
    wa = np.lib.stride_tricks.sliding_window_view(ga, (SSIM_WINDOW, SSIM_WINDOW))
    wb = np.lib.stride_tricks.sliding_window_view(gb, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = (wa * wa).mean(axis=(-2, -1)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(-2, -1)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    c1 = (SSIM_K1 * SSIM_DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_DYNAMIC_RANGE) ** 2
    s = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(s.mean())


def mean_abs_diff(a: ImageTensor, b: ImageTensor) -> float:
    _check_same_dims(a, b)
    return float(np.mean(np.abs(a.pixels - b.pixels)))


def quality_report(a: ImageTensor, b: ImageTensor) -> QualityReport:
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    return QualityReport(
        psnr_db=psnr(a, b),
        psnr_infinite=(mse == 0.0),
        ssim=ssim(a, b),
        mean_abs_diff=mean_abs_diff(a, b),
    )
