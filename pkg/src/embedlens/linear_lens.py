"""Local linear analysis of the representation map.

Treats the encoder near an input as its Jacobian: isotropic pixel noise then
maps to a known embedding covariance, the two-class score becomes a scalar
normal variable, and its classification probability follows from the normal
CDF. Exact for the linear surrogate; a small-sigma approximation for the real
encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .autodiff import jacobian as encoder_jacobian
from .encoder import EncoderConfig, EncoderParams, ImageTensor, vision_encode
from .errors import ArgumentError, ShapeError
from .numerics import derive_seed, reduced_svd, sample_gaussian


@dataclass(frozen=True)
class NoiseModel:
    """Isotropic per-pixel Gaussian noise with standard deviation sigma_n."""

    sigma_n: float

    def __post_init__(self):
        if self.sigma_n < 0:
            raise ArgumentError(f"sigma_n must be >= 0, got {self.sigma_n}")


@dataclass(frozen=True)
class BinaryScoreStats:
    """Mean/variance of the two-class score under linearized pixel noise,
    and the resulting predicted probability of deciding class t0."""

    mean: float
    variance: float
    predicted_p_t0: float


@dataclass
class SpectrumReport:
    singular_values: np.ndarray
    effective_rank: int
    s_max: float
    tau: float


class RepresentationMap(Protocol):
    """Anything that embeds a flat input vector and exposes a Jacobian."""

    def embed(self, x: np.ndarray) -> np.ndarray: ...

    def jacobian(self, x: np.ndarray) -> np.ndarray: ...


class PixelMap:
    """Flat-pixel adapter of the vision tower for the analysis functions."""

    def __init__(self, params: EncoderParams):
        self.params = params
        self.config: EncoderConfig = params.config

    def _image(self, x: np.ndarray) -> ImageTensor:
        cfg = self.config
        return ImageTensor(
            np.asarray(x, dtype=np.float64).reshape(cfg.image_hw, cfg.image_hw, cfg.channels)
        )

    def embed(self, x: np.ndarray) -> np.ndarray:
        return vision_encode(self.params, self._image(x))

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return encoder_jacobian(self.params, self._image(x)).J


def normal_cdf(x: float) -> float:
    """Standard normal CDF via erf; accurate to well below 1e-10."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def noise_covariance(j: np.ndarray, sigma_n: float) -> np.ndarray:
    """Embedding covariance (J J^T) * sigma_n^2 induced by isotropic pixel noise.

    Symmetrized against round-off; positive semidefinite by construction.
    """
    if sigma_n < 0:
        raise ArgumentError(f"sigma_n must be >= 0, got {sigma_n}")
    j = np.asarray(j, dtype=np.float64)
    if j.ndim != 2:
        raise ShapeError("noise_covariance expects a matrix Jacobian")
    m = (j @ j.T) * (sigma_n * sigma_n)
    return (m + m.T) / 2.0


def binary_score_stats(f_x: np.ndarray, t0_emb: np.ndarray, t1_emb: np.ndarray,
                       j: np.ndarray, sigma_n: float) -> BinaryScoreStats:
    """Statistics of the score f(x)^T (t0 - t1) under linearized pixel noise.

    mean uses the clean embedding; variance is delta^T (J J^T) delta sigma^2
    with delta = t0 - t1. The predicted probability of deciding t0 is
    Phi(mean / sqrt(variance)), with the zero-variance convention 1/0 by the
    sign of the mean and 0.5 at mean exactly 0.
    """
    f_x = np.asarray(f_x, dtype=np.float64)
    delta = np.asarray(t0_emb, dtype=np.float64) - np.asarray(t1_emb, dtype=np.float64)
    if f_x.shape != delta.shape:
        raise ShapeError(f"embedding shapes differ: {f_x.shape} vs {delta.shape}")
    j = np.asarray(j, dtype=np.float64)
    if j.shape[0] != f_x.shape[0]:
        raise ShapeError(f"Jacobian rows {j.shape[0]} != embedding length {f_x.shape[0]}")
    mean = float(f_x @ delta)
    variance = float(delta @ noise_covariance(j, sigma_n) @ delta)
    variance = max(variance, 0.0)  # clip round-off negatives
    if variance == 0.0:
        p = 0.5 if mean == 0.0 else (1.0 if mean > 0.0 else 0.0)
    else:
        p = normal_cdf(mean / math.sqrt(variance))
    return BinaryScoreStats(mean=mean, variance=variance, predicted_p_t0=p)


@dataclass(frozen=True)
class PredictionRow:
    sigma: float
    predicted_p: float
    empirical_p: float
    std_err: float


def predicted_vs_empirical(rep_map: RepresentationMap, x: np.ndarray,
                           t0_emb: np.ndarray, t1_emb: np.ndarray,
                           sigma_list: Sequence[float], n_samples: int,
                           seed: int) -> list[PredictionRow]:
    """Predicted vs Monte Carlo probability of deciding t0 at each noise level.

    Empirical probability is the fraction of noisy draws whose score
    f(x + eta)^T (t0 - t1) is positive; std_err is the binomial standard
    error sqrt(p (1 - p) / n).
    """
    if n_samples < 100:
        raise ArgumentError(f"n_samples must be >= 100, got {n_samples}")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    delta = np.asarray(t0_emb, dtype=np.float64) - np.asarray(t1_emb, dtype=np.float64)
    f_x = rep_map.embed(x)
    j = rep_map.jacobian(x)
    rows = []
    for sigma in sigma_list:
        stats = binary_score_stats(f_x, t0_emb, t1_emb, j, sigma)
        hits = 0
        for i in range(n_samples):
            eta = sample_gaussian(x.shape[0], sigma, derive_seed(seed, float(sigma), i))
            if rep_map.embed(x + eta) @ delta > 0.0:
                hits += 1
        p = hits / n_samples
        rows.append(PredictionRow(
            sigma=float(sigma),
            predicted_p=stats.predicted_p_t0,
            empirical_p=p,
            std_err=math.sqrt(p * (1.0 - p) / n_samples),
        ))
    return rows


def spectrum_report(j: np.ndarray, tau: float = 0.01) -> SpectrumReport:
    """Sorted singular values of a Jacobian and the count above tau * s_max."""
    if tau < 0:
        raise ArgumentError(f"tau must be >= 0, got {tau}")
    svd = reduced_svd(np.asarray(j, dtype=np.float64))
    s_max = float(svd.S[0]) if svd.S.size else 0.0
    eff = int(np.count_nonzero(svd.S >= tau * s_max)) if s_max > 0 else 0
    return SpectrumReport(singular_values=svd.S, effective_rank=eff, s_max=s_max, tau=tau)


def monte_carlo_embedding_covariance(rep_map: RepresentationMap, x: np.ndarray,
                                     sigma: float, n_samples: int,
                                     seed: int) -> np.ndarray:
    """Sample covariance of f(x + eta) - f(x) over i.i.d. Gaussian pixel noise.

    The Monte Carlo counterpart of :func:`noise_covariance`; draws are
    sequential with seeds derived per index, so results are reproducible.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    f0 = rep_map.embed(x)
    n = f0.shape[0]
    s1 = np.zeros(n)
    s2 = np.zeros((n, n))
    for i in range(n_samples):
        eta = sample_gaussian(x.shape[0], sigma, derive_seed(seed, "mc", i))
        d = rep_map.embed(x + eta) - f0
        s1 += d
        s2 += np.outer(d, d)
    mean = s1 / n_samples
    return s2 / n_samples - np.outer(mean, mean)
