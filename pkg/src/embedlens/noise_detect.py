"""Monte Carlo noise-robustness experiments and the noise-based detector of
embedding-aligned images.

The detector exploits the observed asymmetry: matched images flip their label
under far smaller Gaussian noise than their source originals, so disagreement
between the clean label and noisy labels flags modification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .classifier import ConfusionMatrix, EmbedFn, LabelSet, classify
from .encoder import ImageTensor
from .errors import ArgumentError
from .numerics import derive_seed, sample_gaussian


@dataclass(frozen=True)
class NoiseExperimentConfig:
    sigma: float
    n_samples: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ArgumentError(f"sigma must be >= 0, got {self.sigma}")
        if self.n_samples < 1:
            raise ArgumentError("n_samples must be >= 1")


@dataclass(frozen=True)
class DetectionConfig:
    sigma: float
    votes: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ArgumentError(f"sigma must be >= 0, got {self.sigma}")
        if self.votes < 1 or self.votes % 2 == 0:
            raise ArgumentError(f"votes must be an odd count >= 1, got {self.votes}")


@dataclass(frozen=True)
class SweepRow:
    sigma: float
    accuracy: float
    fpr: float  # originals wrongly flagged as modified
    fnr: float  # modified images missed
    n_orig: int
    n_mod: int


@dataclass
class DetectionSweepReport:
    rows: list[SweepRow]


def add_noise(img: ImageTensor, sigma: float, seed: int) -> ImageTensor:
    """Add i.i.d. N(0, sigma^2) to every pixel, then clamp to [0, 1]."""
    if sigma < 0:
        raise ArgumentError(f"sigma must be >= 0, got {sigma}")
    noise = sample_gaussian(img.pixels.shape, sigma, seed)
    return ImageTensor(np.clip(img.pixels + noise, 0.0, 1.0))


def noisy_confusion(embed: EmbedFn, labels: LabelSet,
                    images: Sequence[ImageTensor],
                    cfg: NoiseExperimentConfig) -> ConfusionMatrix:
    """Classify n_samples noisy variants of one image per class.

    The same n_samples noise draws are reused for every row, so rows differ
    only through their base image.
    """
    if len(images) != labels.C:
        raise ArgumentError(f"need exactly one image per class ({labels.C}), got {len(images)}")
    noise_draws = [
        sample_gaussian(images[0].pixels.shape, cfg.sigma, derive_seed(cfg.seed, "noise", k))
        for k in range(cfg.n_samples)
    ]
    counts = np.zeros((labels.C, labels.C), dtype=np.int64)
    for c, img in enumerate(images):
        for noise in noise_draws:
            noisy = ImageTensor(np.clip(img.pixels + noise, 0.0, 1.0))
            counts[c, classify(embed(noisy), labels)] += 1
    return ConfusionMatrix(counts=counts, names=list(labels.names))


def flip_threshold(embed: EmbedFn, labels: LabelSet, img: ImageTensor,
                   sigma_grid: Sequence[float], votes_per_sigma: int,
                   seed: int) -> float:
    """Smallest grid sigma at which any noisy draw changes the label.

    Noise seeds are keyed by the sigma VALUE (not its grid index), so refining
    the grid can only lower the reported threshold. Returns +inf when no grid
    sigma flips.
    """
    grid = [float(s) for s in sigma_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ArgumentError("sigma_grid must be strictly ascending")
    if votes_per_sigma < 1:
        raise ArgumentError("votes_per_sigma must be >= 1")
    clean = classify(embed(img), labels)
    for sigma in grid:
        for i in range(votes_per_sigma):
            noisy = add_noise(img, sigma, derive_seed(seed, sigma, i))
            if classify(embed(noisy), labels) != clean:
                return sigma
    return math.inf


def detect_modified(embed: EmbedFn, labels: LabelSet, img: ImageTensor,
                    cfg: DetectionConfig) -> bool:
    """Flag an image as modified when the majority of noisy labels disagree
    with the clean label. True means modified."""
    clean = classify(embed(img), labels)
    flips = 0
    for i in range(cfg.votes):
        noisy = add_noise(img, cfg.sigma, derive_seed(cfg.seed, cfg.sigma, i))
        if classify(embed(noisy), labels) != clean:
            flips += 1
    return flips * 2 > cfg.votes


def detection_sweep(embed: EmbedFn, labels: LabelSet,
                    originals: Sequence[ImageTensor],
                    modified: Sequence[ImageTensor],
                    sigma_list: Sequence[float],
                    cfg: DetectionConfig) -> DetectionSweepReport:
    """Detector accuracy over a balanced original/modified set per sigma.

    Per-image noise streams are derived from (seed, set, image index), and
    within an image from (sigma value, draw index), keeping columns of the
    sweep independent. Rows are assembled in sigma order.
    """
    if len(originals) == 0 or len(originals) != len(modified):
        raise ArgumentError(
            f"need balanced nonempty sets, got {len(originals)} originals / {len(modified)} modified"
        )
    rows = []
    for sigma in sigma_list:
        sigma = float(sigma)
        fp = sum(
            detect_modified(
                embed, labels, img,
                DetectionConfig(sigma=sigma, votes=cfg.votes,
                                seed=derive_seed(cfg.seed, "orig", i)),
            )
            for i, img in enumerate(originals)
        )
        tp = sum(
            detect_modified(
                embed, labels, img,
                DetectionConfig(sigma=sigma, votes=cfg.votes,
                                seed=derive_seed(cfg.seed, "mod", i)),
            )
            for i, img in enumerate(modified)
        )
        n_orig, n_mod = len(originals), len(modified)
        correct = (n_orig - fp) + tp
        rows.append(SweepRow(
            sigma=sigma,
            accuracy=correct / (n_orig + n_mod),
            fpr=fp / n_orig,
            fnr=(n_mod - tp) / n_mod,
            n_orig=n_orig,
            n_mod=n_mod,
        ))
    return DetectionSweepReport(rows=rows)
