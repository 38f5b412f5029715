"""2-D PCA projection of embedding clouds (the low-dimensional views used to
compare original and embedding-aligned images)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ArgumentError, NumericalError
from ..numerics import reduced_svd


@dataclass
class Projection2D:
    coords: np.ndarray  # (N, 2)
    basis: np.ndarray  # (dim, 2), orthonormal columns
    explained: np.ndarray  # (2,) variance fractions, nonincreasing
    mean: np.ndarray  # (dim,) center of the fit set


def pca_project(embs: Sequence[np.ndarray],
                fit_on: Sequence[np.ndarray] | None = None) -> Projection2D:
    """Project embeddings onto the top-2 principal directions of a fit set.

    The basis comes from the centered ``fit_on`` cloud (all of ``embs`` when
    omitted); every embedding is then centered with the fit mean and projected.
    """
    all_embs = np.stack([np.asarray(e, dtype=np.float64) for e in embs])
    fit = all_embs if fit_on is None else np.stack(
        [np.asarray(e, dtype=np.float64) for e in fit_on]
    )
    if fit.shape[0] < 3:
        raise ArgumentError(f"PCA fit needs >= 3 embeddings, got {fit.shape[0]}")
    mean = fit.mean(axis=0)
    centered = fit - mean
    svd = reduced_svd(centered)
    if svd.S.shape[0] < 2 or svd.S[1] <= 1e-12 * max(svd.S[0], 1e-300):
        raise NumericalError("fit set has rank < 2; no 2-D principal plane")
    basis = svd.V[:, :2]
    total = float((svd.S**2).sum())
    explained = (svd.S[:2] ** 2) / total
    return Projection2D(
        coords=(all_embs - mean) @ basis,
        basis=basis,
        explained=explained,
        mean=mean,
    )
