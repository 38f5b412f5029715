"""Dense linear algebra, elementwise nonlinearities, seeded Gaussian sampling,
and reduced SVD. Every other module builds on these kernels.

Conventions: matrices are 2-D float64 ``numpy`` arrays (row-major), vectors are
1-D float64 arrays. All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, NumericalError, ShapeError

LAYER_NORM_EPS = 1e-5


def gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense matrix product ``a @ b`` with explicit shape checking."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"gemm expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"gemm inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for numerical stability.

    Each output row is nonnegative and sums to 1.
    """
    m = np.asarray(m, dtype=np.float64)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def relu(z: np.ndarray) -> np.ndarray:
    """Elementwise max(z, 0)."""
    return np.maximum(np.asarray(z, dtype=np.float64), 0.0)


def layer_norm(
    z: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = LAYER_NORM_EPS,
) -> np.ndarray:
    """Normalize a vector to zero mean / unit std, then apply gain and shift.

    ``eps`` is added under the square root of the standard deviation so the
    output stays finite even for constant inputs.
    """
    z = np.asarray(z, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if z.ndim != 1 or z.shape != gamma.shape or z.shape != beta.shape:
        raise ShapeError(
            f"layer_norm length mismatch: z {z.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    if eps <= 0:
        raise ArgumentError("layer_norm eps must be > 0")
    mu = z.mean()
    var = ((z - mu) ** 2).mean()
    return gamma * (z - mu) / np.sqrt(var + eps) + beta


def layer_norm_rows(
    m: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = LAYER_NORM_EPS,
) -> np.ndarray:
    """Apply :func:`layer_norm` independently to every row of a matrix."""
    m = np.asarray(m, dtype=np.float64)
    mu = m.mean(axis=-1, keepdims=True)
    var = ((m - mu) ** 2).mean(axis=-1, keepdims=True)
    return gamma * (m - mu) / np.sqrt(var + eps) + beta


@dataclass(frozen=True)
class SvdFactors:
    """Reduced SVD ``A = U @ diag(S) @ V.T``.

    U is n x r, S is length r (nonincreasing, nonnegative), V is m x r,
    with r = min(n, m). Columns of U and V are orthonormal.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


def reduced_svd(a: np.ndarray) -> SvdFactors:
    """Reduced singular value decomposition of a real matrix.

    Raises NumericalError if the underlying iteration fails to converge.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"reduced_svd expects a matrix, got {a.ndim}-D")
    if min(a.shape) < 1:
        raise ShapeError(f"reduced_svd needs min(rows, cols) >= 1, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ArgumentError("reduced_svd requires finite entries")
    try:
        u, s, vh = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    return SvdFactors(U=u, S=s, V=vh.T)


def derive_seed(*parts: int | float | str) -> int:
    """Mix arbitrary parts into a stable 64-bit substream seed.

    Floats are hashed by their IEEE-754 bit pattern, so two distinct values
    always yield distinct streams and the mapping is platform-independent.
    """
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, bool):
            raise ArgumentError("derive_seed does not accept booleans")
        if isinstance(p, (int, np.integer)):
            h.update(b"i" + int(p).to_bytes(16, "little", signed=True))
        elif isinstance(p, (float, np.floating)):
            h.update(b"f" + struct.pack("<d", float(p)))
        elif isinstance(p, str):
            h.update(b"s" + p.encode("utf-8"))
        else:
            raise ArgumentError(f"derive_seed cannot hash {type(p).__name__}")
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


def sample_gaussian(
    shape: int | tuple[int, ...],
    sigma: float,
    seed: int,
) -> np.ndarray:
    """Draw i.i.d. N(0, sigma^2) values, reproducibly.

    The stream is a pure function of (shape, sigma, seed): a counter-based
    Philox generator keyed by the seed feeds a Box-Muller transform.
    """
    if sigma < 0:
        raise ArgumentError(f"sigma must be >= 0, got {sigma}")
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape),)
    else:
        shape = tuple(int(s) for s in shape)
    n = 1
    for s in shape:
        if s < 0:
            raise ArgumentError(f"negative dimension in shape {shape}")
        n *= s
    if sigma == 0 or n == 0:
        return np.zeros(shape)
    gen = np.random.Generator(np.random.Philox(key=int(seed) & ((1 << 128) - 1)))
    half = (n + 1) // 2
    u1 = 1.0 - gen.random(half)  # (0, 1], keeps log finite
    u2 = gen.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = (2.0 * np.pi) * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return (sigma * z).reshape(shape)
