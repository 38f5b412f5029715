"""Procedural synthetic image dataset.

Each class is a fine texture tile (stripes, checkers, dots, rings, cross at
various orientations and frequencies) blended with a texture shared by all
classes, modulated by a random patch-aligned brightness mosaic. Tiles are
aligned to the patch grid: every patch of an image carries the same
micro-pattern, so class identity survives token mean-pooling under a randomly
initialized encoder and the anchor classifier separates a held-out split
almost perfectly. The shared component packs the class directions into a
cone, keeping cross-class embedding distances small relative to the local
Jacobian gain, and the mosaic's dim patches form a high-gain, low-redundancy
channel: embedding matching needs only faint pixel perturbations, and those
perturbations are far more fragile under added noise than natural content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..encoder import ImageTensor, LabeledImages
from ..errors import ArgumentError
from ..numerics import derive_seed

PIXEL_NOISE_STD = 0.003
PIXEL_LO, PIXEL_HI = 0.03, 0.97
TRAIN_FRACTION = 0.8

# Tile side in pixels; must divide the image and match the encoder patch so
# that tiles tessellate the patch grid exactly.
TEXTURE_PERIOD = 8
PHASE_JITTER = 0.08  # radians, wave tiles
# Unique-vs-shared texture mix (sin of the cone half-angle). Smaller values
# pack the class embedding directions closer together: matching then needs
# less pixel change, but classification margins shrink. 0.65 balances the
# imperceptibility bound against anchor-classifier accuracy.
UNIQUE_WEIGHT = 0.65
_COMMON_FREQ = (3, 2)

CLASS_NAMES = [
    "vstripes", "hstripes", "diag", "antidiag", "checker",
    "dots", "rings", "cross", "grid", "fine_diag",
]

_GRAY = 0.55
_CONTRAST = (0.27, 0.26, 0.25)  # per-channel texture amplitude, all classes

# Illumination mosaic: per-patch brightness levels with a fixed number of
# strongly dimmed patches per image. Dim patches carry little content, so the
# encoder's layer norm amplifies them into the highest-gain input directions;
# the matching optimizer concentrates its perturbation there, which is what
# makes matched images fragile under moderate pixel noise while the (bright,
# redundant) natural class signal stays robust. Levels are patch-aligned so
# the dimming actually reaches the floor instead of being averaged away.
DIM_PATCHES = 8
DIM_RANGE = (0.12, 0.19)
BRIGHT_RANGE = (0.7, 1.0)


def class_token_sequence(class_id: int, vocab: int = 64) -> tuple[int, ...]:
    """Fixed, distinct 4-token sequence standing in for a class name."""
    c = int(class_id)
    return (
        (c + 1) % vocab,
        (2 * c + 11) % vocab,
        (3 * c + 5) % vocab,
        (40 - c) % vocab,
    )


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    n_classes: int = 10
    per_class: int = 20
    image_hw: int = 32
    channels: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.n_classes <= len(CLASS_NAMES):
            raise ArgumentError(f"n_classes must be in [2, {len(CLASS_NAMES)}]")
        if self.per_class < 1:
            raise ArgumentError("per_class must be >= 1")
        if self.channels != 3:
            raise ArgumentError("only 3-channel images are generated")
        if self.image_hw < TEXTURE_PERIOD or self.image_hw % TEXTURE_PERIOD:
            raise ArgumentError(f"image_hw must be a positive multiple of {TEXTURE_PERIOD}")


@dataclass
class SyntheticDataset:
    """All generated images plus a stratified 80/20 train/held-out split."""

    data: LabeledImages
    train_idx: list[int]
    heldout_idx: list[int]

    def subset(self, idx: list[int]) -> LabeledImages:
        return LabeledImages(
            images=[self.data.images[i] for i in idx],
            labels=[self.data.labels[i] for i in idx],
            class_names=self.data.class_names,
            class_tokens=self.data.class_tokens,
        )

    @property
    def train(self) -> LabeledImages:
        return self.subset(self.train_idx)

    @property
    def heldout(self) -> LabeledImages:
        return self.subset(self.heldout_idx)


# ---------------------------------------------------------------------------
# Tile functions. Every tile is TEXTURE_PERIOD-periodic in both axes,
# zero-mean over one period, and normalized to unit rms, so classes share the
# same texture energy. Class tiles are built to be mutually (near-)orthogonal
# in pixel space: wave classes combine two distinct integer harmonics (two
# components also average out the random per-direction gain of the encoder),
# the radial tiles sit in the even-phase quadrature of the waves, the ring
# tile is explicitly orthogonalized against the dot tile, and the cross tile
# is x<->y antisymmetric, hence exactly orthogonal to every symmetric tile.
# ---------------------------------------------------------------------------


def _normalize(t: np.ndarray) -> np.ndarray:
    t = t - t.mean()
    return t / np.sqrt((t * t).mean())


def _wave(hw: int, fx: int, fy: int, phase: float) -> np.ndarray:
    px = np.arange(hw)
    return _normalize(
        np.sin(2 * np.pi * (fx * px[None, :] + fy * px[:, None]) / TEXTURE_PERIOD + phase)
    )


def _wave_pair(hw: int, f1, f2, phase: float) -> np.ndarray:
    return _normalize(_wave(hw, *f1, phase) + _wave(hw, *f2, phase))


def _wrapped_coords(hw: int, dx: float, dy: float):
    px = np.arange(hw, dtype=np.float64)
    half = TEXTURE_PERIOD / 2.0
    wx = (px[None, :] - half - dx) % TEXTURE_PERIOD - half
    wy = (px[:, None] - half - dy) % TEXTURE_PERIOD - half
    return wx, wy


def _dots(hw: int, dx: float, dy: float) -> np.ndarray:
    wx, wy = _wrapped_coords(hw, dx, dy)
    return _normalize(np.exp(-(wx * wx + wy * wy) / (2 * 1.5**2)))


def _rings(hw: int, dx: float, dy: float) -> np.ndarray:
    wx, wy = _wrapped_coords(hw, dx, dy)
    ring = _normalize(np.cos(2 * np.pi * np.hypot(wx, wy) / 4.0))
    dots = _dots(hw, dx, dy)
    return _normalize(ring - (ring * dots).mean() * dots)


def _cross(hw: int, dx: float, dy: float) -> np.ndarray:
    wx, wy = _wrapped_coords(hw, dx, dy)
    return _normalize(
        np.exp(-(wx * wx) / (2 * 1.2**2)) - np.exp(-(wy * wy) / (2 * 1.2**2))
    )


_WAVE_CLASSES = {
    0: ((1, 0), (3, 0)),  # vstripes
    1: ((0, 1), (0, 3)),  # hstripes
    2: ((1, 1), (2, 2)),  # diag
    3: ((1, -1), (2, -2)),  # antidiag
    4: ((1, 2), (1, -2)),  # checker
    8: ((2, 0), (0, 2)),  # grid
    9: ((2, 1), (3, 1)),  # fine_diag
}


def _class_tile(class_id: int, hw: int, rng: np.random.Generator) -> np.ndarray:
    phase = rng.uniform(-PHASE_JITTER, PHASE_JITTER)
    # Bump tiles change direction faster per pixel of shift than waves do per
    # radian of phase, so their jitter range is kept tighter.
    shift = rng.uniform(-0.2, 0.2, size=2)
    if class_id in _WAVE_CLASSES:
        return _wave_pair(hw, *_WAVE_CLASSES[class_id], phase)
    if class_id == 5:
        return _dots(hw, *shift)
    if class_id == 6:
        return _rings(hw, *shift)
    if class_id == 7:
        return _cross(hw, *shift)
    raise ArgumentError(f"no pattern family for class {class_id}")


def _illumination(hw: int, rng: np.random.Generator) -> np.ndarray:
    """Patch-aligned random brightness mosaic, identically distributed for all
    classes: DIM_PATCHES tiles near the dim floor, the rest bright."""
    g = hw // TEXTURE_PERIOD
    n = g * g
    levels = np.empty(n)
    order = rng.permutation(n)
    n_dim = min(DIM_PATCHES, n - 1)
    levels[order[:n_dim]] = rng.uniform(*DIM_RANGE, size=n_dim)
    levels[order[n_dim:]] = rng.uniform(*BRIGHT_RANGE, size=n - n_dim)
    mosaic = levels.reshape(g, g)
    return np.repeat(np.repeat(mosaic, TEXTURE_PERIOD, axis=0), TEXTURE_PERIOD, axis=1)


def render_sample(class_id: int, hw: int, seed: int) -> ImageTensor:
    """One jittered sample of a class, deterministic in the seed.

    Pixels are mean_color + contrast * illumination * texture per channel,
    where texture blends the shared wave with the class tile. Hue, contrast,
    illumination, and tile phase jitter per sample; pixel noise is added and
    values are clipped inside (0, 1).
    """
    rng = np.random.Generator(np.random.Philox(key=seed & ((1 << 128) - 1)))
    mask = _illumination(hw, rng)
    w = UNIQUE_WEIGHT
    common_phase = rng.uniform(-PHASE_JITTER, PHASE_JITTER)
    tile = (
        np.sqrt(1.0 - w * w) * _wave(hw, *_COMMON_FREQ, common_phase)
        + w * _class_tile(class_id, hw, rng)
    )
    s = (mask * tile)[:, :, None]
    mean_color = _GRAY + rng.uniform(-0.015, 0.015, size=3)
    contrast = np.array(_CONTRAST) * rng.uniform(0.93, 1.07)
    img = mean_color + contrast * s
    img = img + rng.normal(0.0, PIXEL_NOISE_STD, size=img.shape)
    return ImageTensor(np.clip(img, PIXEL_LO, PIXEL_HI))


def generate_dataset(spec: SyntheticDatasetSpec) -> SyntheticDataset:
    """Render the full dataset and its stratified 80/20 split."""
    images: list[ImageTensor] = []
    labels: list[int] = []
    train_idx: list[int] = []
    heldout_idx: list[int] = []
    n_train = int(spec.per_class * TRAIN_FRACTION)
    for c in range(spec.n_classes):
        for i in range(spec.per_class):
            seed = derive_seed(spec.seed, "sample", c, i)
            images.append(render_sample(c, spec.image_hw, seed))
            labels.append(c)
            (train_idx if i < n_train else heldout_idx).append(len(images) - 1)
    data = LabeledImages(
        images=images,
        labels=labels,
        class_names=CLASS_NAMES[: spec.n_classes],
        class_tokens=[class_token_sequence(c) for c in range(spec.n_classes)],
    )
    return SyntheticDataset(data=data, train_idx=train_idx, heldout_idx=heldout_idx)
