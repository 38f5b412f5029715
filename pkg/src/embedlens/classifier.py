"""Zero-shot classification over the shared embedding space.

Class scores are raw inner products between the image embedding and per-class
text embeddings, pushed through a softmax. Embeddings are deliberately NOT
L2-normalized here; only the cosine-distance helper normalizes internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .encoder import EncoderParams, ImageTensor, text_encode, vision_encode
from .errors import ArgumentError, NumericalError, ShapeError
from .numerics import softmax_rows

EmbedFn = Callable[[ImageTensor], np.ndarray]


@dataclass
class LabelSet:
    """C classes: names, fixed token sequences, and one text-side embedding each.

    ``text_embs`` may come from the text tower or from anchor mode (per-class
    mean image embeddings), which classifies a separable dataset well without
    any training.
    """

    names: list[str]
    tokens: list[tuple[int, ...]]
    text_embs: np.ndarray  # (C, n_embed)

    def __post_init__(self):
        self.text_embs = np.asarray(self.text_embs, dtype=np.float64)
        if self.C < 2:
            raise ArgumentError("a LabelSet needs at least 2 classes")
        if len(self.names) != self.C or len(self.tokens) != self.C:
            raise ShapeError("names/tokens/text_embs class counts differ")

    @property
    def C(self) -> int:
        return self.text_embs.shape[0]


def labelset_from_text_tower(params: EncoderParams, names: Sequence[str],
                             tokens: Sequence[Sequence[int]]) -> LabelSet:
    embs = np.stack([text_encode(params, t) for t in tokens])
    return LabelSet(names=list(names), tokens=[tuple(t) for t in tokens], text_embs=embs)


def labelset_anchor_mode(embed: EmbedFn, images: Sequence[ImageTensor],
                         labels: Sequence[int], names: Sequence[str],
                         tokens: Sequence[Sequence[int]]) -> LabelSet:
    """Anchor mode: text embeddings replaced by class-mean image embeddings."""
    n_classes = len(names)
    counts = np.zeros(n_classes, dtype=int)
    embs = None
    for img, lab in zip(images, labels):
        lab = int(lab)
        if not 0 <= lab < n_classes:
            raise ArgumentError(f"label {lab} out of range [0, {n_classes})")
        e = embed(img)
        if embs is None:
            embs = np.zeros((n_classes, e.shape[0]))
        embs[lab] += e
        counts[lab] += 1
    if embs is None or np.any(counts == 0):
        raise ArgumentError("anchor mode needs at least one image per class")
    embs /= counts[:, None]
    return LabelSet(names=list(names), tokens=[tuple(t) for t in tokens], text_embs=embs)


@dataclass
class ConfusionMatrix:
    """C x C counts; row = true class, column = predicted class."""

    counts: np.ndarray
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        t = self.total
        return float(np.trace(self.counts)) / t if t else 0.0

    def diagonal_fraction(self) -> float:
        return self.accuracy


def zero_shot_probs(img_emb: np.ndarray, labels: LabelSet) -> np.ndarray:
    """Softmax over the C inner products of the image with each class."""
    img_emb = np.asarray(img_emb, dtype=np.float64)
    if img_emb.shape != (labels.text_embs.shape[1],):
        raise ShapeError(
            f"embedding length {img_emb.shape} != label-set width {labels.text_embs.shape[1]}"
        )
    dots = labels.text_embs @ img_emb
    return softmax_rows(dots[None, :])[0]


def classify(img_emb: np.ndarray, labels: LabelSet) -> int:
    """Most probable class; ties broken by lowest index.

    Softmax is strictly monotone, so the argmax of the raw inner products
    equals the argmax of :func:`zero_shot_probs`.
    """
    img_emb = np.asarray(img_emb, dtype=np.float64)
    if img_emb.shape != (labels.text_embs.shape[1],):
        raise ShapeError(
            f"embedding length {img_emb.shape} != label-set width {labels.text_embs.shape[1]}"
        )
    return int(np.argmax(labels.text_embs @ img_emb))


def confusion_matrix(embed: EmbedFn, labels: LabelSet,
                     images: Sequence[ImageTensor],
                     true_labels: Sequence[int]) -> ConfusionMatrix:
    """Classify every image; returns counts with overall accuracy as a property."""
    c = labels.C
    counts = np.zeros((c, c), dtype=np.int64)
    for img, lab in zip(images, true_labels):
        lab = int(lab)
        if not 0 <= lab < c:
            raise ArgumentError(f"label {lab} out of range [0, {c})")
        counts[lab, classify(embed(img), labels)] += 1
    return ConfusionMatrix(counts=counts, names=list(labels.names))


def pairwise_cosine_dist(embs_a: Sequence[np.ndarray],
                         embs_b: Sequence[np.ndarray] | None = None) -> list[float]:
    """Cosine similarities of embedding pairs, each in [-1, 1].

    With one list, all unordered distinct pairs within it (the same-class
    mode); with two lists, every cross pair.
    """
    a = [np.asarray(e, dtype=np.float64) for e in embs_a]
    b = a if embs_b is None else [np.asarray(e, dtype=np.float64) for e in embs_b]
    if not a or not b:
        raise ArgumentError("pairwise_cosine_dist needs nonempty lists")

    def unit(vectors, tag):
        out = []
        for i, v in enumerate(vectors):
            n = np.linalg.norm(v)
            if n == 0.0:
                raise NumericalError(f"zero-norm embedding at {tag} index {i}")
            out.append(v / n)
        return out

    ua = unit(a, "a")
    if embs_b is None:
        return [
            float(np.clip(ua[i] @ ua[j], -1.0, 1.0))
            for i in range(len(ua))
            for j in range(i + 1, len(ua))
        ]
    ub = unit(b, "b")
    return [float(np.clip(x @ y, -1.0, 1.0)) for x in ua for y in ub]
