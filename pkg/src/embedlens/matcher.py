"""Embedding matching: gradient descent from a source image toward a target
embedding, with full trace capture, plus the systematic evaluation that
matches every image against every other class representative.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import _pixel_grad
from .classifier import LabelSet, classify, confusion_matrix, zero_shot_probs
from .encoder import (
    EncoderParams,
    ImageTensor,
    LabeledImages,
    vision_embedder,
    vision_forward,
)
from .errors import ArgumentError, DivergenceError
from .harness.metrics import quality_report

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatchConfig:
    lr: float = 0.01
    max_steps: int = 30_000
    cosine_target: float = 0.98
    clamp_pixels: bool = True
    trace_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 1e-4 <= self.lr <= 1.0:
            raise ArgumentError(f"lr must be in [1e-4, 1], got {self.lr}")
        if not 0.0 < self.cosine_target <= 1.0:
            raise ArgumentError(f"cosine_target must be in (0, 1], got {self.cosine_target}")
        if self.max_steps < 0 or self.trace_every < 1:
            raise ArgumentError("max_steps must be >= 0 and trace_every >= 1")


@dataclass(frozen=True)
class TracePoint:
    step: int
    loss: float
    cosine: float
    mean_abs_diff: float


@dataclass
class MatchTrace:
    points: list[TracePoint]
    status: str  # "converged" | "step-capped"


@dataclass
class MatchResult:
    x_matched: ImageTensor
    trace: MatchTrace
    final_cosine: float
    final_loss: float

    @property
    def converged(self) -> bool:
        return self.trace.status == "converged"

    @property
    def steps(self) -> int:
        return self.trace.points[-1].step


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def match_embedding(params: EncoderParams, x0: ImageTensor, target: np.ndarray,
                    cfg: MatchConfig) -> MatchResult:
    """Descend 0.5*||f(x) - target||^2 from x0 until the embedding cosine
    reaches ``cfg.cosine_target`` or the step cap is hit.

    Pixels are clamped to [0, 1] after every step when ``cfg.clamp_pixels``.
    Deterministic: identical inputs give a bitwise-identical result.
    """
    target = np.asarray(target, dtype=np.float64)
    x = x0.pixels  # copied on first update; step 0 must return x0 bitwise
    x0_pixels = x0.pixels
    points: list[TracePoint] = []
    last_recorded = -1
    status = "step-capped"

    def record(step, loss, cos, x_now):
        nonlocal last_recorded
        points.append(TracePoint(step, loss, cos,
                                 float(np.mean(np.abs(x_now - x0_pixels)))))
        last_recorded = step

    step = 0
    while True:
        emb, tape = vision_forward(params, ImageTensor(x), record=True)
        resid = emb - target
        loss = 0.5 * float(resid @ resid)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite matching loss at step {step}", step)
        cos = 1.0 if loss == 0.0 else _cosine(emb, target)
        done = cos >= cfg.cosine_target or step >= cfg.max_steps
        if done or step % cfg.trace_every == 0:
            if step != last_recorded:
                record(step, loss, cos, x)
        if done:
            status = "converged" if cos >= cfg.cosine_target else "step-capped"
            final_cos, final_loss = cos, loss
            break
        grad = _pixel_grad(params, tape, resid)
        x = x - cfg.lr * grad
        if cfg.clamp_pixels:
            np.clip(x, 0.0, 1.0, out=x)
        step += 1

    return MatchResult(
        x_matched=ImageTensor(x),
        trace=MatchTrace(points=points, status=status),
        final_cosine=final_cos,
        final_loss=final_loss,
    )


def class_representative(embs: Sequence[np.ndarray]) -> tuple[int, np.ndarray]:
    """Member whose embedding is nearest the class-mean embedding.

    Returns (index, member embedding); that member embedding is the matching
    target for the class. Ties go to the lowest index.
    """
    if len(embs) == 0:
        raise ArgumentError("class_representative needs a nonempty list")
    stack = np.stack([np.asarray(e, dtype=np.float64) for e in embs])
    mean = stack.mean(axis=0)
    idx = int(np.argmin(np.linalg.norm(stack - mean, axis=1)))
    return idx, stack[idx]


def class_representatives(params: EncoderParams, data: LabeledImages) -> dict[int, np.ndarray]:
    """Representative embedding per class over a labeled image set."""
    embed = vision_embedder(params)
    by_class: dict[int, list[np.ndarray]] = {}
    for img, lab in zip(data.images, data.labels):
        by_class.setdefault(int(lab), []).append(embed(img))
    return {c: class_representative(v)[1] for c, v in sorted(by_class.items())}


@dataclass
class MatchRecord:
    image_id: int
    true_class: int
    target_class: int
    converged: bool
    steps: int
    final_cosine: float
    final_loss: float
    predicted_class: int
    target_prob: float
    true_prob: float
    mean_abs_diff: float
    psnr_db: float
    psnr_infinite: bool
    ssim: float


@dataclass
class SystematicReport:
    records: list[MatchRecord]
    match_rate: float  # fraction of runs reaching the cosine target
    systematic_accuracy: float  # converged matches still classified as true class
    n_converged: int
    baseline_accuracy: float  # plain zero-shot accuracy of the unmatched originals
    baseline_counts: list[list[int]] = field(default_factory=list)


def systematic_eval(params: EncoderParams, labels: LabelSet, data: LabeledImages,
                    cfg: MatchConfig,
                    representatives: dict[int, np.ndarray] | None = None,
                    rep_data: LabeledImages | None = None) -> SystematicReport:
    """Match every image toward every other class's representative embedding
    and classify the results.

    Representatives default to per-class nearest-to-mean members computed over
    ``rep_data`` (or ``data`` itself). Runs in deterministic (image, target)
    order. Systematic accuracy counts converged matches that are still
    classified as their true (visual source) class.
    """
    if representatives is None:
        representatives = class_representatives(params, rep_data or data)
    embed = vision_embedder(params)
    baseline = confusion_matrix(embed, labels, data.images, data.labels)

    records: list[MatchRecord] = []
    n_converged = 0
    n_true = 0
    for img_id, (img, true_c) in enumerate(zip(data.images, data.labels)):
        true_c = int(true_c)
        for target_c in sorted(representatives):
            if target_c == true_c:
                continue
            result = match_embedding(params, img, representatives[target_c], cfg)
            emb = embed(result.x_matched)
            probs = zero_shot_probs(emb, labels)
            pred = classify(emb, labels)
            q = quality_report(img, result.x_matched)
            if result.converged:
                n_converged += 1
                if pred == true_c:
                    n_true += 1
            records.append(MatchRecord(
                image_id=img_id,
                true_class=true_c,
                target_class=target_c,
                converged=result.converged,
                steps=result.steps,
                final_cosine=result.final_cosine,
                final_loss=result.final_loss,
                predicted_class=pred,
                target_prob=float(probs[target_c]),
                true_prob=float(probs[true_c]),
                mean_abs_diff=q.mean_abs_diff,
                psnr_db=q.psnr_db,
                psnr_infinite=q.psnr_infinite,
                ssim=q.ssim,
            ))
        log.debug("systematic_eval: image %d/%d done", img_id + 1, len(data.images))

    n_total = len(records)
    return SystematicReport(
        records=records,
        match_rate=n_converged / n_total if n_total else 0.0,
        systematic_accuracy=n_true / n_converged if n_converged else 0.0,
        n_converged=n_converged,
        baseline_accuracy=baseline.accuracy,
        baseline_counts=baseline.counts.tolist(),
    )
