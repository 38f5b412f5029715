"""Plot-ready CSV writers with deterministic formatting.

Floats are written with repr (shortest round-trip form), newlines are always
LF, so identical data produces byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

from ..classifier import ConfusionMatrix
from ..linear_lens import PredictionRow, SpectrumReport
from ..matcher import MatchTrace, SystematicReport
from ..noise_detect import DetectionSweepReport


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


def write_confusion_csv(cm: ConfusionMatrix, path: str | Path) -> None:
    """C rows x C columns of counts; header row = class names (predicted)."""
    write_csv(path, cm.names, cm.counts.tolist())


def write_probability_grid_csv(probs, row_ids: Sequence, class_names: Sequence[str],
                               path: str | Path) -> None:
    """Vision x text layout: one row per image, one column per class."""
    rows = [[rid] + [float(p) for p in prow] for rid, prow in zip(row_ids, probs)]
    write_csv(path, ["id"] + list(class_names), rows)


def write_trace_csv(trace: MatchTrace, path: str | Path) -> None:
    write_csv(
        path,
        ["step", "loss", "cosine", "mean_abs_diff"],
        [(pt.step, pt.loss, pt.cosine, pt.mean_abs_diff) for pt in trace.points],
    )


def write_spectrum_csv(report: SpectrumReport, path: str | Path) -> None:
    write_csv(
        path,
        ["index", "singular_value"],
        [(i, float(s)) for i, s in enumerate(report.singular_values)],
    )


def write_sweep_csv(report: DetectionSweepReport, path: str | Path) -> None:
    write_csv(
        path,
        ["sigma", "accuracy", "fpr", "fnr", "n_orig", "n_mod"],
        [(r.sigma, r.accuracy, r.fpr, r.fnr, r.n_orig, r.n_mod) for r in report.rows],
    )


def write_prediction_csv(rows: Sequence[PredictionRow], path: str | Path) -> None:
    write_csv(
        path,
        ["sigma", "predicted_p", "empirical_p", "std_err"],
        [(r.sigma, r.predicted_p, r.empirical_p, r.std_err) for r in rows],
    )


def write_projection_csv(ids: Sequence, classes: Sequence[int], coords, path: str | Path) -> None:
    write_csv(
        path,
        ["id", "class", "x", "y"],
        [(i, int(c), float(x), float(y)) for i, c, (x, y) in zip(ids, classes, coords)],
    )


def write_systematic_csv(report: SystematicReport, path: str | Path) -> None:
    write_csv(
        path,
        ["image_id", "true_class", "target_class", "converged", "steps",
         "final_cosine", "final_loss", "predicted_class", "target_prob",
         "true_prob", "mean_abs_diff", "psnr_db", "psnr_infinite", "ssim"],
        [(r.image_id, r.true_class, r.target_class, r.converged, r.steps,
          r.final_cosine, r.final_loss, r.predicted_class, r.target_prob,
          r.true_prob, r.mean_abs_diff, r.psnr_db, r.psnr_infinite, r.ssim)
         for r in report.records],
    )
