"""Experiment harness: synthetic data, image-quality metrics, PCA projection,
serialization formats, and the reproducible experiment CLI."""

from .dataset import SyntheticDataset, SyntheticDatasetSpec, generate_dataset
from .metrics import QualityReport, psnr, quality_report, ssim
from .projection import Projection2D, pca_project
from .tensorio import load_named, load_tensor, save_named, save_tensor

__all__ = [
    "SyntheticDataset",
    "SyntheticDatasetSpec",
    "generate_dataset",
    "QualityReport",
    "psnr",
    "quality_report",
    "ssim",
    "Projection2D",
    "pca_project",
    "load_named",
    "load_tensor",
    "save_named",
    "save_tensor",
]
