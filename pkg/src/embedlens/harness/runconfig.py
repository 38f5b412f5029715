"""Flat ``key = value`` config files (see docs/config.md for the key list)."""

from __future__ import annotations

from pathlib import Path

from ..encoder import EncoderConfig
from ..errors import ArgumentError
from .dataset import SyntheticDatasetSpec


def load_config(path: str | Path) -> dict[str, str]:
    """Parse a flat key=value file; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ArgumentError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_config(path: str | Path, values: dict) -> None:
    lines = [f"{k} = {values[k]}" for k in values]
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")


_ENCODER_KEYS = {
    "image_hw": int, "channels": int, "patch": int, "d": int, "k": int,
    "heads": int, "m_mlp": int, "layers": int, "n_embed": int, "vocab": int,
    "text_len": int, "head_init_std": float,
}
_DATASET_KEYS = {"n_classes": int, "per_class": int, "dataset_seed": int}


def encoder_config_from(values: dict[str, str]) -> EncoderConfig:
    kwargs = {}
    for key, cast in _ENCODER_KEYS.items():
        if key in values:
            kwargs[key] = cast(values[key])
    return EncoderConfig(**kwargs)


def dataset_spec_from(values: dict[str, str], default_seed: int = 0) -> SyntheticDatasetSpec:
    cfg = encoder_config_from(values)
    return SyntheticDatasetSpec(
        n_classes=int(values.get("n_classes", 10)),
        per_class=int(values.get("per_class", 20)),
        image_hw=cfg.image_hw,
        channels=cfg.channels,
        seed=int(values.get("dataset_seed", default_seed)),
    )
