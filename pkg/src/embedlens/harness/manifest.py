"""Run manifests: enough resolved state to re-execute a CLI run bit-exactly."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: str | Path, command: str, settings: dict,
                   inputs: dict[str, str | Path], outputs: list[str]) -> Path:
    """Record the resolved settings, input content hashes, and output names."""
    payload = {
        "command": command,
        "settings": settings,
        "inputs": {name: file_sha256(p) for name, p in sorted(inputs.items())},
        "input_paths": {name: str(p) for name, p in sorted(inputs.items())},
        "outputs": sorted(outputs),
    }
    path = Path(out_dir) / MANIFEST_NAME
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", newline="\n")
    return path


def load_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
