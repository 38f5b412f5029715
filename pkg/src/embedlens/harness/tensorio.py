"""EPT1 tensor container: a tiny deterministic binary format.

Single tensor: magic bytes ``EPT1``, little-endian u32 rank, u32 dims[rank],
then the float64 payload in row-major order. Named archive: u32 entry count,
then per entry a u32 name length, the UTF-8 name bytes, and an EPT1 blob.
Byte-for-byte deterministic, so archives hash and diff cleanly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..encoder import BlockParams, EncoderConfig, EncoderParams
from ..errors import FormatError

MAGIC = b"EPT1"


def _tensor_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.float64)
    head = MAGIC + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()  # tobytes always emits row-major order


class _Reader:
    def __init__(self, blob: bytes, base_offset: int = 0):
        self.blob = blob
        self.pos = 0
        self.base = base_offset

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated while reading {what}", self.base + self.pos)
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def _read_tensor(r: _Reader) -> np.ndarray:
    start = r.base + r.pos
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", start)
    rank = r.u32("rank")
    if rank > 32:
        raise FormatError(f"implausible rank {rank}", start + 4)
    dims = tuple(r.u32(f"dim {i}") for i in range(rank))
    count = 1
    for d in dims:
        count *= d
    payload = r.take(8 * count, "payload")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()


def save_tensor(path: str | Path, arr: np.ndarray) -> None:
    Path(path).write_bytes(_tensor_bytes(arr))


def load_tensor(path: str | Path) -> np.ndarray:
    r = _Reader(Path(path).read_bytes())
    arr = _read_tensor(r)
    if r.pos != len(r.blob):
        raise FormatError("trailing bytes after tensor", r.pos)
    return arr


def save_named(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write a named-tensor archive; entries keep insertion order."""
    parts = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb + _tensor_bytes(arr))
    Path(path).write_bytes(b"".join(parts))


def load_named(path: str | Path) -> dict[str, np.ndarray]:
    r = _Reader(Path(path).read_bytes())
    count = r.u32("entry count")
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = r.u32(f"name length of entry {i}")
        name = r.take(name_len, f"name of entry {i}").decode("utf-8")
        out[name] = _read_tensor(r)
    if r.pos != len(r.blob):
        raise FormatError("trailing bytes after archive", r.pos)
    return out


# ---------------------------------------------------------------------------
# EncoderParams <-> named archive
# ---------------------------------------------------------------------------

_BLOCK_FIELDS = ("w_q", "w_k", "w_v", "w_c", "gamma1", "beta1", "gamma2", "beta2",
                 "w1", "w2")
_TOP_FIELDS = ("patch_proj", "token_table", "pos_embed_vision", "pos_embed_text",
               "head_vision", "head_text")
_CONFIG_FIELDS = ("image_hw", "channels", "patch", "d", "k", "heads", "m_mlp",
                  "layers", "n_embed", "vocab", "text_len", "head_init_std")


def params_to_named(params: EncoderParams) -> dict[str, np.ndarray]:
    out = {"config": np.array([float(getattr(params.config, f)) for f in _CONFIG_FIELDS])}
    for tower, blocks in (("vision", params.vision_blocks), ("text", params.text_blocks)):
        for i, blk in enumerate(blocks):
            for f in _BLOCK_FIELDS:
                out[f"{tower}.{i}.{f}"] = getattr(blk, f)
    for f in _TOP_FIELDS:
        out[f] = getattr(params, f)
    return out


def params_from_named(named: dict[str, np.ndarray]) -> EncoderParams:
    raw = named["config"]
    kwargs = {}
    for f, v in zip(_CONFIG_FIELDS, raw):
        kwargs[f] = float(v) if f == "head_init_std" else int(v)
    cfg = EncoderConfig(**kwargs)

    def blocks(tower: str) -> list[BlockParams]:
        return [
            BlockParams(**{f: named[f"{tower}.{i}.{f}"] for f in _BLOCK_FIELDS})
            for i in range(cfg.layers)
        ]

    return EncoderParams(
        config=cfg,
        vision_blocks=blocks("vision"),
        text_blocks=blocks("text"),
        **{f: named[f] for f in _TOP_FIELDS},
    )


def save_params(path: str | Path, params: EncoderParams) -> None:
    save_named(path, params_to_named(params))


def load_params(path: str | Path) -> EncoderParams:
    return params_from_named(load_named(path))
