"""Toy dual-encoder vision-language model.

Two small transformer towers (patch-based vision, token-based text) map into
one shared embedding space. The forward pass can record a tape of cached
intermediate values; the reverse sweep living in :mod:`embedlens.autodiff`
consumes that tape to produce exact gradients.

Token matrices are (seq, d) with one row per token. Per-head projection
weights are stacked along a leading head axis, e.g. ``w_q[h]`` is the d x k
query projection of head ``h``.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ArgumentError, ShapeError
from .numerics import derive_seed, sample_gaussian, softmax_rows

log = logging.getLogger(__name__)

LN_EPS = 1e-5
WEIGHT_INIT_SCALE = 0.02
# Projection heads are initialized wider than the 0.02/sqrt(d) body weights so
# that raw inner products between embeddings span O(1..10) and the zero-shot
# softmax can saturate; with the body scale the probabilities stay pinned near
# uniform and the classifier surface is degenerate.
HEAD_INIT_STD = 0.3
# Positional embeddings are kept well below the token content scale; they are
# a tie-breaker for patch order, and at full body scale they dominate the
# token norm and flatten the Jacobian gain of the first layer norm.
POS_INIT_FACTOR = 0.05
# Query/key projections are initialized wider than the body so attention in
# the post-layer-norm blocks is content-dependent (logits of order one).
# With near-uniform attention the encoder treats natural images and
# embedding-matched images identically under pixel noise, and the noise
# fragility that the detector exploits never appears.
ATTN_INIT_FACTOR = 12.0
CONTRASTIVE_TEMPERATURE = 0.07


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture hyperparameters shared by both towers."""

    image_hw: int = 32
    channels: int = 3
    patch: int = 8
    d: int = 64
    k: int = 16
    heads: int = 4
    m_mlp: int = 128
    layers: int = 2
    n_embed: int = 32
    vocab: int = 64
    text_len: int = 4
    head_init_std: float = HEAD_INIT_STD

    def __post_init__(self):
        if self.image_hw <= 0 or self.image_hw % self.patch != 0:
            raise ArgumentError(
                f"image_hw ({self.image_hw}) must be a positive multiple of patch ({self.patch})"
            )
        if self.n_embed < 2:
            raise ArgumentError("n_embed must be >= 2")
        for name in ("channels", "d", "k", "heads", "m_mlp", "layers", "vocab", "text_len"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")

    @property
    def grid(self) -> int:
        return self.image_hw // self.patch

    @property
    def n_patches(self) -> int:
        return self.grid * self.grid

    @property
    def patch_pixels(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def n_pixels(self) -> int:
        return self.image_hw * self.image_hw * self.channels


@dataclass
class ImageTensor:
    """H x W x C image with float64 pixels, nominally in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3:
            raise ShapeError(f"image must be h x w x c, got shape {self.pixels.shape}")

    @property
    def h(self) -> int:
        return self.pixels.shape[0]

    @property
    def w(self) -> int:
        return self.pixels.shape[1]

    @property
    def c(self) -> int:
        return self.pixels.shape[2]

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def in_unit_range(self, tol: float = 0.0) -> bool:
        return bool(
            np.all(self.pixels >= -tol) and np.all(self.pixels <= 1.0 + tol)
        )

    def copy(self) -> "ImageTensor":
        return ImageTensor(self.pixels.copy())


@dataclass
class BlockParams:
    """Weights of one transformer block.

    w_q, w_k, w_v: (H, d, k); w_c: (H, k, d); w1: (d, m_mlp); w2: (m_mlp, d);
    layer-norm gains/shifts are length-d vectors.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_c: np.ndarray
    gamma1: np.ndarray
    beta1: np.ndarray
    gamma2: np.ndarray
    beta2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


@dataclass
class EncoderParams:
    """All weights of the dual encoder. Immutable by convention after init."""

    config: EncoderConfig
    vision_blocks: list[BlockParams]
    text_blocks: list[BlockParams]
    patch_proj: np.ndarray  # (patch_pixels, d)
    token_table: np.ndarray  # (vocab, d)
    pos_embed_vision: np.ndarray  # (n_patches, d)
    pos_embed_text: np.ndarray  # (text_len, d)
    head_vision: np.ndarray  # (d, n_embed)
    head_text: np.ndarray  # (d, n_embed)

    def deep_copy(self) -> "EncoderParams":
        return copy.deepcopy(self)


@dataclass
class LabeledImages:
    """Images with integer class labels and per-class fixed token sequences."""

    images: list[ImageTensor]
    labels: list[int]
    class_names: list[str]
    class_tokens: list[tuple[int, ...]]

    def __len__(self) -> int:
        return len(self.images)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _gauss(shape, std, seed, *tag):
    return sample_gaussian(shape, std, derive_seed(seed, *tag))


def _init_block(cfg: EncoderConfig, std: float, seed: int, tower: str, i: int) -> BlockParams:
    H, d, k, m = cfg.heads, cfg.d, cfg.k, cfg.m_mlp
    t = f"{tower}.{i}"
    return BlockParams(
        w_q=_gauss((H, d, k), ATTN_INIT_FACTOR * std, seed, t, "w_q"),
        w_k=_gauss((H, d, k), ATTN_INIT_FACTOR * std, seed, t, "w_k"),
        w_v=_gauss((H, d, k), std, seed, t, "w_v"),
        w_c=_gauss((H, k, d), std, seed, t, "w_c"),
        gamma1=np.ones(d),
        beta1=np.zeros(d),
        gamma2=np.ones(d),
        beta2=np.zeros(d),
        w1=_gauss((d, m), std, seed, t, "w1"),
        w2=_gauss((m, d), std, seed, t, "w2"),
    )


def init_params(config: EncoderConfig, seed: int) -> EncoderParams:
    """Gaussian-initialize a fresh dual encoder, reproducibly by seed.

    Body weight matrices use std 0.02/sqrt(d); the two projection heads use
    ``config.head_init_std`` (see HEAD_INIT_STD note above). Layer-norm gains
    start at 1 and shifts at 0.

    The patch projection is centered column-wise so a uniform brightness
    shift of a patch maps to the zero token. Without this the shared
    luminance direction dominates every embedding of every image and the raw
    inner products of the zero-shot rule carry almost no class signal.
    """
    std = WEIGHT_INIT_SCALE / math.sqrt(config.d)
    patch_proj = _gauss((config.patch_pixels, config.d), std, seed, "patch_proj")
    patch_proj = patch_proj - patch_proj.mean(axis=0)
    return EncoderParams(
        config=config,
        vision_blocks=[
            _init_block(config, std, seed, "vision", i) for i in range(config.layers)
        ],
        text_blocks=[
            _init_block(config, std, seed, "text", i) for i in range(config.layers)
        ],
        patch_proj=patch_proj,
        token_table=_gauss((config.vocab, config.d), std, seed, "token_table"),
        pos_embed_vision=_gauss(
            (config.n_patches, config.d), POS_INIT_FACTOR * std, seed, "pos_vision"
        ),
        pos_embed_text=_gauss(
            (config.text_len, config.d), POS_INIT_FACTOR * std, seed, "pos_text"
        ),
        head_vision=_gauss(
            (config.d, config.n_embed), config.head_init_std, seed, "head_vision"
        ),
        head_text=_gauss(
            (config.d, config.n_embed), config.head_init_std, seed, "head_text"
        ),
    )


def zeros_like_params(params: EncoderParams) -> EncoderParams:
    """Parameter-shaped accumulator of zeros (used for gradients)."""

    def zblock(b: BlockParams) -> BlockParams:
        return BlockParams(
            *(np.zeros_like(getattr(b, f)) for f in (
                "w_q", "w_k", "w_v", "w_c", "gamma1", "beta1", "gamma2", "beta2",
                "w1", "w2",
            ))
        )

    return EncoderParams(
        config=params.config,
        vision_blocks=[zblock(b) for b in params.vision_blocks],
        text_blocks=[zblock(b) for b in params.text_blocks],
        patch_proj=np.zeros_like(params.patch_proj),
        token_table=np.zeros_like(params.token_table),
        pos_embed_vision=np.zeros_like(params.pos_embed_vision),
        pos_embed_text=np.zeros_like(params.pos_embed_text),
        head_vision=np.zeros_like(params.head_vision),
        head_text=np.zeros_like(params.head_text),
    )


# ---------------------------------------------------------------------------
# Forward pass (optionally recording a tape for the reverse sweep)
# ---------------------------------------------------------------------------


@dataclass
class LnTape:
    xhat: np.ndarray  # normalized rows, pre gain/shift
    inv_std: np.ndarray  # (n, 1)


@dataclass
class BlockTape:
    x: np.ndarray  # block input (n, d)
    q: np.ndarray  # (H, n, k)
    k: np.ndarray
    v: np.ndarray
    att: np.ndarray  # (H, n, n) softmax weights
    heads: np.ndarray  # (H, n, k) att @ v
    ln1: LnTape
    u: np.ndarray  # (n, d) after first layer norm
    pre: np.ndarray  # (n, m_mlp) pre-activation
    ln2: LnTape
    z: np.ndarray  # block output (n, d)


@dataclass
class TowerTape:
    """Cached forward values of one tower; enough to replay the reverse sweep."""

    tokens_in: np.ndarray  # rows fed to the first block (n, d)
    blocks: list[BlockTape]
    pooled: np.ndarray  # (d,)
    emb: np.ndarray  # (n_embed,)
    patches: np.ndarray | None = None  # vision only: (n_patches, patch_pixels)
    token_ids: tuple[int, ...] | None = None  # text only


def _ln_rows_fwd(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return xhat * gamma + beta, LnTape(xhat, inv_std)


def _block_fwd(x: np.ndarray, blk: BlockParams, record: bool):
    k_dim = blk.w_q.shape[2]
    q = np.matmul(x, blk.w_q)  # (H, n, k)
    k = np.matmul(x, blk.w_k)
    v = np.matmul(x, blk.w_v)
    scores = np.matmul(q, k.transpose(0, 2, 1)) / math.sqrt(k_dim)
    att = softmax_rows(scores)
    heads = np.matmul(att, v)  # (H, n, k)
    u_prime = np.matmul(heads, blk.w_c).sum(axis=0)  # (n, d)
    u, ln1 = _ln_rows_fwd(x + u_prime, blk.gamma1, blk.beta1)
    pre = u @ blk.w1
    z_prime = np.maximum(pre, 0.0) @ blk.w2
    z, ln2 = _ln_rows_fwd(u + z_prime, blk.gamma2, blk.beta2)
    if not record:
        return z, None
    return z, BlockTape(x=x, q=q, k=k, v=v, att=att, heads=heads,
                        ln1=ln1, u=u, pre=pre, ln2=ln2, z=z)


def patchify(img: ImageTensor, patch: int) -> np.ndarray:
    """Split an image into non-overlapping patches, row-major over the grid.

    Each patch is flattened across (row, col, channel) into one token of
    patch*patch*channels values.
    """
    h, w, c = img.pixels.shape
    if h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} not divisible into {patch}x{patch} patches")
    gh, gw = h // patch, w // patch
    x = img.pixels.reshape(gh, patch, gw, patch, c)
    return x.transpose(0, 2, 1, 3, 4).reshape(gh * gw, patch * patch * c)


def unpatchify_grad(d_patches: np.ndarray, hw: int, patch: int, channels: int) -> np.ndarray:
    """Scatter per-patch pixel gradients back to image layout."""
    g = hw // patch
    x = d_patches.reshape(g, g, patch, patch, channels)
    return x.transpose(0, 2, 1, 3, 4).reshape(hw, hw, channels)


def _check_image(cfg: EncoderConfig, img: ImageTensor):
    want = (cfg.image_hw, cfg.image_hw, cfg.channels)
    if img.pixels.shape != want:
        raise ShapeError(f"image shape {img.pixels.shape} does not match config {want}")


def vision_forward(params: EncoderParams, img: ImageTensor, record: bool = False):
    """Run the vision tower; returns (embedding, tape-or-None)."""
    cfg = params.config
    _check_image(cfg, img)
    patches = patchify(img, cfg.patch)
    tokens = patches @ params.patch_proj + params.pos_embed_vision
    tokens_in = tokens
    block_tapes = [] if record else None
    for blk in params.vision_blocks:
        tokens, tape = _block_fwd(tokens, blk, record)
        if record:
            block_tapes.append(tape)
    pooled = tokens.mean(axis=0)
    emb = pooled @ params.head_vision
    if not record:
        return emb, None
    return emb, TowerTape(tokens_in=tokens_in, blocks=block_tapes, pooled=pooled,
                          emb=emb, patches=patches)


def text_forward(params: EncoderParams, token_ids, record: bool = False):
    """Run the text tower on a token-id sequence; returns (embedding, tape)."""
    cfg = params.config
    ids = [int(t) for t in token_ids]
    if len(ids) > cfg.text_len:
        raise ArgumentError(f"sequence of {len(ids)} tokens exceeds text_len {cfg.text_len}")
    ids = ids + [0] * (cfg.text_len - len(ids))  # pad id 0
    for t in ids:
        if t < 0 or t >= cfg.vocab:
            raise ArgumentError(f"token id {t} out of range [0, {cfg.vocab})")
    tokens = params.token_table[ids] + params.pos_embed_text
    tokens_in = tokens
    block_tapes = [] if record else None
    for blk in params.text_blocks:
        tokens, tape = _block_fwd(tokens, blk, record)
        if record:
            block_tapes.append(tape)
    pooled = tokens.mean(axis=0)
    emb = pooled @ params.head_text
    if not record:
        return emb, None
    return emb, TowerTape(tokens_in=tokens_in, blocks=block_tapes, pooled=pooled,
                          emb=emb, token_ids=tuple(ids))


def vision_encode(params: EncoderParams, img: ImageTensor) -> np.ndarray:
    """Embed an image into the shared space (length n_embed)."""
    emb, _ = vision_forward(params, img, record=False)
    return emb


def text_encode(params: EncoderParams, token_ids) -> np.ndarray:
    """Embed a token sequence into the shared space (length n_embed)."""
    emb, _ = text_forward(params, token_ids, record=False)
    return emb


def vision_embedder(params: EncoderParams):
    """Bind parameters into an ``ImageTensor -> embedding`` callable."""

    def embed(img: ImageTensor) -> np.ndarray:
        return vision_encode(params, img)

    return embed


def attention_weights(tokens: np.ndarray, block: BlockParams, head: int) -> np.ndarray:
    """Softmax attention matrix of a single head for the given token rows."""
    tokens = np.asarray(tokens, dtype=np.float64)
    n_heads = block.w_q.shape[0]
    if not 0 <= head < n_heads:
        raise ArgumentError(f"head {head} out of range [0, {n_heads})")
    if tokens.ndim != 2 or tokens.shape[1] != block.w_q.shape[1]:
        raise ShapeError(f"tokens shape {tokens.shape} incompatible with d={block.w_q.shape[1]}")
    k_dim = block.w_q.shape[2]
    q = tokens @ block.w_q[head]
    k = tokens @ block.w_k[head]
    return softmax_rows(q @ k.T / math.sqrt(k_dim))


def block_forward(tokens: np.ndarray, block: BlockParams) -> np.ndarray:
    """Apply one transformer block to an (n, d) token matrix."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[1] != block.w_q.shape[1]:
        raise ShapeError(f"tokens shape {tokens.shape} incompatible with d={block.w_q.shape[1]}")
    z, _ = _block_fwd(tokens, block, record=False)
    return z


# ---------------------------------------------------------------------------
# Toy contrastive trainer
# ---------------------------------------------------------------------------


def contrastive_batch_loss(params: EncoderParams, images: list[ImageTensor],
                           class_ids: list[int], class_tokens: list[tuple[int, ...]],
                           temperature: float = CONTRASTIVE_TEMPERATURE) -> float:
    """Symmetric cross-entropy of one batch, without gradients."""
    img_embs = np.stack([vision_encode(params, im) for im in images])
    txt_embs = np.stack([text_encode(params, class_tokens[c]) for c in class_ids])
    return _clip_loss(img_embs, txt_embs, temperature)[0]


def _normalize_rows(m: np.ndarray):
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / norms, norms


def _clip_loss(img_embs: np.ndarray, txt_embs: np.ndarray, temperature: float):
    """Loss and gradients w.r.t. the raw (unnormalized) embeddings.

    Embeddings are L2-normalized inside the loss (the usual convention that
    makes a 0.07 temperature meaningful); the classification path elsewhere
    keeps raw inner products.
    """
    b = img_embs.shape[0]
    ni, img_norms = _normalize_rows(img_embs)
    nt, txt_norms = _normalize_rows(txt_embs)
    logits = ni @ nt.T / temperature
    p_rows = softmax_rows(logits)
    p_cols = softmax_rows(logits.T).T
    eye = np.eye(b)
    loss = -0.5 * (
        np.log(np.clip(p_rows[eye == 1], 1e-300, None)).mean()
        + np.log(np.clip(p_cols[eye == 1], 1e-300, None)).mean()
    )
    d_logits = 0.5 * ((p_rows - eye) + (p_cols - eye)) / b
    d_ni = d_logits @ nt / temperature
    d_nt = d_logits.T @ ni / temperature
    # backprop through row normalization: d_raw = (d_n - n * <n, d_n>) / ||raw||
    d_img = (d_ni - ni * (ni * d_ni).sum(axis=1, keepdims=True)) / img_norms
    d_txt = (d_nt - nt * (nt * d_nt).sum(axis=1, keepdims=True)) / txt_norms
    return float(loss), d_img, d_txt


def train_contrastive(params: EncoderParams, dataset: LabeledImages, epochs: int,
                      lr: float, seed: int) -> EncoderParams:
    """Train both towers with a symmetric in-batch contrastive objective.

    Each batch holds one image per class so the target pairing is the
    diagonal. Plain SGD; the input params are left untouched and an updated
    copy is returned. Per-epoch mean loss is logged at INFO level.

    Layer norms over near-zero tokens amplify parameter gradients by orders
    of magnitude, so useful learning rates are of order 1e-5; larger steps
    collapse the towers within one epoch.
    """
    from .autodiff import accumulate_tower_grads  # deferred; autodiff imports us

    if len(dataset) == 0:
        raise ArgumentError("train_contrastive needs a nonempty dataset")
    if epochs < 0:
        raise ArgumentError("epochs must be >= 0")
    new = params.deep_copy()
    by_class: dict[int, list[int]] = {}
    for i, lab in enumerate(dataset.labels):
        by_class.setdefault(int(lab), []).append(i)
    classes = sorted(by_class)
    rounds = min(len(v) for v in by_class.values())
    for epoch in range(epochs):
        order = {
            c: list(np.random.Generator(
                np.random.Philox(key=derive_seed(seed, "epoch", epoch, "class", c))
            ).permutation(by_class[c]))
            for c in classes
        }
        losses = []
        for r in range(rounds):
            batch_idx = [order[c][r] for c in classes]
            images = [dataset.images[i] for i in batch_idx]
            class_ids = [int(dataset.labels[i]) for i in batch_idx]
            img_embs, img_tapes, txt_embs, txt_tapes = [], [], [], []
            for im, c in zip(images, class_ids):
                e, t = vision_forward(new, im, record=True)
                img_embs.append(e)
                img_tapes.append(t)
                e, t = text_forward(new, dataset.class_tokens[c], record=True)
                txt_embs.append(e)
                txt_tapes.append(t)
            loss, d_img, d_txt = _clip_loss(
                np.stack(img_embs), np.stack(txt_embs), CONTRASTIVE_TEMPERATURE
            )
            losses.append(loss)
            if lr != 0.0:
                grads = zeros_like_params(new)
                for tape, cot in zip(img_tapes, d_img):
                    accumulate_tower_grads(new, tape, cot, grads, tower="vision")
                for tape, cot in zip(txt_tapes, d_txt):
                    accumulate_tower_grads(new, tape, cot, grads, tower="text")
                _sgd_step(new, grads, lr)
        log.info("contrastive epoch %d: mean loss %.6f", epoch, float(np.mean(losses)))
    return new


def _sgd_step(params: EncoderParams, grads: EncoderParams, lr: float):
    for pb, gb in zip(params.vision_blocks + params.text_blocks,
                      grads.vision_blocks + grads.text_blocks):
        for f in ("w_q", "w_k", "w_v", "w_c", "gamma1", "beta1", "gamma2", "beta2",
                  "w1", "w2"):
            getattr(pb, f)[...] -= lr * getattr(gb, f)
    for f in ("patch_proj", "token_table", "pos_embed_vision", "pos_embed_text",
              "head_vision", "head_text"):
        getattr(params, f)[...] -= lr * getattr(grads, f)
