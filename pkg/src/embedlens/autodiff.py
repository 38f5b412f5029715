"""Exact reverse-mode differentiation through the dual encoder.

The forward pass in :mod:`embedlens.encoder` records a :class:`TowerTape` of
cached intermediates; the functions here run the reverse sweep over that tape.
Public entry points: vector-Jacobian products w.r.t. pixels, the
embedding-matching loss gradient, and full Jacobian materialization (one
reverse pass per embedding coordinate, reusing a single tape).

ReLU's derivative at exactly 0 is taken as 0 (consistent subgradient on a
measure-zero set).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoder import (
    BlockParams,
    BlockTape,
    EncoderParams,
    ImageTensor,
    TowerTape,
    unpatchify_grad,
    vision_forward,
)
from .errors import ShapeError
from .numerics import SvdFactors, reduced_svd


@dataclass
class JacobianReport:
    """Jacobian of the image embedding w.r.t. pixels, with its reduced SVD."""

    J: np.ndarray  # (n_embed, n_pixels)
    svd: SvdFactors
    at_input: ImageTensor


def _ln_rows_bwd(dy: np.ndarray, tape, gamma: np.ndarray):
    """Backward of row-wise layer norm; returns (dx, dgamma, dbeta)."""
    g = dy * gamma
    xhat = tape.xhat
    d = xhat.shape[1]
    dx = tape.inv_std * (
        g - g.mean(axis=1, keepdims=True)
        - xhat * (g * xhat).sum(axis=1, keepdims=True) / d
    )
    return dx, (dy * xhat).sum(axis=0), dy.sum(axis=0)


def _block_bwd(blk: BlockParams, tape: BlockTape, dz: np.ndarray,
               grads: BlockParams | None):
    """Reverse one transformer block; returns gradient w.r.t. the block input.

    When ``grads`` is given, parameter gradients are accumulated into it.
    """
    k_dim = blk.w_q.shape[2]
    inv_sqrt_k = 1.0 / math.sqrt(k_dim)

    dr2, dgamma2, dbeta2 = _ln_rows_bwd(dz, tape.ln2, blk.gamma2)
    # r2 = u + relu(u @ w1) @ w2
    act = np.maximum(tape.pre, 0.0)
    dact = dr2 @ blk.w2.T
    dpre = np.where(tape.pre > 0.0, dact, 0.0)
    du = dr2 + dpre @ blk.w1.T

    dr1, dgamma1, dbeta1 = _ln_rows_bwd(du, tape.ln1, blk.gamma1)
    # r1 = x + sum_h (att_h @ v_h) @ w_c[h]
    dheads = np.matmul(dr1, blk.w_c.transpose(0, 2, 1))  # (H, n, k)
    datt = np.matmul(dheads, tape.v.transpose(0, 2, 1))  # (H, n, n)
    dv = np.matmul(tape.att.transpose(0, 2, 1), dheads)
    dscores = tape.att * (datt - (datt * tape.att).sum(axis=2, keepdims=True))
    dscores *= inv_sqrt_k
    dq = np.matmul(dscores, tape.k)
    dk = np.matmul(dscores.transpose(0, 2, 1), tape.q)
    dx = dr1 + (
        np.matmul(dq, blk.w_q.transpose(0, 2, 1))
        + np.matmul(dk, blk.w_k.transpose(0, 2, 1))
        + np.matmul(dv, blk.w_v.transpose(0, 2, 1))
    ).sum(axis=0)

    if grads is not None:
        x = tape.x
        grads.gamma2 += dgamma2
        grads.beta2 += dbeta2
        grads.gamma1 += dgamma1
        grads.beta1 += dbeta1
        grads.w2 += act.T @ dr2
        grads.w1 += tape.u.T @ dpre
        grads.w_c += np.matmul(tape.heads.transpose(0, 2, 1), dr1[None, :, :])
        grads.w_q += np.matmul(x.T[None, :, :], dq)
        grads.w_k += np.matmul(x.T[None, :, :], dk)
        grads.w_v += np.matmul(x.T[None, :, :], dv)
    return dx


def _tower_bwd(params: EncoderParams, tape: TowerTape, cotangent: np.ndarray,
               grads: EncoderParams | None, tower: str) -> np.ndarray:
    """Reverse sweep of one tower; returns gradient w.r.t. the input tokens."""
    blocks = params.vision_blocks if tower == "vision" else params.text_blocks
    head = params.head_vision if tower == "vision" else params.head_text
    n = tape.blocks[0].x.shape[0] if tape.blocks else tape.tokens_in.shape[0]

    d_pooled = head @ cotangent
    if grads is not None:
        g_head = grads.head_vision if tower == "vision" else grads.head_text
        g_head += np.outer(tape.pooled, cotangent)
    d_tokens = np.broadcast_to(d_pooled / n, (n, d_pooled.shape[0])).copy()
    gblocks = None
    if grads is not None:
        gblocks = grads.vision_blocks if tower == "vision" else grads.text_blocks
    for i in range(len(blocks) - 1, -1, -1):
        d_tokens = _block_bwd(blocks[i], tape.blocks[i],
                              d_tokens, gblocks[i] if grads is not None else None)
    return d_tokens


def accumulate_tower_grads(params: EncoderParams, tape: TowerTape,
                           cotangent: np.ndarray, grads: EncoderParams,
                           tower: str) -> None:
    """Accumulate parameter gradients of one recorded forward into ``grads``."""
    d_tokens = _tower_bwd(params, tape, cotangent, grads, tower)
    if tower == "vision":
        grads.patch_proj += tape.patches.T @ d_tokens
        grads.pos_embed_vision += d_tokens
    else:
        grads.pos_embed_text += d_tokens
        np.add.at(grads.token_table, list(tape.token_ids), d_tokens)


def _pixel_grad(params: EncoderParams, tape: TowerTape, cotangent: np.ndarray) -> np.ndarray:
    cfg = params.config
    d_tokens = _tower_bwd(params, tape, cotangent, None, "vision")
    d_patches = d_tokens @ params.patch_proj.T
    return unpatchify_grad(d_patches, cfg.image_hw, cfg.patch, cfg.channels)


def vjp(params: EncoderParams, img: ImageTensor, cotangent: np.ndarray) -> np.ndarray:
    """(df/dx)^T @ cotangent at ``img``; result is shaped like the image."""
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape != (params.config.n_embed,):
        raise ShapeError(
            f"cotangent length {cotangent.shape} != n_embed {params.config.n_embed}"
        )
    _, tape = vision_forward(params, img, record=True)
    return _pixel_grad(params, tape, cotangent)


def loss_grad(params: EncoderParams, x0: ImageTensor, x: ImageTensor,
              target: np.ndarray):
    """Matching loss 0.5 * ||f(x) - target||^2 and its exact pixel gradient.

    ``x0`` is the matching start point (x plays the role of x0 + delta); the
    loss and gradient depend on x alone, evaluated at x.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (params.config.n_embed,):
        raise ShapeError(f"target length {target.shape} != n_embed {params.config.n_embed}")
    if x0.pixels.shape != x.pixels.shape:
        raise ShapeError(f"x0 shape {x0.pixels.shape} != x shape {x.pixels.shape}")
    emb, tape = vision_forward(params, x, record=True)
    resid = emb - target
    loss = 0.5 * float(resid @ resid)
    return loss, _pixel_grad(params, tape, resid)


def jacobian(params: EncoderParams, img: ImageTensor) -> JacobianReport:
    """Materialize the full n_embed x n_pixels Jacobian at ``img``.

    One reverse pass per embedding coordinate over a single recorded tape,
    followed by a reduced SVD of the stacked rows.
    """
    cfg = params.config
    _, tape = vision_forward(params, img, record=True)
    rows = np.empty((cfg.n_embed, cfg.n_pixels))
    e = np.zeros(cfg.n_embed)
    for i in range(cfg.n_embed):
        e[i] = 1.0
        rows[i] = _pixel_grad(params, tape, e).reshape(-1)
        e[i] = 0.0
    return JacobianReport(J=rows, svd=reduced_svd(rows), at_input=img)


class LinearSurrogate:
    """Exactly linear stand-in ``f(x) = A @ x`` for validating the analysis
    pipeline: its vjp, Jacobian, and noise-response are known in closed form.
    """

    def __init__(self, a: np.ndarray):
        self.a = np.asarray(a, dtype=np.float64)
        if self.a.ndim != 2:
            raise ShapeError("LinearSurrogate needs a matrix")

    @property
    def n_inputs(self) -> int:
        return self.a.shape[1]

    def embed(self, x: np.ndarray) -> np.ndarray:
        return self.a @ np.asarray(x, dtype=np.float64).reshape(-1)

    def vjp(self, x: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
        return self.a.T @ np.asarray(cotangent, dtype=np.float64)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.a
