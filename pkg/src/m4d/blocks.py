"""Mamba blocks, the 4D positional encoding, and the short-term tube encoder.

A block computes, for input F with width d and expansion 2:

    F' = DW(MLP(LN(F)))                      (conv branch, width 2d)
    out = MLP( LN(SSM(silu(F'))) * silu(MLP_gate(LN(F))) ) + F

The output projection starts at zero, so every block is the identity at
initialization; that property is load-bearing for tests across the stack.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import ordering, ssm
from .autodiff import Tensor, parameter

DW_WIDTH = 4
EXPAND = 2
PE_HIDDEN = 32


@dataclass
class MambaBlockParams:
    ln1_g: Tensor
    ln1_b: Tensor
    W_in: Tensor          # [d, e*d]
    b_in: Tensor
    dw_k: Tensor          # [w, e*d]
    A_log: Tensor         # [e*d, n]; A = -exp(A_log) stays negative under SGD
    W_B: Tensor           # [e*d, n]
    W_C: Tensor           # [e*d, n]
    W_delta: Tensor       # [e*d, e*d]
    delta_bias: Tensor    # [e*d]
    D: Tensor             # [e*d]
    ln2_g: Tensor
    ln2_b: Tensor
    W_gate: Tensor        # [d, e*d]
    b_gate: Tensor
    W_out: Tensor         # [e*d, d], zero at init
    b_out: Tensor

    def named(self, prefix):
        for field in self.__dataclass_fields__:
            yield f"{prefix}/{field}", getattr(self, field)


def init_mamba_block(d, rng, w=DW_WIDTH, expand=EXPAND, n_state=ssm.N_STATE):
    e = expand * d
    dw = np.zeros((w, e))
    dw[-1] = 1.0  # start as the identity tap
    return MambaBlockParams(
        ln1_g=parameter(np.ones(d)), ln1_b=parameter(np.zeros(d)),
        W_in=parameter(rng.normal(0, d ** -0.5, (d, e))), b_in=parameter(np.zeros(e)),
        dw_k=parameter(dw),
        A_log=parameter(np.log(np.tile(np.arange(1.0, n_state + 1.0), (e, 1)))),
        W_B=parameter(rng.normal(0, e ** -0.5, (e, n_state))),
        W_C=parameter(rng.normal(0, e ** -0.5, (e, n_state))),
        W_delta=parameter(rng.normal(0, e ** -0.5, (e, e))),
        delta_bias=parameter(np.full(e, ssm.DELTA_BIAS_INIT)),
        D=parameter(np.ones(e)),
        ln2_g=parameter(np.ones(e)), ln2_b=parameter(np.zeros(e)),
        W_gate=parameter(rng.normal(0, d ** -0.5, (d, e))), b_gate=parameter(np.zeros(e)),
        W_out=parameter(np.zeros((e, d))), b_out=parameter(np.zeros(d)),
    )


def ssm_apply(p, u):
    """Selective scan over u[..., L, e] with the block's SSM parameters."""
    shape = u.data.shape
    e = shape[-1]
    u3 = ad.reshape(u, (-1, shape[-2], e))
    A = ad.mul(ad.exp(p.A_log), -1.0)
    delta = ad.softplus(ad.add(ad.matmul(u3, p.W_delta), p.delta_bias))
    Bm = ad.matmul(u3, p.W_B)
    Cm = ad.matmul(u3, p.W_C)
    y = ssm.ssm_scan(delta, A, Bm, Cm, u3)
    y = ad.add(y, ad.mul(p.D, u3))
    return ad.reshape(y, shape)


def mamba_block(x, p):
    """One gated SSM block on x[..., L, d]; residual, identity at init."""
    if x.data.shape[-1] != p.W_in.data.shape[0]:
        raise ValueError(
            f"width mismatch: x has {x.data.shape[-1]}, block expects {p.W_in.data.shape[0]}")
    h = ad.layer_norm(x, p.ln1_g, p.ln1_b)
    conv = ad.depthwise_conv1d(ad.add(ad.matmul(h, p.W_in), p.b_in), p.dw_k)
    s = ssm_apply(p, ad.silu(conv))
    s = ad.layer_norm(s, p.ln2_g, p.ln2_b)
    gate = ad.silu(ad.add(ad.matmul(h, p.W_gate), p.b_gate))
    out = ad.add(ad.matmul(ad.mul(s, gate), p.W_out), p.b_out)
    return ad.add(x, out)


@dataclass
class PositionalEncoder4D:
    """Two-layer perceptron (x, y, z, t) -> d-vector."""

    W1: Tensor  # [4, hidden]
    b1: Tensor
    W2: Tensor  # [hidden, d]
    b2: Tensor

    def named(self, prefix):
        for field in self.__dataclass_fields__:
            yield f"{prefix}/{field}", getattr(self, field)

    def __call__(self, coords):
        """coords[..., 4] (numpy or Tensor) -> Tensor[..., d]."""
        if not isinstance(coords, Tensor):
            coords = ad.constant(coords)
        if coords.data.shape[-1] != 4:
            raise ValueError("positional encoder input must end in 4 coordinates")
        h = ad.silu(ad.add(ad.matmul(coords, self.W1), self.b1))
        return ad.add(ad.matmul(h, self.W2), self.b2)


def init_positional_encoder(d, rng, hidden=PE_HIDDEN):
    return PositionalEncoder4D(
        W1=parameter(rng.normal(0, 0.5, (4, hidden))), b1=parameter(np.zeros(hidden)),
        W2=parameter(rng.normal(0, hidden ** -0.5, (hidden, d))), b2=parameter(np.zeros(d)),
    )


@dataclass
class IntraFrameEncoder:
    """Token embedder plus the short-term block stack (spatial reduction: max)."""

    W_embed: Tensor   # [C_in, d]
    b_embed: Tensor
    blocks: list      # of MambaBlockParams

    def named(self, prefix):
        yield f"{prefix}/W_embed", self.W_embed
        yield f"{prefix}/b_embed", self.b_embed
        for i, blk in enumerate(self.blocks):
            yield from blk.named(f"{prefix}/block{i}")


def init_intra_encoder(d, c_in, k_intra, rng):
    if k_intra < 1:
        raise ValueError("need at least one intra block")
    c = max(c_in, 1)
    return IntraFrameEncoder(
        W_embed=parameter(rng.normal(0, c ** -0.5, (c, d))),
        b_embed=parameter(np.zeros(d)),
        blocks=[init_mamba_block(d, rng) for _ in range(k_intra)],
    )


def temporal_max_pool(per_frame):
    """Elementwise max over the frame axis of [k_t, d]."""
    if per_frame.data.shape[0] < 1:
        raise ValueError("temporal pool needs at least one frame")
    return ad.tensor_max(per_frame, axis=0)


def tube_tokens(tube, video, encoder, pe):
    """Embedded neighbor features plus displacement encoding, [k_t, K, d]."""
    k_t, K = tube.neighbor_idx.shape
    if video.feats is None:
        feats = np.ones((k_t, K, 1))
    else:
        feats = np.stack([video.feats[f][tube.neighbor_idx[s]]
                          for s, f in enumerate(tube.clip_frames)])
    emb = ad.add(ad.matmul(ad.constant(feats), encoder.W_embed), encoder.b_embed)
    return ad.add(emb, pe(tube.disp))


def encode_tube(tube, video, encoder, pe, intra_order=None, use_blocks=True):
    """One tube -> one d-vector: per-frame blocks over K neighbor tokens,
    max-pool over K, then max-pool over the k_t clip frames."""
    x = tube_tokens(tube, video, encoder, pe)
    if intra_order is not None and intra_order.strategy != "unidirectional":
        perm = np.stack([ordering.spatial_rank(tube.disp[s, :, :3], intra_order.axis_key)
                         for s in range(tube.disp.shape[0])])
        x = ad.gather_seq(x, perm)
    if use_blocks:
        for blk in encoder.blocks:
            x = mamba_block(x, blk)
    pooled = ad.tensor_max(x, axis=-2)          # over K neighbors -> [k_t, d]
    return temporal_max_pool(pooled)
