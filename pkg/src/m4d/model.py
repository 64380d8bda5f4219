"""Backbone assembly: tube encoding, inter-frame scan, task heads, losses.

The forward path is batched over videos of identical (T, N) shape: tube
tokens for a whole minibatch flow through the intra stack as one [G, K, d]
tensor, and the serialized anchor tokens through the inter stack as one
[B, F*n, d] tensor. `prepare_video` does all geometry once per video so
epochs never repeat FPS/KNN work.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import blocks, geometry, ordering

TASKS = ("recognition", "action_seg", "semantic_seg")
PE_MODES = ("none", "3d", "4d")


@dataclass
class Mamba4DConfig:
    task: str = "recognition"
    classes: int = 2
    s_t: int = 2
    k_t: int = 3
    s_s: int = 32
    K: int = 32
    k_s: float = 0.7
    d: int = 128
    K_intra: int = 12
    K_inter: int = 4
    intra_order: str = "uni"
    scan_order: str = "cross:XZY"
    pe_mode: str = "4d"
    use_intra: bool = True
    use_inter: bool = True
    lr: float = 0.01
    momentum: float = 0.9
    decay_epochs: tuple = (20, 30)
    decay_factor: float = 0.1
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.pe_mode not in PE_MODES:
            raise ValueError(f"unknown pe_mode {self.pe_mode!r}")
        if self.k_t % 2 == 0:
            raise ValueError("k_t must be odd")
        if self.classes < 1:
            raise ValueError("need a positive class count")
        ordering.parse_order(self.scan_order)
        if self.intra_order != "uni":
            ordering.parse_order(self.intra_order)


@dataclass
class TubeBatch:
    """Per-video geometry, precomputed once."""

    disp: np.ndarray            # [F, n, k_t, K, 4]
    feats: np.ndarray           # [F, n, k_t, K, C_in]
    anchor_coords: np.ndarray   # [F, n, 3]
    anchor_frames: np.ndarray   # [F]
    serialization: ordering.Serialization
    intra_perm: np.ndarray | None   # [F, n, k_t, K] or None
    video: geometry.PointCloudVideo


class Mamba4DModel:
    def __init__(self, config, c_in=0, rng=None):
        rng = np.random.default_rng(config.seed) if rng is None else rng
        self.config = config
        self.intra = blocks.init_intra_encoder(config.d, c_in, config.K_intra, rng)
        self.pe_intra = blocks.init_positional_encoder(config.d, rng)
        self.pe_inter = blocks.init_positional_encoder(config.d, rng)
        self.inter_blocks = [blocks.init_mamba_block(config.d, rng)
                             for _ in range(config.K_inter)]
        self.W_head = ad.parameter(rng.normal(0, config.d ** -0.5,
                                              (config.d, config.classes)))
        self.b_head = ad.parameter(np.zeros(config.classes))

    def named_params(self):
        yield from self.intra.named("intra")
        yield from self.pe_intra.named("pe_intra")
        yield from self.pe_inter.named("pe_inter")
        for i, blk in enumerate(self.inter_blocks):
            yield from blk.named(f"inter/block{i}")
        yield "head/W", self.W_head
        yield "head/b", self.b_head

    def load_state(self, state):
        for name, t in self.named_params():
            if name not in state:
                raise ValueError(f"checkpoint is missing parameter {name}")
            if state[name].shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{state[name].shape} vs {t.data.shape}")
            t.data = np.array(state[name])

    # ------------------------------------------------------------------
    # geometry preparation

    def prepare_video(self, video):
        cfg = self.config
        part = geometry.build_clips(
            geometry.select_anchor_frames(video.T, cfg.s_t), cfg.k_t, video.T)
        tubes = geometry.build_point_tubes(video, part, cfg.s_s, cfg.K, cfg.k_s)
        F = len(part.anchors)
        n = video.N // cfg.s_s
        disp = np.stack([t.disp for t in tubes]).reshape(F, n, cfg.k_t, cfg.K, 4)
        if video.feats is None:
            feats = np.ones((F, n, cfg.k_t, cfg.K, 1))
        else:
            feats = np.stack([
                np.stack([video.feats[f][t.neighbor_idx[s]]
                          for s, f in enumerate(t.clip_frames)])
                for t in tubes]).reshape(F, n, cfg.k_t, cfg.K, -1)
        anchor_coords = np.stack([t.anchor_xyz for t in tubes]).reshape(F, n, 3)
        ser = ordering.serialize(anchor_coords, ordering.parse_order(cfg.scan_order))
        intra_perm = None
        if cfg.intra_order != "uni":
            order = ordering.parse_order(cfg.intra_order)
            flat = disp.reshape(-1, cfg.K, 4)
            intra_perm = np.stack([
                ordering.spatial_rank(flat[i, :, :3], order.axis_key)
                for i in range(flat.shape[0])]).reshape(F, n, cfg.k_t, cfg.K)
        return TubeBatch(disp=disp, feats=feats, anchor_coords=anchor_coords,
                         anchor_frames=np.asarray(part.anchors),
                         serialization=ser, intra_perm=intra_perm, video=video)

    # ------------------------------------------------------------------
    # forward

    def _pe(self, encoder, coords):
        mode = self.config.pe_mode
        if mode == "none":
            return None
        if mode == "3d":
            coords = coords * np.array([1.0, 1.0, 1.0, 0.0])
        return encoder(coords)

    def encode(self, batches):
        """[TubeBatch, ...] (same shapes) -> features Tensor [B, F, n, d]."""
        cfg = self.config
        B = len(batches)
        disp = np.stack([tb.disp for tb in batches])
        feats = np.stack([tb.feats for tb in batches])
        Bv, F, n, k_t, K, _ = disp.shape
        x = ad.add(ad.matmul(ad.constant(feats), self.intra.W_embed),
                   self.intra.b_embed)
        pe = self._pe(self.pe_intra, disp)
        if pe is not None:
            x = ad.add(x, pe)
        x = ad.reshape(x, (B * F * n * k_t, K, cfg.d))
        if batches[0].intra_perm is not None:
            perm = np.stack([tb.intra_perm for tb in batches]).reshape(-1, K)
            x = ad.gather_seq(x, perm)
        if cfg.use_intra:
            for blk in self.intra.blocks:
                x = blocks.mamba_block(x, blk)
        x = ad.reshape(x, (B, F, n, k_t, K, cfg.d))
        x = ad.tensor_max(x, axis=-2)       # over K neighbors
        x = ad.tensor_max(x, axis=-2)       # over k_t clip frames
        # inter-frame path over serialized anchor tokens
        anchor4 = np.concatenate([
            np.stack([tb.anchor_coords for tb in batches]),
            np.broadcast_to(
                np.stack([tb.anchor_frames for tb in batches]).astype(np.float64)
                [:, :, None, None], (B, F, n, 1)),
        ], axis=-1)
        pe2 = self._pe(self.pe_inter, anchor4)
        if pe2 is not None:
            x = ad.add(x, pe2)
        x = ad.reshape(x, (B, F * n, cfg.d))
        perm = np.stack([tb.serialization.permutation for tb in batches])
        x = ad.gather_seq(x, perm)
        if cfg.use_inter:
            for blk in self.inter_blocks:
                x = blocks.mamba_block(x, blk)
        inv = np.stack([tb.serialization.inverse for tb in batches])
        x = ad.gather_seq(x, inv)
        return ad.reshape(x, (B, F, n, cfg.d))

    # ------------------------------------------------------------------
    # heads

    def classify_video(self, features):
        """features[B, F, n, d] -> logits[B, classes] via global max-pool."""
        B, F, n, d = features.data.shape
        pooled = ad.tensor_max(ad.reshape(features, (B, F * n, d)), axis=-2)
        return ad.add(ad.matmul(pooled, self.W_head), self.b_head)

    def segment_frames(self, features, T):
        """features[B, F, n, d] -> per-frame logits [B, T, classes].

        Anchor-frame predictions replicate to all T frames by nearest anchor
        (ties toward the later anchor).
        """
        pooled = ad.tensor_max(features, axis=-2)   # [B, F, d]
        logits = ad.add(ad.matmul(pooled, self.W_head), self.b_head)
        anchors = geometry.select_anchor_frames(T, self.config.s_t)
        idx = nearest_anchor_index(T, anchors)
        return ad.gather_seq(logits, idx[None, :])

    def segment_points(self, features, batches):
        """features[B, F, n, d] -> list of per-point logit Tensors [T, N, classes].

        Each original point takes the inverse-distance-weighted blend
        (3 nearest anchors of its nearest anchor frame, power 2, eps 1e-8).
        """
        B, F, n, d = features.data.shape
        out = []
        for b, tb in enumerate(batches):
            T, N = tb.video.T, tb.video.N
            fidx = nearest_anchor_index(T, tb.anchor_frames)
            k = min(3, n)
            nbr = np.empty((T, N, k), dtype=np.int64)
            wts = np.empty((T, N, k))
            for t in range(T):
                f = fidx[t]
                dist = np.linalg.norm(
                    tb.video.coords[t][:, None, :] - tb.anchor_coords[f][None, :, :],
                    axis=-1)                         # [N, n]
                sel = np.argsort(dist, axis=1, kind="stable")[:, :k]
                dsel = np.take_along_axis(dist, sel, axis=1)
                w = 1.0 / (dsel ** 2 + 1e-8)
                wts[t] = w / w.sum(axis=1, keepdims=True)
                nbr[t] = sel
            flat = ad.reshape(ad.slice_axis(features, 0, b, b + 1), (F * n, d))
            take = (fidx[:, None, None] * n + nbr).reshape(-1)
            frame_feats = ad.reshape(ad.gather_seq(flat, take), (T, N, k, d))
            interp = ad.tensor_sum(ad.mul(frame_feats, ad.constant(wts[..., None])),
                                   axis=2)
            out.append(ad.add(ad.matmul(interp, self.W_head), self.b_head))
        return out


def nearest_anchor_index(T, anchors):
    """For each frame, the index of the nearest anchor (later one on ties)."""
    anchors = np.asarray(anchors)
    dist = np.abs(np.arange(T)[:, None] - anchors[None, :])
    rev = dist[:, ::-1]
    return anchors.size - 1 - np.argmin(rev, axis=1)


# ---------------------------------------------------------------------------
# loss


def cross_entropy(logits, targets, class_weights=None):
    """Mean of -w_y * log p_y over items; softmax with max-subtraction."""
    shape = logits.data.shape
    m = int(np.prod(shape[:-1]))
    classes = shape[-1]
    z = ad.reshape(logits, (m, classes))
    targets = np.asarray(targets).reshape(m)
    if np.any(targets < 0) or np.any(targets >= classes):
        raise ValueError("target class out of range")
    z = ad.sub(z, ad.detach(ad.tensor_max(z, axis=-1, keepdims=True)))
    logp = ad.sub(z, ad.log(ad.tensor_sum(ad.exp(z), axis=-1, keepdims=True)))
    onehot = np.zeros((m, classes))
    onehot[np.arange(m), targets] = 1.0
    if class_weights is not None:
        onehot *= np.asarray(class_weights)[targets][:, None]
    return ad.mul(ad.tensor_sum(ad.mul(logp, ad.constant(onehot))), -1.0 / m)


def inverse_frequency_weights(labels, classes):
    """Per-class weights proportional to 1/frequency, normalized to mean 1."""
    counts = np.bincount(np.asarray(labels).reshape(-1), minlength=classes)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1), 0.0)
    present = inv[inv > 0]
    if present.size == 0:
        return np.ones(classes)
    return np.where(inv > 0, inv / present.mean(), 1.0)
