"""Point-cloud-video partitioning: anchor frames, FPS, radius KNN, point tubes.

All searches are brute force; frames here hold at most a few thousand points
so acceleration structures would be dead weight. Every operation is pure and
deterministic (FPS is seeded at index 0, ties break toward the lowest index).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

LABEL_KINDS = ("none", "video", "frame", "point")


@dataclass
class PointCloudVideo:
    coords: np.ndarray                 # [T, N, 3]
    feats: np.ndarray | None = None    # [T, N, C]
    labels: np.ndarray | None = None   # scalar / [T] / [T, N] ints
    label_kind: str = "none"

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[2] != 3:
            raise ValueError("coords must be [T, N, 3]")
        if not np.isfinite(self.coords).all():
            raise ValueError("coordinates must be finite")
        if self.feats is not None:
            self.feats = np.asarray(self.feats, dtype=np.float64)
            if self.feats.shape[:2] != self.coords.shape[:2]:
                raise ValueError("feats must be [T, N, C]")
        if self.label_kind not in LABEL_KINDS:
            raise ValueError(f"unknown label_kind {self.label_kind!r}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            T, N = self.coords.shape[:2]
            expect = {"video": (), "frame": (T,), "point": (T, N)}.get(self.label_kind)
            if expect is None or self.labels.shape != expect:
                raise ValueError(
                    f"labels shape {self.labels.shape} does not match "
                    f"label_kind {self.label_kind!r}")

    @property
    def T(self):
        return self.coords.shape[0]

    @property
    def N(self):
        return self.coords.shape[1]

    @property
    def C(self):
        return 0 if self.feats is None else self.feats.shape[2]


@dataclass
class ClipPartition:
    s_t: int
    k_t: int
    anchors: np.ndarray       # [F] frame indices
    clips: np.ndarray         # [F, k_t] frame indices


@dataclass
class PointTube:
    anchor_frame: int                 # actual frame index of the anchor
    anchor_index: int                 # point index within the anchor frame
    anchor_xyz: np.ndarray            # [3]
    neighbor_idx: np.ndarray          # [k_t, K] point indices per clip frame
    disp: np.ndarray                  # [k_t, K, 4] (dx, dy, dz, dt)
    clip_frames: np.ndarray = field(default_factory=lambda: np.zeros(0, int))  # [k_t]


def select_anchor_frames(T, s_t):
    """Anchor indices k*s_t + s_t//2 for k = 0 .. T//s_t - 1."""
    if not 1 <= s_t <= T:
        raise ValueError(f"temporal stride {s_t} out of range for T={T}")
    count = T // s_t
    return np.arange(count) * s_t + s_t // 2


def build_clips(anchors, k_t, T):
    """k_t consecutive frames centered on each anchor, clamped to [0, T)."""
    if k_t < 1 or k_t % 2 == 0:
        raise ValueError("temporal kernel k_t must be odd and >= 1")
    anchors = np.asarray(anchors)
    half = k_t // 2
    offs = np.arange(-half, half + 1)
    clips = np.clip(anchors[:, None] + offs[None, :], 0, T - 1)
    s_t = int(anchors[1] - anchors[0]) if len(anchors) > 1 else T
    return ClipPartition(s_t=s_t, k_t=k_t, anchors=anchors, clips=clips)


def farthest_point_sampling(points, n):
    """Greedy max-min selection, seeded at index 0, ties to the lowest index."""
    points = np.asarray(points, dtype=np.float64)
    N = points.shape[0]
    if not 1 <= n <= N:
        raise ValueError(f"cannot sample {n} of {N} points")
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = 0
    mind = np.linalg.norm(points - points[0], axis=1)
    for i in range(1, n):
        nxt = int(np.argmax(mind))  # argmax returns the first (lowest) maximizer
        chosen[i] = nxt
        mind = np.minimum(mind, np.linalg.norm(points - points[nxt], axis=1))
    return chosen


def knn_radius(query, points, K, k_s):
    """K nearest points within radius k_s, ascending distance, index tie-break.

    Short lists are padded by repeating the nearest qualifying index (or the
    overall nearest when nothing qualifies).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 1:
        raise ValueError("empty point set")
    if K < 1 or k_s <= 0:
        raise ValueError("K must be >= 1 and k_s > 0")
    dist = np.linalg.norm(points - np.asarray(query, dtype=np.float64), axis=1)
    order = np.argsort(dist, kind="stable")
    within = order[dist[order] <= k_s]
    if len(within) >= K:
        return within[:K]
    pad = within[0] if len(within) else order[0]
    return np.concatenate([within, np.full(K - len(within), pad, dtype=np.int64)])


def build_point_tubes(video, partition, s_s, K, k_s):
    """Anchor points via FPS per anchor frame, KNN per clip frame, tubes out.

    Anchor coordinates are propagated unchanged into neighboring frames;
    dt is the clip-slot offset in [-k_t//2, k_t//2].
    """
    n = video.N // s_s
    if n < 1:
        raise ValueError(f"spatial stride {s_s} leaves no anchors for N={video.N}")
    half = partition.k_t // 2
    tubes = []
    for a_row, clip in zip(partition.anchors, partition.clips):
        frame_pts = video.coords[a_row]
        anchor_ids = farthest_point_sampling(frame_pts, n)
        for pid in anchor_ids:
            axyz = frame_pts[pid]
            nbr = np.empty((partition.k_t, K), dtype=np.int64)
            disp = np.empty((partition.k_t, K, 4))
            for slot, f in enumerate(clip):
                idx = knn_radius(axyz, video.coords[f], K, k_s)
                nbr[slot] = idx
                disp[slot, :, :3] = video.coords[f][idx] - axyz
                disp[slot, :, 3] = slot - half
            tubes.append(PointTube(
                anchor_frame=int(a_row), anchor_index=int(pid), anchor_xyz=axyz,
                neighbor_idx=nbr, disp=disp, clip_frames=np.asarray(clip)))
    return tubes


# ---------------------------------------------------------------------------
# .pcv file format


def save_pcv(video, path):
    kind = video.label_kind
    header = f"pcv v1 T={video.T} N={video.N} C={video.C} label_kind={kind}\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(video.coords.astype("<f4").tobytes())
        if video.feats is not None:
            f.write(video.feats.astype("<f4").tobytes())
        if kind != "none":
            f.write(np.asarray(video.labels).astype("<i4").tobytes())


def load_pcv(path):
    with open(path, "rb") as f:
        blob = f.read()
    nl = blob.index(b"\n")
    fields = blob[:nl].decode("ascii").split()
    if fields[:2] != ["pcv", "v1"]:
        raise ValueError(f"{path}: not a pcv v1 file")
    kv = dict(part.split("=", 1) for part in fields[2:])
    T, N, C = int(kv["T"]), int(kv["N"]), int(kv["C"])
    kind = kv["label_kind"]
    off = nl + 1
    coords = np.frombuffer(blob, "<f4", T * N * 3, off).reshape(T, N, 3)
    off += coords.nbytes
    feats = None
    if C:
        feats = np.frombuffer(blob, "<f4", T * N * C, off).reshape(T, N, C)
        off += feats.nbytes
    labels = None
    if kind != "none":
        count = {"video": 1, "frame": T, "point": T * N}[kind]
        labels = np.frombuffer(blob, "<i4", count, off)
        labels = int(labels[0]) if kind == "video" else labels.reshape(
            (T,) if kind == "frame" else (T, N)).copy()
    return PointCloudVideo(coords=np.array(coords, dtype=np.float64),
                           feats=None if feats is None else np.array(feats, dtype=np.float64),
                           labels=labels, label_kind=kind)
