"""Serialization of spatio-temporal tokens into 1D scan sequences.

Two strategies plus the native order:
  * sequential      — each frame's tokens in ascending spatial rank, frames
                      concatenated in time order,
  * cross_temporal  — descending spatial rank, emitting every frame's token
                      of that rank before moving to the next rank,
  * unidirectional  — native (frame-major, FPS-index) order.

Spatial ranks are per frame: one-letter keys sort by that coordinate,
three-letter keys sort lexicographically, all with index tie-break.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AXIS_KEYS = ("X", "Y", "Z", "XYZ", "XZY", "YXZ", "YZX", "ZXY", "ZYX")
_AXIS_COL = {"X": 0, "Y": 1, "Z": 2}


@dataclass(frozen=True)
class ScanOrder:
    strategy: str             # sequential | cross_temporal | unidirectional
    axis_key: str = "none"

    def __post_init__(self):
        if self.strategy not in ("sequential", "cross_temporal", "unidirectional"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "unidirectional":
            if self.axis_key != "none":
                raise ValueError("unidirectional takes no axis key")
        elif self.axis_key not in AXIS_KEYS:
            raise ValueError(f"unknown axis key {self.axis_key!r}")

    def cli_name(self):
        if self.strategy == "unidirectional":
            return "uni"
        prefix = "seq" if self.strategy == "sequential" else "cross"
        return f"{prefix}:{self.axis_key}"


def parse_order(name):
    """Parse CLI order names: seq:X .. seq:ZYX, cross:X .. cross:ZYX, uni."""
    if name == "uni":
        return ScanOrder("unidirectional")
    try:
        prefix, key = name.split(":", 1)
    except ValueError:
        raise ValueError(f"bad scan order {name!r}") from None
    strategy = {"seq": "sequential", "cross": "cross_temporal"}.get(prefix)
    if strategy is None or key not in AXIS_KEYS:
        raise ValueError(f"bad scan order {name!r}")
    return ScanOrder(strategy, key)


def all_inter_orders():
    """The 19 inter-frame variants: 9 sequential + uni + 9 cross-temporal."""
    orders = [ScanOrder("sequential", k) for k in AXIS_KEYS]
    orders.append(ScanOrder("unidirectional"))
    orders.extend(ScanOrder("cross_temporal", k) for k in AXIS_KEYS)
    return orders


@dataclass
class Serialization:
    permutation: np.ndarray   # [F*n] flat token index at each sequence position
    inverse: np.ndarray       # [F*n] sequence position of each flat token

    def apply(self, tokens):
        """Reorder numpy tokens[..., F*n, d] (or a flat [F*n]) into sequence order."""
        axis = -1 if np.ndim(tokens) == 1 else -2
        return np.take(tokens, self.permutation, axis=axis)

    def undo(self, seq):
        axis = -1 if np.ndim(seq) == 1 else -2
        return np.take(seq, self.inverse, axis=axis)


def spatial_rank(points, axis_key):
    """Ascending rank permutation of one frame's points under the key."""
    points = np.asarray(points)
    if axis_key in _AXIS_COL:
        keys = (np.arange(points.shape[0]), points[:, _AXIS_COL[axis_key]])
    else:
        cols = [points[:, _AXIS_COL[ax]] for ax in axis_key]
        # np.lexsort sorts by the last key first; index is the final tie-break
        keys = (np.arange(points.shape[0]),) + tuple(reversed(cols))
    return np.lexsort(keys)


def serialize(coords, order):
    """coords[F, n, 3] per-frame anchor coordinates -> Serialization.

    Token (f, i) lives at flat index f*n + i; unequal frame counts are ruled
    out by the fixed [F, n, 3] shape.
    """
    coords = np.asarray(coords)
    F, n = coords.shape[0], coords.shape[1]
    flat = np.arange(F * n).reshape(F, n)
    if order.strategy == "unidirectional":
        perm = flat.reshape(-1)
    else:
        ranked = np.stack([flat[f][spatial_rank(coords[f], order.axis_key)]
                           for f in range(F)])          # [F, n] flat ids by rank
        if order.strategy == "sequential":
            perm = ranked.reshape(-1)
        else:
            perm = ranked[:, ::-1].T.reshape(-1)        # rank-major, descending
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size)
    return Serialization(permutation=perm, inverse=inverse)


def deserialize(seq_output, serialization):
    """Restore native token order; exact inverse of serialization.apply."""
    seq_output = np.asarray(seq_output)
    if seq_output.shape[-2] != serialization.permutation.size:
        raise ValueError("sequence length does not match serialization")
    return serialization.undo(seq_output)
