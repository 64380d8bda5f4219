"""Toy-scale ablation sweeps over the axes studied in the experiments:
module on/off grid, block-count grid, positional-encoding variants, scan
orders, and the temporal-kernel / spatial-radius settings."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import ordering, training

AXES = ("modules", "blocks", "pe", "order", "stride_radius")


def _block_grid(k_intra, k_inter):
    lo_a = max(1, k_intra // 3)
    lo_b = max(1, k_inter // 3)
    return [(a, b) for a in sorted({lo_a, k_intra}) for b in sorted({lo_b, k_inter})]


def ablation_rows(axis, config):
    """(label, config-overrides) pairs mirroring the reference row sets."""
    if axis == "modules":
        return [(f"intra={'on' if a else 'off'} inter={'on' if b else 'off'}",
                 {"use_intra": a, "use_inter": b})
                for a, b in [(False, False), (True, False), (False, True), (True, True)]]
    if axis == "blocks":
        return [(f"intra={a} inter={b}", {"K_intra": a, "K_inter": b})
                for a, b in _block_grid(config.K_intra, config.K_inter)]
    if axis == "pe":
        return [(mode, {"pe_mode": mode}) for mode in ("none", "3d", "4d")]
    if axis == "order":
        rows = [(f"intra:{k}", {"intra_order": f"seq:{k}"}) for k in ordering.AXIS_KEYS]
        rows.append(("intra:uni", {"intra_order": "uni"}))
        rows.extend((f"inter:{o.cli_name()}", {"scan_order": o.cli_name()})
                    for o in ordering.all_inter_orders())
        return rows
    if axis == "stride_radius":
        rows = [(f"k_t={k}", {"k_t": k}) for k in (1, 3, 5)]
        rows.extend((f"k_s={r}", {"k_s": r}) for r in (0.3, 0.5, 0.7, 0.9))
        return rows
    raise ValueError(f"unknown ablation axis {axis!r}")


def run_ablation(axis, config, train_videos, eval_videos):
    """Train one model per row and report held-out accuracy per row."""
    results = []
    for label, overrides in ablation_rows(axis, config):
        cfg = replace(config, **overrides)
        model, _ = training.train_model(cfg, train_videos)
        metrics = training.evaluate(model, eval_videos)
        acc = metrics.get("accuracy", metrics.get("miou"))
        results.append((label, float(acc)))
    return results
