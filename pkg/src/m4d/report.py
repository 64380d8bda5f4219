"""Figure rendering for bench and ablation reports (written next to the
delimited text output; everything needed to re-plot stays in the text)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_bench(records, slopes, path):
    kernels = list(dict.fromkeys(r.kernel for r in records))
    fig, (ax_t, ax_m) = plt.subplots(1, 2, figsize=(10, 4))
    for k in kernels:
        pts = sorted((r.L, r.wall_ns, r.peak_bytes) for r in records if r.kernel == k)
        L = [p[0] for p in pts]
        ax_t.loglog(L, [p[1] / 1e6 for p in pts], "o-",
                    label=f"{k} (slope {slopes[k]:.2f})")
        ax_m.loglog(L, [p[2] / 1e6 for p in pts], "o-", label=k)
    ax_t.set_xlabel("sequence length L")
    ax_t.set_ylabel("wall time [ms]")
    ax_t.set_title("runtime scaling")
    ax_t.legend()
    ax_m.set_xlabel("sequence length L")
    ax_m.set_ylabel("peak memory [MB]")
    ax_m.set_title("memory scaling")
    ax_m.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ablation(axis, rows, path):
    """rows: list of (label, accuracy)."""
    labels = [r[0] for r in rows]
    values = [r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(max(5, 0.6 * len(rows) + 2), 4))
    ax.bar(range(len(rows)), values)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("accuracy [%]")
    ax.set_title(f"ablation axis: {axis}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
