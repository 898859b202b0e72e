"""Per-well distributions of predicted scores, one row per regime."""

from __future__ import annotations

import csv
from collections import defaultdict
from typing import Iterable

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .plate import PlateLayout  # noqa: E402
from .screening import ImageScore  # noqa: E402

N_BINS = 20


def bin_edges(n_bins: int = N_BINS) -> np.ndarray:
    return np.linspace(0.0, 1.0, n_bins + 1)


def well_histograms(scores: Iterable[ImageScore], layout: PlateLayout,
                    n_bins: int = N_BINS) -> list[dict]:
    """Binned score counts per well, ordered by regime then replicate."""
    by_well = defaultdict(list)
    for s in scores:
        by_well[s.well].append(s.score)
    edges = bin_edges(n_bins)
    rows = []
    for regime in layout.regimes:
        for rep, well in enumerate(layout.wells_of(regime)):
            values = np.asarray(by_well.get(well, []), dtype=np.float64)
            counts, _ = np.histogram(values, bins=edges)
            rows.append({"regime": regime, "replicate": rep, "well": well,
                         "n": int(values.size), "counts": counts, "values": values})
    return rows


def write_histogram_csv(path, plate_id: str, rows: list[dict], n_bins: int = N_BINS) -> None:
    edges = bin_edges(n_bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["plate_id", "row", "col", "compound_dose_um", "abeta_dose_um", "replicate", "n"]
                   + [f"bin_{lo:.2f}_{hi:.2f}" for lo, hi in zip(edges[:-1], edges[1:])])
        for r in rows:
            w.writerow([plate_id, r["well"].row, r["well"].col, r["regime"].compound_dose_um,
                        r["regime"].abeta_dose_um, r["replicate"], r["n"]] + list(r["counts"]))


def plot_well_grid(rows: list[dict], title: str = "", n_bins: int = N_BINS):
    regimes = list(dict.fromkeys(r["regime"] for r in rows))
    n_cols = max(r["replicate"] for r in rows) + 1
    fig, axes = plt.subplots(len(regimes), n_cols, figsize=(2.0 * n_cols, 1.4 * len(regimes)),
                             sharex=True, squeeze=False)
    edges = bin_edges(n_bins)
    for r in rows:
        ax = axes[regimes.index(r["regime"]), r["replicate"]]
        ax.bar(edges[:-1], r["counts"], width=np.diff(edges), align="edge", color="tab:blue")
        ax.set_xlim(0, 1)
        ax.set_yticks([])
        ax.set_title(str(r["well"]), fontsize=7, pad=2)
        if r["replicate"] == 0:
            ax.set_ylabel(f"{r['regime'].compound_dose_um}/{r['regime'].abeta_dose_um}",
                          fontsize=8)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig
