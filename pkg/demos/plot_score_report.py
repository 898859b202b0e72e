"""
Per-well score histograms
=========================

A grid with one row per regime and one panel per replicate well shows how
consistent the replicates are.
"""

import numpy as np

from neuroscreen.plate import default_layout
from neuroscreen.report import plot_well_grid, well_histograms, write_histogram_csv
from neuroscreen.screening import ImageScore

layout = default_layout("Spiramycin", "P02")
rng = np.random.default_rng(1)
scores = [ImageScore("P02", well, f, float(rng.beta(2, 5) if r.abeta_dose_um == 0 else rng.beta(5, 2)))
          for well, r in layout.wells for f in range(30)]

rows = well_histograms(scores, layout)
write_histogram_csv("P02_histograms.csv", "P02", rows)
plot_well_grid(rows, title="Spiramycin, plate P02").savefig("P02_histograms.png", dpi=80)
print(len(rows), "well histograms written")
