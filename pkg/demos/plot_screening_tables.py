"""
From image scores to verdicts
=============================

Image scores are averaged per well, well means are averaged per regime, and
a compound dose counts as protective when its Aβ-challenged wells score
below the decision threshold.
"""

import numpy as np

from neuroscreen.plate import ABETA_ONLY, CONTROL, default_layout
from neuroscreen.screening import ImageScore, screen_compound, summarize_plate

layout = default_layout("Raubasine", "P01")
rng = np.random.default_rng(0)

# pretend scores: treated-looking wells near 0.9, protected and control wells low
def typical(regime):
    if regime == CONTROL or regime.compound_dose_um == 10:
        return 0.1
    return 0.9 if regime.abeta_dose_um else 0.1

scores = [ImageScore("P01", well, f, float(np.clip(rng.normal(typical(r), 0.08), 0, 1)))
          for well, r in layout.wells for f in range(30)]

summaries = summarize_plate(scores, layout)
for regime, s in summaries.items():
    print(f"{regime}: mean {s.mean_score:.3f}  std(wells) {s.std_wells:.3f}  std(images) {s.std_images:.3f}")

screen = screen_compound(summaries, threshold=0.5, compound_name="Raubasine", plate_id="P01")
print("controls ok:", not screen.invalid_controls,
      f"(control {screen.control_label}, Abeta only {screen.abeta_label})")
for v in screen.verdicts:
    print(f"{v.compound_dose_um:>2} uM: score {v.mean_score:.3f} -> protective={v.protective}")
print("regime lookups:", summaries[ABETA_ONLY].n_wells, "wells each")
