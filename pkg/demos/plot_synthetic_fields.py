"""
Synthetic field views
=====================

Neurons are drawn as branching random-walk arbours. Aβ exposure shortens
and beads the neurites, and a protective compound scales the exposure
down with dose.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from neuroscreen.plate import TreatmentRegime
from neuroscreen.synth import effective_exposure, render_field, skeleton_pixel_count

exposures = [0.0, 0.5, 1.0]
fields = [render_field(e, 1.0, "Cy5", 256, seed=3) for e in exposures]

# neurite length, as a skeleton pixel count, falls as exposure rises
for e, img in zip(exposures, fields):
    print(f"exposure {e:.1f}: skeleton length {skeleton_pixel_count(img)} px")

# a fully protective compound at 10 uM with half-effect dose 3 uM
print("exposure at (10, 30):", round(effective_exposure(TreatmentRegime(10, 30), 1.0, 3.0), 3))

fig, axes = plt.subplots(1, 4, figsize=(12, 3))
for ax, e, img in zip(axes, exposures, fields):
    ax.imshow(img, cmap="gray")
    ax.set_title(f"Cy5, exposure {e}")
axes[3].imshow(render_field(0.0, 1.0, "DAPI", 256, seed=3), cmap="gray")
axes[3].set_title("DAPI")
for ax in axes:
    ax.axis("off")
fig.savefig("synthetic_fields.png", dpi=80)
