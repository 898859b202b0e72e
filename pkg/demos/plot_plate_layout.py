"""
Plate layout
============

Each 96-well plate tests one compound under eight treatment regimes, with
six replicate wells per regime in rows B-J and columns 2-7.
"""

from neuroscreen.plate import REGIMES, default_layout, load_catalog

compounds = load_catalog()
print(len(compounds), "compounds, first few:", compounds[:4])

layout = default_layout(compounds[0], plate_id="P01")

# every regime owns six wells
for regime in REGIMES:
    wells = " ".join(str(w) for w in layout.wells_of(regime))
    print(f"{regime.compound_dose_um:>3} uM compound / {regime.abeta_dose_um:>2} uM Abeta: {wells}")

# and each well maps back to exactly one regime
print("C4 ->", layout.regime_of("C4"))

# layouts serialize to JSON and parse back to an equal object
text = layout.dumps()
print(text.splitlines()[0], "...")
