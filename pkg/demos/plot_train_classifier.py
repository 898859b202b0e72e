"""
Training the treated-versus-control classifier
==============================================

Labels come for free from the plate layout: vehicle-control wells are class
0, Aβ-only wells class 1. This demo trains a small-input ResNet-18 on three
tiny synthetic plates, holding one plate out for validation.
"""

import tempfile
from pathlib import Path

from neuroscreen.classifier import ImageSet, ModelConfig, TrainConfig, build_model, fit
from neuroscreen.ingest import build_manifest, load_layouts, split_plates, training_pairs
from neuroscreen.plate import default_layout
from neuroscreen.synth import SynthConfig, write_plate

root = Path(tempfile.mkdtemp())
config = SynthConfig(image_size=64, fields_per_well=4, channels=("Cy5",), base_seed=1)
for i, name in enumerate(["Amprolium", "Raubasine", "Spiramycin"], start=1):
    write_plate(default_layout(name, f"P{i:02d}"), config, root / f"P{i:02d}")

layouts = load_layouts(root)
manifest = build_manifest(root, layouts)
train_ids, test_ids = split_plates(manifest, n_test=1, seed=0)
train = ImageSet.from_examples(training_pairs(manifest, layouts, train_ids))
valid = ImageSet.from_examples(training_pairs(manifest, layouts, test_ids))
print(f"{len(train)} training images, {len(valid)} held out on {test_ids}")

# stage 1 tunes the last residual stage and the head, stage 2 the whole net
model = build_model(ModelConfig(input_size=64), seed=0)
report = fit(model, train, valid, TrainConfig(epochs_stage1=3, epochs_stage2=2, seed=0))
for e in report.epochs:
    print(f"stage {e.stage} epoch {e.epoch}: train acc {e.train_acc:.2f}, valid acc {e.valid_acc:.2f}")
