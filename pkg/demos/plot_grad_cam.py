"""
Where the classifier looks
==========================

Grad-CAM weights the last convolutional stage's activations by the spatial
mean of the class score's gradients. The untrained network here just shows
the mechanics; point it at a trained checkpoint for meaningful maps.
"""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from neuroscreen.attention import grad_cam, overlay
from neuroscreen.classifier import ModelConfig, build_model
from neuroscreen.ingest import preprocess
from neuroscreen.synth import render_field

model = build_model(ModelConfig(input_size=128), seed=0)
image = preprocess(render_field(1.0, 1.0, "Cy5", 256, seed=5).astype("float32"), 128)

heat = grad_cam(model, image, target_class=1, source="demo field")
print("map shape", heat.values.shape, "peak", heat.values.max(), "channels weighted", heat.weights.size)

plt.imsave("grad_cam_overlay.png", overlay(image, heat, alpha=0.4).clip(0, 1))
