"""Grad-CAM heatmaps over the final convolutional stage, and image overlays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from matplotlib import colormaps
from torch import nn


class NoConvStage(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass
class Heatmap:
    values: np.ndarray
    target_class: int
    source: str | None = None
    # unnormalized pieces, kept for inspection
    weights: np.ndarray = field(default=None, repr=False)
    activations: np.ndarray = field(default=None, repr=False)
    raw: np.ndarray = field(default=None, repr=False)


def find_cam_layer(model: nn.Module) -> nn.Module:
    """The model's ``cam_layer`` if it declares one, else its last Conv2d."""
    layer = getattr(model, "cam_layer", None)
    if isinstance(layer, nn.Module):
        return layer
    convs = [m for m in model.modules() if isinstance(m, nn.Conv2d)]
    if not convs:
        raise NoConvStage(f"{type(model).__name__} has no convolutional layer")
    return convs[-1]


def cam_from_gradients(activations: np.ndarray, gradients: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Channel weights (spatially averaged gradients) and ReLU(sum_k w_k A_k)."""
    weights = gradients.mean(axis=(1, 2))
    raw = np.maximum(np.tensordot(weights, activations, axes=1), 0.0)
    return weights, raw


def normalize_map(raw: np.ndarray) -> np.ndarray:
    peak = raw.max()
    return raw / peak if peak > 0 else np.zeros_like(raw)


def grad_cam(model: nn.Module, image, target_class: int, layer: nn.Module | None = None,
             source: str | None = None) -> Heatmap:
    """Gradient-weighted class activation map for one image.

    Gradients are taken of the pre-softmax score of ``target_class``. The map
    is max-normalized per image and bilinearly resized to the input size.
    """
    if target_class not in (0, 1):
        raise ValueError("target_class must be 0 or 1")
    layer = layer if layer is not None else find_cam_layer(model)
    x = torch.as_tensor(np.asarray(image), dtype=torch.float32)
    while x.ndim < 4:
        x = x[None]
    store = {}

    def hook(_module, _inp, out):
        out.retain_grad()
        store["act"] = out

    handle = layer.register_forward_hook(hook)
    was_training = model.training
    model.eval()
    try:
        with torch.enable_grad():
            x = x.requires_grad_(True)
            scores = model(x)
            model.zero_grad(set_to_none=True)
            scores[0, target_class].backward()
    finally:
        handle.remove()
        model.zero_grad(set_to_none=True)
        model.train(was_training)
    act = store["act"]
    A = act.detach()[0].double().numpy()
    G = act.grad[0].double().numpy() if act.grad is not None else np.zeros_like(A)
    weights, raw = cam_from_gradients(A, G)
    values = normalize_map(raw)
    size = x.shape[-2:]
    if values.shape != tuple(size):
        up = F.interpolate(torch.from_numpy(values)[None, None], size=size,
                           mode="bilinear", align_corners=False)[0, 0].numpy()
        values = normalize_map(np.clip(up, 0.0, None))
    return Heatmap(values, target_class, source, weights, A, raw)


def overlay(image: np.ndarray, heatmap: Heatmap | np.ndarray, alpha: float = 0.5,
            cmap: str = "jet") -> np.ndarray:
    """Blend a colormapped heatmap over a grayscale image; returns HxWx3 floats."""
    values = heatmap.values if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    image = np.asarray(image, dtype=np.float64)
    if image.shape != values.shape:
        raise ShapeMismatch(f"image {image.shape} vs heatmap {values.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    gray = np.repeat(image[..., None], 3, axis=2)
    if alpha == 0:
        return gray
    colored = colormaps[cmap](np.clip(values, 0, 1))[..., :3]
    return (1 - alpha) * gray + alpha * colored
