"""Tiny hand-built models with known Grad-CAM answers."""

import numpy as np
import torch
from torch import nn

# two 2x2 feature maps, entered directly as the input
ACTIVATIONS = np.array([[[1.0, 2.0], [0.5, 0.0]],
                        [[0.0, 1.0], [3.0, 1.5]]])
# per-class linear weights over the flattened maps
HEAD_WEIGHTS = np.array([
    [[[0.2, -0.4], [0.1, 0.3]], [[-0.5, -0.5], [-0.2, 0.0]]],
    [[[-0.6, -0.6], [0.2, 0.1]], [[0.4, -0.1], [0.3, -0.2]]],
])
HEAD_BIAS = np.array([0.1, -0.2])


class LinearProbe(nn.Module):
    """Identity 1x1 conv as the feature stage, then a linear scoring head."""

    def __init__(self, weights=HEAD_WEIGHTS, bias=HEAD_BIAS, shift=0.0, nonlinear=False):
        super().__init__()
        self.features = nn.Conv2d(2, 2, kernel_size=1, bias=False).double()
        with torch.no_grad():
            self.features.weight.copy_(torch.eye(2, dtype=torch.float64).view(2, 2, 1, 1))
        self.register_buffer("w", torch.tensor(weights, dtype=torch.float64))
        self.register_buffer("b", torch.tensor(bias, dtype=torch.float64))
        self.shift = shift
        self.nonlinear = nonlinear

    def head(self, a):
        if self.nonlinear:
            a = torch.tanh(a) + 0.1 * a ** 2
        return torch.einsum("nkij,ckij->nc", a, self.w) + self.b + self.shift

    def forward(self, x):
        return self.head(self.features(x.double()))


class ConstantProbe(LinearProbe):
    def forward(self, x):
        a = self.features(x.double())
        return 0.0 * a.sum(dim=(1, 2, 3))[:, None].repeat(1, 2) + self.b


class NoConv(nn.Module):
    def forward(self, x):
        return x.flatten(1)[:, :2]
