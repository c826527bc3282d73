"""Convolutional encoder-decoder used as an ARCycle mapping."""

from __future__ import annotations

from typing import Optional

import numpy as np

from arbench.autodiff import functional as F
from arbench.autodiff.tensor import Tensor, as_tensor
from arbench.core.errors import ShapeError
from arbench.models.configs import GeneratorConfig
from arbench.networks.base import ParametricModule, Params, normal_init


class ConvGenerator(ParametricModule):
    """Three same-resolution conv layers; tanh squashes the output into [lo, hi]."""

    kind = "generator"

    def __init__(self, config: Optional[GeneratorConfig] = None):
        config = config or GeneratorConfig()
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        k = config.kernel
        widths = [
            ("encoder", config.in_channels, config.hidden_channels),
            ("bottleneck", config.hidden_channels, config.hidden_channels),
            ("decoder", config.hidden_channels, config.out_channels),
        ]
        self.layers = [name for name, _, _ in widths]
        for name, fan_in, fan_out in widths:
            self._init_param(f"{name}.weight", normal_init(rng, (fan_out, fan_in, k, k), fan_in * k * k))
            self._init_param(f"{name}.bias", np.zeros(fan_out))

    def forward(self, x, params: Optional[Params] = None) -> Tensor:
        """Translate a batch (B, in_channels, H, W) to (B, out_channels, H, W)."""
        p = self.resolve(params)
        x = as_tensor(x)
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ShapeError(f"generator expects (batch, {cfg.in_channels}, H, W), got {x.shape}")
        h = x
        pad = cfg.kernel // 2
        for name in self.layers:
            h = F.tanh(F.conv2d(h, p[f"{name}.weight"], p[f"{name}.bias"], padding=pad))
        half_span = (cfg.hi - cfg.lo) / 2.0
        return F.add(F.mul(h, half_span), cfg.lo + half_span)

    __call__ = forward


class IdentityGenerator:
    """Pass-through mapping with no parameters."""

    kind = "identity"

    def forward(self, x, params: Optional[Params] = None) -> Tensor:
        return as_tensor(x)

    __call__ = forward

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def trainable(self) -> dict[str, Tensor]:
        return {}
