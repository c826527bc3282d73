"""Masked-convolution pixel model with a discretized logistic mixture head.

Pixels are ordered in raster order. Channels of one pixel are conditionally
independent given the preceding pixels.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from arbench.autodiff import functional as F
from arbench.autodiff.tensor import Tensor
from arbench.density.discretized import logistic_mixture_logpmf, mixture_bin_probabilities
from arbench.models.configs import PixelConfig
from arbench.networks.base import ARModel, Params, normal_init

logger = logging.getLogger(__name__)


def raster_mask(size: int, include_center: bool) -> np.ndarray:
    """(size, size) kernel mask keeping taps above the centre row and left of centre.

    Type A (first layer) excludes the centre tap; type B includes it.
    """
    mask = np.zeros((size, size))
    c = size // 2
    mask[:c, :] = 1.0
    mask[c, :c] = 1.0
    if include_center:
        mask[c, c] = 1.0
    return mask


class PixelARModel(ARModel):
    """Stack of masked convolutions: one type-A layer, type-B layers, 1x1 head."""

    kind = "pixel"

    def __init__(self, config: Optional[PixelConfig] = None):
        config = config or PixelConfig()
        super().__init__(
            config,
            event_shape=(config.channels, config.height, config.width),
            bins=config.bins,
            floor_logprob=config.floor_logprob,
            zero_mass_policy=config.zero_mass_policy,
        )
        rng = np.random.default_rng(config.seed)
        k = config.mixtures
        head_channels = 3 * config.channels * k

        self.layer_specs: list[tuple[int, np.ndarray]] = []
        widths = [config.channels] + [config.hidden_channels] * (config.layers - 1) + [head_channels]
        for i in range(config.layers):
            if i == 0:
                size, mask = config.first_kernel, raster_mask(config.first_kernel, include_center=False)
            elif i == config.layers - 1:
                size, mask = 1, raster_mask(1, include_center=True)
            else:
                size, mask = config.kernel, raster_mask(config.kernel, include_center=True)
            fan_in = widths[i] * max(int(mask.sum()), 1)
            gain = 0.1 if i == config.layers - 1 else 1.0
            weight = normal_init(rng, (widths[i + 1], widths[i], size, size), fan_in, gain) * mask
            self._init_param(f"conv.{i}.weight", weight)
            bias = np.zeros(widths[i + 1])
            if i == config.layers - 1:
                # Spread component locations so the mixture starts asymmetric.
                spread = np.linspace(-0.8, 0.8, k)
                bias.reshape(3, config.channels, k)[1] = spread
            self._init_param(f"conv.{i}.bias", bias)
            self.layer_specs.append((size, mask))

    @property
    def receptive_field(self) -> tuple[int, int]:
        """Rows above and columns either side that can influence a pixel."""
        reach = sum(size // 2 for size, _ in self.layer_specs)
        return reach, reach

    def conditionals(self, x, params: Optional[Params] = None) -> tuple[Tensor, Tensor, Tensor]:
        """Mixture (logits, mu, log_scale), each (B, C, H, W, K)."""
        p = self.resolve(params)
        x = self.check_input(x)
        h = x
        last = len(self.layer_specs) - 1
        for i, (size, mask) in enumerate(self.layer_specs):
            h = F.conv2d(h, p[f"conv.{i}.weight"], p[f"conv.{i}.bias"], mask=mask, padding=size // 2)
            if i < last:
                h = F.tanh(h)
        cfg = self.config
        b = x.shape[0]
        h = F.reshape(h, (b, 3, cfg.channels, cfg.mixtures, cfg.height, cfg.width))
        h = F.transpose(h, (0, 1, 2, 4, 5, 3))
        logits = F.take(h, (slice(None), 0))
        mu = F.take(h, (slice(None), 1))
        log_scale = F.clamp_min(F.take(h, (slice(None), 2)), cfg.min_log_scale)
        return logits, mu, log_scale

    def dimension_logprobs(self, x, params: Optional[Params] = None) -> Tensor:
        x = self.check_input(x)
        logits, mu, log_scale = self.conditionals(x, params)
        return logistic_mixture_logpmf(x, logits, mu, log_scale, self.bins, self.floor_logprob)

    def sample(self, n: int, seed: int) -> np.ndarray:
        """Raster-order ancestral sampling; one forward pass per pixel."""
        if n < 1:
            raise ValueError(f"n must be at least 1, got {n}")
        cfg = self.config
        rng = np.random.default_rng(seed)
        centers = self.bins.centers()
        x = np.full((n,) + self.event_shape, centers[(self.bins.count - 1) // 2])
        for row in range(cfg.height):
            for col in range(cfg.width):
                logits, mu, log_scale = self.conditionals(x)
                for c in range(cfg.channels):
                    probs = mixture_bin_probabilities(
                        logits.data[:, c, row, col],
                        mu.data[:, c, row, col],
                        log_scale.data[:, c, row, col],
                        self.bins,
                        self.floor_logprob,
                    )
                    cdf = np.cumsum(probs, axis=1)
                    u = rng.random(n)
                    index = np.minimum((u[:, None] > cdf).sum(axis=1), self.bins.count - 1)
                    x[:, c, row, col] = centers[index]
        return x


def pixel_receptive_field_check(
    model: PixelARModel,
    position: tuple[int, int],
    seed: int = 0,
    trials: int = 3,
) -> bool:
    """True iff perturbing raster positions at or after ``position`` leaves its conditionals bitwise unchanged."""
    row, col = position
    cfg = model.config
    if not (0 <= row < cfg.height and 0 <= col < cfg.width):
        raise ValueError(f"position {position} outside {cfg.height}x{cfg.width}")
    rng = np.random.default_rng(seed)
    centers = model.bins.centers()
    raster = np.arange(cfg.height * cfg.width).reshape(cfg.height, cfg.width)
    later = raster >= row * cfg.width + col
    for _ in range(trials):
        x = centers[rng.integers(model.bins.count, size=(1,) + model.event_shape)]
        before = [t.data[:, :, row, col] for t in model.conditionals(x)]
        perturbed = x.copy()
        noise = centers[rng.integers(model.bins.count, size=perturbed.shape)]
        perturbed[:, :, later] = noise[:, :, later]
        after = [t.data[:, :, row, col] for t in model.conditionals(perturbed)]
        if not all(np.array_equal(a, b) for a, b in zip(before, after)):
            return False
    return True
