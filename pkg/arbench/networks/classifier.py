"""Small convolutional classifier whose penultimate layer serves as features."""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy import special

from arbench.autodiff import functional as F
from arbench.autodiff.tensor import Tensor
from arbench.core.errors import ShapeError
from arbench.models.configs import ClassifierConfig
from arbench.networks.base import ParametricModule, Params, normal_init


class ConvClassifier(ParametricModule):
    """conv3x3 -> relu -> 2x2 average pool (when even) per stage, then dense layers."""

    kind = "classifier"

    def __init__(self, config: Optional[ClassifierConfig] = None):
        config = config or ClassifierConfig()
        super().__init__(config)
        rng = np.random.default_rng(config.seed)
        channels, height, width = config.channels, config.height, config.width
        self.pool_after: list[bool] = []
        for i, out_channels in enumerate(config.conv_channels):
            self._init_param(f"conv.{i}.weight", normal_init(rng, (out_channels, channels, 3, 3), channels * 9))
            self._init_param(f"conv.{i}.bias", np.zeros(out_channels))
            pool = height % 2 == 0 and width % 2 == 0 and height >= 2 and width >= 2
            self.pool_after.append(pool)
            if pool:
                height, width = height // 2, width // 2
            channels = out_channels
        self.flat_width = channels * height * width
        self._init_param("dense.weight", normal_init(rng, (self.flat_width, config.feature_width), self.flat_width))
        self._init_param("dense.bias", np.zeros(config.feature_width))
        self._init_param("logits.weight", normal_init(rng, (config.feature_width, config.classes), config.feature_width))
        self._init_param("logits.bias", np.zeros(config.classes))

    def _check(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        cfg = self.config
        if x.shape[1:] != (cfg.channels, cfg.height, cfg.width):
            raise ShapeError(
                f"classifier expects (batch, {cfg.channels}, {cfg.height}, {cfg.width}), got {x.shape}"
            )
        return x

    def features(self, x, params: Optional[Params] = None) -> Tensor:
        """Penultimate activations, shape (B, feature_width)."""
        p = self.resolve(params)
        h = self._check(x)
        for i, pool in enumerate(self.pool_after):
            h = F.relu(F.conv2d(h, p[f"conv.{i}.weight"], p[f"conv.{i}.bias"], padding=1))
            if pool:
                b, c, height, width = h.shape
                h = F.reduce_mean(F.reshape(h, (b, c, height // 2, 2, width // 2, 2)), axis=(3, 5))
        h = F.reshape(h, (h.shape[0], self.flat_width))
        return F.tanh(F.add(F.matmul(h, p["dense.weight"]), p["dense.bias"]))

    def logits(self, x, params: Optional[Params] = None) -> Tensor:
        p = self.resolve(params)
        return F.add(F.matmul(self.features(x, p), p["logits.weight"]), p["logits.bias"])

    def predict_proba(self, x, batch_size: int = 256) -> np.ndarray:
        """Class posteriors p(y|x), shape (N, classes)."""
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        chunks = [self.logits(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        return special.softmax(np.concatenate(chunks), axis=1)

    def feature_vectors(self, x, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        chunks = [self.features(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks)

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels."""
    one_hot = np.eye(logits.shape[1])[np.asarray(labels, dtype=np.int64)]
    return F.neg(F.reduce_mean(F.reduce_sum(F.mul(F.log_softmax(logits), one_hot), axis=1)))
