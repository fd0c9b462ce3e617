"""Lightweight feature extractor feeding the controller.

Any input resolution is first resized to a fixed square, then passed through
three residual blocks whose first convolution has stride 2, so a 224 input
yields a 28x28 feature map. Layer normalization keeps activations bounded
even with random weights, and reflect padding makes every block spatially
equivariant (a constant input produces a spatially constant feature map).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .module import Module, uniform_init
from .nnops import conv2d, layer_norm, reflect_pad, resize_bilinear
from .tensor import Tensor


@dataclass
class EncoderConfig:
    input_resolution: int = 224
    block_channels: tuple[int, ...] = (24, 48, 96)
    in_channels: int = 3  # 3 for rgb, 4 for packed Bayer
    seed: int = 0

    @property
    def feature_resolution(self) -> int:
        return self.input_resolution // (2 ** len(self.block_channels))


class Encoder(Module):
    def __init__(self, config: EncoderConfig | None = None):
        super().__init__()
        self.config = config or EncoderConfig()
        cfg = self.config
        if cfg.input_resolution % (2 ** len(cfg.block_channels)):
            raise ValueError("input resolution must be divisible by 2^block_count")
        rng = np.random.default_rng(cfg.seed)
        cin = cfg.in_channels
        for i, cout in enumerate(cfg.block_channels):
            p = f"block{i}"
            self.add_param(f"{p}.conv1.w", uniform_init(rng, (cout, cin, 3, 3), cin * 9))
            self.add_param(f"{p}.conv1.b", np.zeros(cout))
            self.add_param(f"{p}.ln.g", np.ones(cout))
            self.add_param(f"{p}.ln.b", np.zeros(cout))
            self.add_param(f"{p}.conv2.w", uniform_init(rng, (cout, cout, 3, 3), cout * 9))
            self.add_param(f"{p}.conv2.b", np.zeros(cout))
            self.add_param(f"{p}.conv3.w", uniform_init(rng, (cout, cout, 1, 1), cout))
            self.add_param(f"{p}.conv3.b", np.zeros(cout))
            cin = cout

    def _block(self, x: Tensor, i: int) -> Tensor:
        p = self._params
        name = f"block{i}"
        h = conv2d(reflect_pad(x, 1), p[f"{name}.conv1.w"], stride=2) + p[f"{name}.conv1.b"]
        h = layer_norm(h, p[f"{name}.ln.g"], p[f"{name}.ln.b"])
        u = T.relu(h)
        u = T.relu(conv2d(reflect_pad(u, 1), p[f"{name}.conv2.w"]) + p[f"{name}.conv2.b"])
        u = conv2d(u, p[f"{name}.conv3.w"]) + p[f"{name}.conv3.b"]
        # residual from the post-norm activation keeps the block well-scaled
        return u + h

    def encode(self, x: Tensor) -> Tensor:
        """(n, 3 or 4, h, w) -> (n, C_last, r, r) with r = resolution / 8."""
        if x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"encoder built for {self.config.in_channels} channels, got {x.shape[1]}"
            )
        if x.shape[2] < 32 or x.shape[3] < 32:
            raise ValueError("encoder input must be at least 32x32")
        r = self.config.input_resolution
        if x.shape[2] != r or x.shape[3] != r:
            x = resize_bilinear(x, r, r)
        for i in range(len(self.config.block_channels)):
            x = self._block(x, i)
        return x

    def __call__(self, x: Tensor) -> Tensor:
        return self.encode(x)

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters().values())
