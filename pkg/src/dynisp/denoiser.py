"""Tiny CNN denoiser with one dynamically generated depthwise kernel.

The static stack is three small convolutions; the depthwise kernel in the
middle comes from the controller, so the filtering adapts per image (or per
region in local mode). With all static weights and the dynamic kernel at
zero the module reduces to its residual source: the input in rgb mode, a
fixed bilinear demosaic in packed-Bayer mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .module import Module, uniform_init
from .nnops import avg_pool, conv2d, dynamic_depthwise_conv, pixel_shuffle, reflect_pad
from .tensor import Tensor

__all__ = ["DenoiserConfig", "Denoiser", "local_l1", "pack_rggb", "demosaic_bilinear"]


@dataclass
class DenoiserConfig:
    mid_channels: int = 12
    dynamic_kernel_size: int = 3
    input_mode: str = "rgb"  # 'rgb' or 'bayer4'
    seed: int = 0

    @property
    def in_channels(self) -> int:
        return 3 if self.input_mode == "rgb" else 4

    @property
    def filter_arity(self) -> int:
        return self.mid_channels * self.dynamic_kernel_size**2


class Denoiser(Module):
    def __init__(self, config: DenoiserConfig | None = None):
        super().__init__()
        self.config = config or DenoiserConfig()
        cfg = self.config
        if cfg.input_mode not in ("rgb", "bayer4"):
            raise ValueError(f"unknown input mode {cfg.input_mode!r}")
        rng = np.random.default_rng(cfg.seed)
        m = cfg.mid_channels
        cin = cfg.in_channels
        self.add_param("conv_in.w", uniform_init(rng, (m, cin, 3, 3), cin * 9))
        self.add_param("conv_in.b", np.zeros(m))
        self.add_param("conv_mid.w", uniform_init(rng, (m, m, 3, 3), m * 9))
        self.add_param("conv_mid.b", np.zeros(m))
        if cfg.input_mode == "rgb":
            self.add_param("head.w", uniform_init(rng, (3, m, 3, 3), m * 9))
            self.add_param("head.b", np.zeros(3))
        else:
            self.add_param("head.w", uniform_init(rng, (m, m, 3, 3), m * 9))
            self.add_param("head.b", np.zeros(m))

    def denoise(self, x: Tensor, dyn_kernel: Tensor) -> Tensor:
        """Run the denoiser; ``dyn_kernel`` is (n, mid, k, k) per image or a
        per-site field (n, mid*k*k, h, w) at this module's resolution."""
        cfg = self.config
        k = cfg.dynamic_kernel_size
        if not _kernel_compatible(dyn_kernel.shape, cfg, x.shape):
            raise ValueError(
                f"dynamic kernel shape {dyn_kernel.shape} incompatible with "
                f"mid_channels={cfg.mid_channels}, k={k}"
            )
        p = self._params
        h = T.relu(conv2d(reflect_pad(x, 1), p["conv_in.w"]) + p["conv_in.b"])
        h = T.relu(dynamic_depthwise_conv(reflect_pad(h, k // 2), dyn_kernel))
        h = T.relu(conv2d(reflect_pad(h, 1), p["conv_mid.w"]) + p["conv_mid.b"])
        h = conv2d(reflect_pad(h, 1), p["head.w"]) + p["head.b"]
        if cfg.input_mode == "rgb":
            out = h + x
        else:
            out = pixel_shuffle(h, 2) + demosaic_bilinear(x)
        return T.clamp(out, 0.0, 1.0, straight_through=True)

    def __call__(self, x: Tensor, dyn_kernel: Tensor) -> Tensor:
        return self.denoise(x, dyn_kernel)

    def residual_source(self, x: Tensor) -> Tensor:
        return x if self.config.input_mode == "rgb" else demosaic_bilinear(x)


def _kernel_compatible(shape, cfg: DenoiserConfig, x_shape) -> bool:
    if len(shape) != 4:
        return False
    m, k = cfg.mid_channels, cfg.dynamic_kernel_size
    if shape[1] == m and shape[2] == k and shape[3] == k:
        return True
    return shape[1] == m * k * k and shape[2] == x_shape[2] and shape[3] == x_shape[3]


def local_l1(x_in: Tensor, x_dn: Tensor, k_a: int = 16, s_a: int = 8) -> Tensor:
    """L1 distance between average-pooled maps; constrains the denoiser from
    shifting local color while ignoring zero-mean high-frequency changes."""
    if x_in.shape != x_dn.shape:
        raise ValueError(f"shape mismatch {x_in.shape} vs {x_dn.shape}")
    return T.tmean(T.abs_(avg_pool(x_dn, k_a, s_a) - avg_pool(x_in, k_a, s_a)))


def pack_rggb(mosaic: np.ndarray) -> np.ndarray:
    """(n, 1, H, W) RGGB mosaic -> (n, 4, H/2, W/2) packed channels."""
    n, c, h, w = mosaic.shape
    if c != 1 or h % 2 or w % 2:
        raise ValueError("mosaic must be single-channel with even dims")
    return np.stack(
        [
            mosaic[:, 0, 0::2, 0::2],
            mosaic[:, 0, 0::2, 1::2],
            mosaic[:, 0, 1::2, 0::2],
            mosaic[:, 0, 1::2, 1::2],
        ],
        axis=1,
    )


_KERNEL_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float32) / 4.0
_KERNEL_G = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float32) / 4.0


def demosaic_bilinear(packed: Tensor | np.ndarray) -> Tensor:
    """Fixed bilinear demosaic of packed RGGB -> full-resolution RGB.

    Differentiable but weight-free; also exported as the preprocessing
    utility for raw inputs.
    """
    x = packed if isinstance(packed, Tensor) else Tensor(packed)
    n, c, hh, hw = x.shape
    if c != 4:
        raise ValueError("expected 4 packed RGGB channels")
    # scatter each packed plane back onto its RGGB site at full resolution
    planes = pixel_shuffle(_scatter_to_sites(x), 2)  # (n, 4, h, w), zeros off-site
    r = T.slice_(planes, (slice(None), slice(0, 1)))
    g = T.slice_(planes, (slice(None), slice(1, 2))) + T.slice_(planes, (slice(None), slice(2, 3)))
    b = T.slice_(planes, (slice(None), slice(3, 4)))
    kr = Tensor(_KERNEL_RB.reshape(1, 1, 3, 3))
    kg = Tensor(_KERNEL_G.reshape(1, 1, 3, 3))
    r = conv2d(reflect_pad(r, 1), kr)
    g = conv2d(reflect_pad(g, 1), kg)
    b = conv2d(reflect_pad(b, 1), kr)
    return T.concat([r, g, b], axis=1)


def _scatter_to_sites(x: Tensor) -> Tensor:
    """Expand (n, 4, hh, hw) packed planes to the (n, 16, hh, hw) layout that
    pixel_shuffle turns into four full-res planes, each nonzero only on its
    own RGGB site."""
    sel = np.zeros((16, 4), dtype=np.float32)
    for plane in range(4):
        slot = (plane // 2) * 2 + plane % 2
        sel[plane * 4 + slot, plane] = 1.0
    from .nnops import einsum2

    return einsum2("oc,nchw->nohw", Tensor(sel), x)
