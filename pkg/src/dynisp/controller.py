"""Layer-by-layer parameter decoding with a bounded multiplicative latent
update.

For each ISP layer the controller decodes that layer's parameters from the
latent state (a sigmoid squashes every value strictly inside its search
range), then rescales the latent state by a group-wise sigmoid
cross-attention: the latent is reshaped into ``virtual_seq`` groups, a small
MLP on the normalized decoded parameters produces a per-group mixing matrix,
and each latent coordinate is multiplied by ``5 * sigmoid(q @ k * scale)``.
The multiplicative gate is therefore bounded in (0, 5).

Global mode pools the encoder feature into a latent vector; local mode keeps
the coarse feature grid and runs every linear map as a pointwise (1x1)
convolution, yielding parameter maps that are bilinearly upsampled to the
output resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .module import Module, uniform_init
from .nnops import bilinear_upsample, conv2d, einsum2, global_avg_pool, linear
from .tensor import Tensor

__all__ = ["ParamSpec", "LayerSpec", "ControllerConfig", "Controller", "ParamSet"]


@dataclass(frozen=True)
class ParamSpec:
    """Search-space record for one scalar ISP parameter."""

    name: str
    pmin: float
    pmax: float

    def __post_init__(self):
        if not self.pmin < self.pmax:
            raise ValueError(f"{self.name}: P_min must be < P_max")


@dataclass
class LayerSpec:
    """Ordered parameter specs for one ISP layer."""

    name: str
    specs: list[ParamSpec]

    @property
    def arity(self) -> int:
        return len(self.specs)

    @property
    def pmin(self) -> np.ndarray:
        return np.array([s.pmin for s in self.specs], dtype=np.float32)

    @property
    def pmax(self) -> np.ndarray:
        return np.array([s.pmax for s in self.specs], dtype=np.float32)


@dataclass
class ParamSet:
    """Decoded values for one layer: (n, arity) in global mode or
    (n, arity, h, w) in local mode."""

    layer: str
    values: Tensor

    @property
    def is_map(self) -> bool:
        return self.values.data.ndim == 4


@dataclass
class ControllerConfig:
    latent_dim: int = 256
    virtual_seq: int = 8
    use_projection: bool = True  # 96 -> latent_dim projection of the pooled feature
    attn_gain: float = 5.0
    feature_channels: int = 96
    seed: int = 0

    @property
    def emb_dim(self) -> int:
        if self.latent_dim % self.virtual_seq:
            raise ValueError("latent_dim must be divisible by virtual_seq")
        return self.latent_dim // self.virtual_seq


class Controller(Module):
    """Holds the decode heads and attention MLPs for a fixed layer order.

    The same weights drive both global and local control; local mode applies
    each linear map at every spatial site.
    """

    def __init__(self, layers: list[LayerSpec], config: ControllerConfig | None = None):
        super().__init__()
        self.config = config or ControllerConfig()
        self.layers = list(layers)
        cfg = self.config
        if not cfg.use_projection and cfg.latent_dim != cfg.feature_channels:
            raise ValueError("without projection the latent dim must equal feature channels")
        rng = np.random.default_rng(cfg.seed)
        cv, emb = cfg.latent_dim, cfg.emb_dim
        if cfg.use_projection:
            self.add_param("proj.w", uniform_init(rng, (cfg.feature_channels, cv), cfg.feature_channels))
            self.add_param("proj.b", np.zeros(cv))
        hidden = 4 * emb
        for layer in self.layers:
            a = layer.arity
            p = f"layer.{layer.name}"
            self.add_param(f"{p}.dec.w", uniform_init(rng, (cv, a), cv))
            self.add_param(f"{p}.phat", np.zeros(a))
            self.add_param(f"{p}.key1.w", uniform_init(rng, (a, hidden), a))
            self.add_param(f"{p}.key1.b", np.zeros(hidden))
            self.add_param(f"{p}.key2.w", uniform_init(rng, (hidden, emb * emb), hidden))
            self.add_param(f"{p}.key2.b", np.zeros(emb * emb))

    def layer_spec(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    # -- global mode --------------------------------------------------------

    def initial_state(self, feature: Tensor) -> Tensor:
        v = global_avg_pool(feature)
        if self.config.use_projection:
            v = linear(v, self._params["proj.w"], self._params["proj.b"])
        return v

    def decode_params(self, v: Tensor, layer: LayerSpec) -> ParamSet:
        """P = (Pmax - Pmin) * sigmoid(phat + W v) + Pmin, strictly in-range."""
        p = f"layer.{layer.name}"
        pre = linear(v, self._params[f"{p}.dec.w"], self._params[f"{p}.phat"])
        rng_ = Tensor(layer.pmax - layer.pmin)
        lo = Tensor(layer.pmin)
        return ParamSet(layer.name, T.sigmoid(pre) * rng_ + lo)

    def update_state(self, v: Tensor, pset: ParamSet, layer: LayerSpec) -> Tensor:
        cfg = self.config
        p = f"layer.{layer.name}"
        span = layer.pmax - layer.pmin
        pn = (pset.values - Tensor(layer.pmin)) * Tensor(1.0 / span)
        k = linear(pn, self._params[f"{p}.key1.w"], self._params[f"{p}.key1.b"])
        k = linear(T.relu(k), self._params[f"{p}.key2.w"], self._params[f"{p}.key2.b"])
        n = v.shape[0]
        emb, vs = cfg.emb_dim, cfg.virtual_seq
        q = T.reshape(v, (n, vs, emb))
        kmat = T.reshape(k, (n, emb, emb))
        logits = einsum2("nse,nef->nsf", q, kmat) * (emb**-0.5)
        attn = T.sigmoid(logits) * cfg.attn_gain
        return v * T.reshape(attn, (n, vs * emb))

    def control_global(self, feature: Tensor) -> list[ParamSet]:
        v = self.initial_state(feature)
        out = []
        for layer in self.layers:
            pset = self.decode_params(v, layer)
            v = self.update_state(v, pset, layer)
            out.append(pset)
        return out

    # -- local mode ---------------------------------------------------------

    def initial_state_local(self, feature: Tensor) -> Tensor:
        if self.config.use_projection:
            w = self._params["proj.w"]
            kern = T.reshape(_transpose2(w), (w.shape[1], w.shape[0], 1, 1))
            return conv2d(feature, kern) + self._params["proj.b"]
        return feature

    def _pointwise(self, x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
        kern = T.reshape(_transpose2(w), (w.shape[1], w.shape[0], 1, 1))
        out = conv2d(x, kern)
        return out + b if b is not None else out

    def decode_params_local(self, v: Tensor, layer: LayerSpec) -> ParamSet:
        p = f"layer.{layer.name}"
        pre = self._pointwise(v, self._params[f"{p}.dec.w"], self._params[f"{p}.phat"])
        span = Tensor((layer.pmax - layer.pmin).reshape(1, -1, 1, 1))
        lo = Tensor(layer.pmin.reshape(1, -1, 1, 1))
        return ParamSet(layer.name, T.sigmoid(pre) * span + lo)

    def update_state_local(self, v: Tensor, pset: ParamSet, layer: LayerSpec) -> Tensor:
        cfg = self.config
        p = f"layer.{layer.name}"
        span = (layer.pmax - layer.pmin).reshape(1, -1, 1, 1)
        lo = layer.pmin.reshape(1, -1, 1, 1)
        pn = (pset.values - Tensor(lo)) * Tensor(1.0 / span)
        k = self._pointwise(pn, self._params[f"{p}.key1.w"], self._params[f"{p}.key1.b"])
        k = self._pointwise(T.relu(k), self._params[f"{p}.key2.w"], self._params[f"{p}.key2.b"])
        n, _, h, w = v.shape
        emb, vs = cfg.emb_dim, cfg.virtual_seq
        q = T.reshape(v, (n, vs, emb, h, w))
        kmat = T.reshape(k, (n, emb, emb, h, w))
        logits = einsum2("nsehw,nefhw->nsfhw", q, kmat) * (emb**-0.5)
        attn = T.sigmoid(logits) * cfg.attn_gain
        return v * T.reshape(attn, (n, vs * emb, h, w))

    def control_local_raw(self, feature: Tensor) -> list[ParamSet]:
        """Decode parameter maps at the feature resolution (no upsampling)."""
        v = self.initial_state_local(feature)
        out = []
        for layer in self.layers:
            pset = self.decode_params_local(v, layer)
            v = self.update_state_local(v, pset, layer)
            out.append(pset)
        return out

    def control_local(self, feature: Tensor, out_h: int, out_w: int) -> list[ParamSet]:
        """Decode at feature resolution and bilinearly upsample every map."""
        return [
            ParamSet(ps.layer, bilinear_upsample(ps.values, out_h, out_w))
            for ps in self.control_local_raw(feature)
        ]


def _transpose2(w: Tensor) -> Tensor:
    out = Tensor(np.ascontiguousarray(w.data.T), dtype=w.dtype)
    if T.active_tape() is not None and (w.requires_grad or w._on_tape):

        def backward(g: np.ndarray, w=w) -> None:
            T._accum(w, np.ascontiguousarray(g.T))

        T.active_tape().record(out, backward)
    return out
