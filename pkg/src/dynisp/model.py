"""Full engine: encoder -> controller -> white-box ISP.

The controller decodes one parameter block per ISP stage, in execution
order. Stage layouts (scalar names and search ranges) live here so the
search-space table, the controller and the operators cannot disagree about
arity or ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .controller import Controller, ControllerConfig, LayerSpec, ParamSet, ParamSpec
from .denoiser import Denoiser, DenoiserConfig
from .encoder import Encoder, EncoderConfig
from .isp import (
    DEFAULT_RANGES,
    ColorMatrix,
    ContrastParams,
    GainParams,
    InvToneMapParams,
    PipelineConfig,
    ToneMapParams,
    identity_ccm,
    identity_contrast,
    identity_gain,
    identity_inv_tone,
    identity_tone,
    run_pipeline,
)
from .module import Module
from .nnops import bilinear_upsample
from .tensor import Tensor

__all__ = [
    "ModelConfig",
    "DynamicIspModel",
    "default_spec_table",
    "build_layer_specs",
    "spec_table_to_text",
    "spec_table_from_text",
]

_CHANNELS = ("r", "g", "b")


def default_spec_table(use_inv_tone: bool = False, use_denoiser: bool = False,
                       filter_arity: int = 108) -> dict[str, tuple[float, float]]:
    """Per-scalar search-space table in decode order."""
    table: dict[str, tuple[float, float]] = {}
    if use_inv_tone:
        for p in ("g3", "g4", "k2"):
            for c in _CHANNELS:
                table[f"invtone.{p}.{c}"] = DEFAULT_RANGES[f"invtone.{p}"]
    if use_denoiser:
        for i in range(filter_arity):
            table[f"dnfilter.tap{i:03d}"] = DEFAULT_RANGES["dnfilter.tap"]
    for i in range(3):
        for j in range(3):
            key = "ccm.diag" if i == j else "ccm.off"
            table[f"ccm.m{i}{j}"] = DEFAULT_RANGES[key]
    for p in ("ph", "pw", "pxlog"):
        for c in _CHANNELS:
            table[f"gain.{p}.{c}"] = DEFAULT_RANGES[f"gain.{p}"]
    for p in ("g1", "g2", "k"):
        for c in _CHANNELS:
            table[f"tone.{p}.{c}"] = DEFAULT_RANGES[f"tone.{p}"]
    for p in ("ph", "pw", "px"):
        for c in _CHANNELS:
            table[f"contrast.{p}.{c}"] = DEFAULT_RANGES[f"contrast.{p}"]
    return table


def build_layer_specs(table: dict[str, tuple[float, float]]) -> list[LayerSpec]:
    """Group a per-scalar table into ordered layer specs (table order rules)."""
    layers: dict[str, list[ParamSpec]] = {}
    for name, (lo, hi) in table.items():
        layer = name.split(".")[0]
        layers.setdefault(layer, []).append(ParamSpec(name, float(lo), float(hi)))
    return [LayerSpec(name, specs) for name, specs in layers.items()]


def spec_table_to_text(table: dict[str, tuple[float, float]]) -> str:
    return "".join(f"{k}={lo:.9g},{hi:.9g}\n" for k, (lo, hi) in table.items())


def spec_table_from_text(text: str) -> dict[str, tuple[float, float]]:
    table: dict[str, tuple[float, float]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            name, rng = line.split("=")
            lo, hi = rng.split(",")
            table[name.strip()] = (float(lo), float(hi))
        except ValueError as exc:
            raise ValueError(f"bad search-space line {lineno}: {raw!r}") from exc
    return table


@dataclass
class ModelConfig:
    use_inv_tone: bool = False
    use_denoiser: bool = False
    input_mode: str = "rgb"  # 'rgb' or 'bayer4'
    local: bool = False
    encoder: EncoderConfig | None = None
    latent_dim: int = 256
    use_projection: bool = True
    virtual_seq: int = 8
    denoiser_mid_channels: int = 12
    seed: int = 0


class DynamicIspModel(Module):
    def __init__(self, config: ModelConfig | None = None,
                 spec_table: dict[str, tuple[float, float]] | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        enc_cfg = cfg.encoder or EncoderConfig(seed=cfg.seed)
        if cfg.input_mode == "bayer4":
            enc_cfg = EncoderConfig(
                input_resolution=enc_cfg.input_resolution,
                block_channels=enc_cfg.block_channels,
                in_channels=4,
                seed=enc_cfg.seed,
            )
        self.encoder = self.add_child("encoder", Encoder(enc_cfg))
        self.denoiser = None
        filter_arity = 0
        if cfg.use_denoiser:
            dn_cfg = DenoiserConfig(
                mid_channels=cfg.denoiser_mid_channels,
                input_mode=cfg.input_mode,
                seed=cfg.seed + 1,
            )
            self.denoiser = self.add_child("denoiser", Denoiser(dn_cfg))
            filter_arity = dn_cfg.filter_arity
        self.spec_table = dict(
            spec_table
            if spec_table is not None
            else default_spec_table(cfg.use_inv_tone, cfg.use_denoiser, filter_arity)
        )
        ctrl_cfg = ControllerConfig(
            latent_dim=cfg.latent_dim,
            virtual_seq=cfg.virtual_seq,
            use_projection=cfg.use_projection,
            feature_channels=enc_cfg.block_channels[-1],
            seed=cfg.seed + 2,
        )
        self.controller = self.add_child(
            "controller", Controller(build_layer_specs(self.spec_table), ctrl_cfg)
        )
        self.pipeline_config = PipelineConfig(
            use_inv_tone_map=cfg.use_inv_tone, use_denoiser=cfg.use_denoiser
        )

    def set_spec_table(self, table: dict[str, tuple[float, float]]) -> None:
        """Swap in refined search-space bounds; weights are untouched."""
        if set(table) != set(self.spec_table):
            raise ValueError("refined table must cover exactly the same parameters")
        self.spec_table = dict(table)
        for layer in self.controller.layers:
            layer.specs = [
                ParamSpec(s.name, *table[s.name]) for s in layer.specs
            ]

    # ------------------------------------------------------------------

    def forward(self, x: Tensor, local: bool | None = None,
                record_params: dict | None = None, aux: dict | None = None) -> Tensor:
        """Process a batch; ``record_params`` (a dict) collects per-scalar
        min/max of the decoded values, for the search-space tuner, and
        ``aux`` receives the denoiser output / reference pair needed by the
        pooled-L1 training constraint."""
        local = self.config.local if local is None else local
        feature = self.encoder(x)
        if local:
            psets = self.controller.control_local_raw(feature)
        else:
            psets = self.controller.control_global(feature)
        by_layer = {ps.layer: ps for ps in psets}
        if record_params is not None:
            self._record(psets, record_params)

        out_h, out_w = x.shape[2], x.shape[3]
        if self.config.input_mode == "bayer4":
            out_h, out_w = out_h * 2, out_w * 2

        hw = (out_h, out_w)
        n = x.shape[0]

        def fetch(layer: str) -> Tensor | None:
            # a stage with no entries in the spec table is not controlled
            # and runs at identity (useful for restricted search spaces)
            ps = by_layer.get(layer)
            return None if ps is None else ps.values  # (n, arity) or coarse map

        params: dict = {}
        if self.config.use_inv_tone:
            v = fetch("invtone")
            params["inv_tone"] = identity_inv_tone(n) if v is None else InvToneMapParams(
                g3=_triple(v, 0, local, hw), g4=_triple(v, 1, local, hw),
                k2=_triple(v, 2, local, hw)
            )
        v = fetch("ccm")
        params["ccm"] = identity_ccm(n) if v is None else ColorMatrix(m=_ccm(v, local, hw))
        v = fetch("gain")
        params["gain"] = identity_gain(n) if v is None else GainParams(
            ph=_triple(v, 0, local, hw), pw=_triple(v, 1, local, hw),
            px_log10=_triple(v, 2, local, hw)
        )
        v = fetch("tone")
        params["tone"] = identity_tone(n) if v is None else ToneMapParams(
            g1=_triple(v, 0, local, hw), g2=_triple(v, 1, local, hw),
            k=_triple(v, 2, local, hw)
        )
        v = fetch("contrast")
        params["contrast"] = identity_contrast(n) if v is None else ContrastParams(
            ph=_triple(v, 0, local, hw), pw=_triple(v, 1, local, hw),
            px=_triple(v, 2, local, hw)
        )

        denoise_fn = None
        if self.config.use_denoiser:
            kern_vals = fetch("dnfilter")
            if kern_vals is None:
                raise ValueError(
                    "denoiser enabled but the spec table has no 'dnfilter' entries"
                )
            if local:
                # per-site kernel field at the denoiser's working resolution
                dyn_kernel = bilinear_upsample(kern_vals, x.shape[2], x.shape[3])
            else:
                m = self.denoiser.config.mid_channels
                k = self.denoiser.config.dynamic_kernel_size
                dyn_kernel = T.reshape(kern_vals, (kern_vals.shape[0], m, k, k))

            def denoise_fn(img: Tensor) -> Tensor:
                out = self.denoiser.denoise(img, dyn_kernel)
                if aux is not None:
                    aux["denoised"] = out
                    aux["dn_input"] = self.denoiser.residual_source(img)
                return out

        return run_pipeline(x, params, self.pipeline_config, denoise_fn=denoise_fn)

    def __call__(self, x: Tensor, **kw) -> Tensor:
        return self.forward(x, **kw)

    def decoded_parameters(self, x: Tensor, local: bool | None = None) -> dict[str, np.ndarray]:
        """Per-scalar decoded values for a batch (inference-time dump)."""
        local = self.config.local if local is None else local
        feature = self.encoder(x)
        psets = (
            self.controller.control_local_raw(feature)
            if local
            else self.controller.control_global(feature)
        )
        out: dict[str, np.ndarray] = {}
        for ps, layer in zip(psets, self.controller.layers):
            vals = ps.values.data
            for i, spec in enumerate(layer.specs):
                out[spec.name] = vals[:, i].copy()
        return out

    def _record(self, psets: list[ParamSet], sink: dict) -> None:
        for ps, layer in zip(psets, self.controller.layers):
            vals = ps.values.data
            for i, spec in enumerate(layer.specs):
                v = vals[:, i]
                lo, hi = float(v.min()), float(v.max())
                if spec.name in sink:
                    old = sink[spec.name]
                    sink[spec.name] = (min(old[0], lo), max(old[1], hi))
                else:
                    sink[spec.name] = (lo, hi)


def _triple(values: Tensor, group: int, local: bool, hw: tuple[int, int]) -> Tensor:
    """Slice one (r, g, b) parameter triple out of a 9-wide block; local maps
    are sliced at the coarse controller resolution and upsampled after."""
    sl = slice(3 * group, 3 * group + 3)
    if local:
        coarse = T.slice_(values, (slice(None), sl))  # (n, 3, h_c, w_c)
        return bilinear_upsample(coarse, *hw)
    n = values.shape[0]
    return T.reshape(T.slice_(values, (slice(None), sl)), (n, 3, 1, 1))


def _ccm(values: Tensor, local: bool, hw: tuple[int, int]) -> Tensor:
    if local:
        return bilinear_upsample(values, *hw)  # (n, 9, h, w)
    return T.reshape(values, (values.shape[0], 3, 3))
