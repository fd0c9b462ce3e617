"""White-box ISP operators: pure differentiable functions of (image, params).

Each parameter is either a per-image per-channel value, shape (n, 3, 1, 1),
or a per-pixel map, shape (n, 3, h, w). Both travel the same code path via
broadcasting, so the scalar and map variants cannot drift apart.

All range-shaping operators map [0, 1] onto [0, 1], fix the endpoints
exactly, and are continuous at their breakpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nnops import einsum2
from .tensor import Tensor

__all__ = [
    "GainParams",
    "ToneMapParams",
    "InvToneMapParams",
    "ColorMatrix",
    "ContrastParams",
    "PipelineConfig",
    "gain",
    "tone_map",
    "inv_tone_map",
    "color_correct",
    "contrast_stretch",
    "run_pipeline",
    "DEFAULT_RANGES",
    "identity_gain",
    "identity_tone",
    "identity_inv_tone",
    "identity_contrast",
    "identity_ccm",
]

_LN10 = math.log(10.0)

# Initial "sufficiently wide" search-space bounds for every scalar parameter.
# They bracket the identity configuration and common ISP settings; the
# search-space auto-tuner narrows them per dataset.
DEFAULT_RANGES: dict[str, tuple[float, float]] = {
    "gain.ph": (0.01, 0.99),
    "gain.pw": (0.01, 0.99),
    "gain.pxlog": (-3.0, -0.05),
    "tone.g1": (0.3, 5.0),
    "tone.g2": (0.1, 4.0),
    "tone.k": (0.05, 1.0),
    "contrast.ph": (0.01, 0.99),
    "contrast.pw": (0.01, 0.99),
    "contrast.px": (0.01, 0.99),
    "invtone.g3": (0.3, 5.0),
    "invtone.g4": (0.0, 4.0),
    "invtone.k2": (0.0, 1.0),
    "ccm.diag": (0.2, 3.0),
    "ccm.off": (-1.0, 1.0),
    "dnfilter.tap": (-1.0, 1.0),
}


@dataclass
class GainParams:
    """Three-segment piecewise-linear amplification, per channel.

    ``px_log10`` is the base-10 log of the knee position: the knee itself is
    ``10**px_log10``, which gives finer control over dark areas.
    """

    ph: Tensor
    pw: Tensor
    px_log10: Tensor


@dataclass
class ContrastParams:
    """Same piecewise family as :class:`GainParams`, knee position used
    directly (applied after tone mapping, where values are no longer dark)."""

    ph: Tensor
    pw: Tensor
    px: Tensor


@dataclass
class ToneMapParams:
    g1: Tensor
    g2: Tensor
    k: Tensor


@dataclass
class InvToneMapParams:
    g3: Tensor
    g4: Tensor
    k2: Tensor


@dataclass
class ColorMatrix:
    """3x3 color matrix; ``m`` is (n, 3, 3) per image or (n, 9, h, w) as a
    per-pixel field (row-major m[i][j] order)."""

    m: Tensor


@dataclass
class PipelineConfig:
    """Which stages run. Order is fixed: inverse tone map (enhancement task)
    first, then denoiser, color correction, gain, tone map, contrast."""

    use_inv_tone_map: bool = False
    use_denoiser: bool = False
    clamp_input: bool = True


def _check_image_range(x: Tensor, op: str, tol: float = 1e-6) -> None:
    lo = float(x.data.min())
    hi = float(x.data.max())
    if lo < -tol or hi > 1.0 + tol:
        raise ValueError(f"{op}: input outside [0, 1] (min={lo:.3g}, max={hi:.3g})")


def _piecewise_gain(x: Tensor, ph: Tensor, pw: Tensor, px: Tensor, op: str) -> Tensor:
    if np.any(pw.data <= 0) or np.any(pw.data >= 1):
        raise ValueError(f"{op}: p_w must lie strictly inside (0, 1)")
    _check_image_range(x, op)
    # closed form of the three segments: slope s_out outside the knee span
    # [b_lo, b_lo + pw] and s_mid inside, expressed through the clipped ramp
    # min(relu(x - b_lo), pw) so no branch selection is needed
    b_lo = px * (1.0 - pw)
    slope_out = (1.0 - ph) / (1.0 - pw)
    slope_mid = ph / pw
    ramp = T.minimum(T.relu(x - b_lo), pw)
    return slope_out * x + (slope_mid - slope_out) * ramp


def gain(x: Tensor, p: GainParams) -> Tensor:
    """Channelwise amplification that never overflows [0, 1] and keeps both
    endpoints fixed; knee position decoded from its base-10 log."""
    px = T.exp(p.px_log10 * _LN10)
    return _piecewise_gain(x, p.ph, p.pw, px, "gain")


def contrast_stretch(x: Tensor, p: ContrastParams) -> Tensor:
    """Final range shaping; identical contract to :func:`gain` with the knee
    position used directly."""
    return _piecewise_gain(x, p.ph, p.pw, p.px, "contrast_stretch")


def tone_map(x: Tensor, p: ToneMapParams) -> Tensor:
    """Per-channel gamma-style tone curve ``y = x**E(x)``.

    The exponent interpolates between ``1/g1`` at black and ``g2/g1`` at
    white; the configuration is rejected if it could turn non-positive
    anywhere on [0, 1] (which would break monotonicity and endpoint fixing).
    """
    _check_image_range(x, "tone_map")
    inv_g1 = 1.0 / p.g1
    denom = 1.0 - (1.0 - p.g2) * p.k**inv_g1
    if np.any(denom.data <= 0):
        raise ValueError("tone_map: exponent denominator must stay positive")
    # exponent endpoints are linear in x**(1/g1); both must be positive
    e0 = inv_g1.data / denom.data
    e1 = inv_g1.data * p.g2.data / denom.data
    if np.any(e0 <= 0) or np.any(e1 <= 0):
        raise ValueError("tone_map: exponent must stay positive on [0, 1]")
    t = x**inv_g1
    exponent = inv_g1 * (1.0 - (1.0 - p.g2) * t) / denom
    return x**exponent


def inv_tone_map(x: Tensor, p: InvToneMapParams) -> Tensor:
    """Approximate inverse of the tone curve, mapping display values back
    toward linear light; used as the first stage for the enhancement task."""
    _check_image_range(x, "inv_tone_map")
    denom = 1.0 + p.g4 * (p.k2 + 1.0) ** p.g3
    if np.any(denom.data <= 0):
        raise ValueError("inv_tone_map: exponent denominator must stay positive")
    exponent = p.g3 * (1.0 + p.g4 * (x + 1.0) ** p.g3) / denom
    return x**exponent


def color_correct(x: Tensor, m: ColorMatrix) -> Tensor:
    """Right-multiply each pixel's rgb row vector by the matrix. The output
    is intentionally not clamped; clamping belongs to the pipeline."""
    if x.shape[1] != 3:
        raise ValueError(f"color_correct expects 3 channels, got {x.shape[1]}")
    if m.m.data.ndim == 3:
        return einsum2("nihw,nij->njhw", x, m.m)
    if m.m.data.ndim == 4 and m.m.shape[1] == 9:
        field9 = T.reshape(m.m, (m.m.shape[0], 3, 3, m.m.shape[2], m.m.shape[3]))
        return einsum2("nihw,nijhw->njhw", x, field9)
    raise ValueError(f"color matrix shape {m.m.shape} not understood")


def run_pipeline(
    x: Tensor,
    params: dict,
    config: PipelineConfig | None = None,
    denoise_fn=None,
) -> Tensor:
    """Apply the enabled stages in their fixed order.

    ``params`` maps stage names ('inv_tone', 'ccm', 'gain', 'tone',
    'contrast') to their parameter records. ``denoise_fn`` is a callable
    ``x -> Tensor`` plugged in when the config enables the denoiser.
    """
    config = config or PipelineConfig()
    if config.clamp_input:
        x = T.clamp(x, 0.0, 1.0, straight_through=True)
    if config.use_inv_tone_map:
        x = inv_tone_map(x, _require(params, "inv_tone"))
    if config.use_denoiser:
        if denoise_fn is None:
            raise ValueError("pipeline configured with a denoiser but none was supplied")
        x = T.clamp(denoise_fn(x), 0.0, 1.0, straight_through=True)
    x = color_correct(x, _require(params, "ccm"))
    x = T.clamp(x, 0.0, 1.0, straight_through=True)
    # gain and tone map carry [0, 1] onto [0, 1] exactly; the straight-through
    # snaps only absorb float32 rounding drift so the next stage's domain
    # check stays strict
    x = gain(x, _require(params, "gain"))
    x = T.clamp(x, 0.0, 1.0, straight_through=True)
    x = tone_map(x, _require(params, "tone"))
    x = T.clamp(x, 0.0, 1.0, straight_through=True)
    x = contrast_stretch(x, _require(params, "contrast"))
    return T.clamp(x, 0.0, 1.0, straight_through=True)


def _require(params: dict, key: str):
    if key not in params:
        raise ValueError(f"missing parameter set for enabled stage '{key}'")
    return params[key]


def _per_channel(value, n: int = 1) -> Tensor:
    arr = np.full((n, 3, 1, 1), value, dtype=np.float32)
    return Tensor(arr)


def identity_gain(n: int = 1) -> GainParams:
    # equal p_h and p_w collapse all three slopes to 1
    return GainParams(ph=_per_channel(0.5, n), pw=_per_channel(0.5, n), px_log10=_per_channel(-1.0, n))


def identity_contrast(n: int = 1) -> ContrastParams:
    return ContrastParams(ph=_per_channel(0.5, n), pw=_per_channel(0.5, n), px=_per_channel(0.1, n))


def identity_tone(n: int = 1) -> ToneMapParams:
    return ToneMapParams(g1=_per_channel(1.0, n), g2=_per_channel(1.0, n), k=_per_channel(0.5, n))


def identity_inv_tone(n: int = 1) -> InvToneMapParams:
    return InvToneMapParams(g3=_per_channel(1.0, n), g4=_per_channel(0.0, n), k2=_per_channel(0.5, n))


def identity_ccm(n: int = 1) -> ColorMatrix:
    m = np.broadcast_to(np.eye(3, dtype=np.float32), (n, 3, 3)).copy()
    return ColorMatrix(m=Tensor(m))
