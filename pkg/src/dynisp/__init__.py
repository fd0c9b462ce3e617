"""dynisp: a dynamically controlled, fully differentiable white-box ISP.

A compact CNN encoder summarizes the input image; a recurrent controller
decodes bounded parameters for each classical ISP stage (inverse tone map,
DNN denoiser, color matrix, gain, tone map, contrast stretch), either one
set per image or as coarse spatial maps. Training, multi-seed search-space
refinement and evaluation tooling are included.
"""

from .controller import Controller, ControllerConfig, LayerSpec, ParamSet, ParamSpec
from .denoiser import Denoiser, DenoiserConfig, demosaic_bilinear, local_l1, pack_rggb
from .encoder import Encoder, EncoderConfig
from .isp import (
    ColorMatrix,
    ContrastParams,
    GainParams,
    InvToneMapParams,
    PipelineConfig,
    ToneMapParams,
    color_correct,
    contrast_stretch,
    gain,
    inv_tone_map,
    run_pipeline,
    tone_map,
)
from .metrics import MetricsReport, psnr, ssim
from .model import (
    DynamicIspModel,
    ModelConfig,
    default_spec_table,
    spec_table_from_text,
    spec_table_to_text,
)
from .module import Module
from .tensor import Tape, Tensor, load_container, load_tensor, save_container, save_tensor, tape
from .training import (
    AdamW,
    FeatureExtractor,
    TrainConfig,
    atps,
    staged_denoiser_training,
    total_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "Tape",
    "tape",
    "Module",
    "save_tensor",
    "load_tensor",
    "save_container",
    "load_container",
    "GainParams",
    "ContrastParams",
    "ToneMapParams",
    "InvToneMapParams",
    "ColorMatrix",
    "PipelineConfig",
    "gain",
    "contrast_stretch",
    "tone_map",
    "inv_tone_map",
    "color_correct",
    "run_pipeline",
    "Encoder",
    "EncoderConfig",
    "Controller",
    "ControllerConfig",
    "ParamSpec",
    "LayerSpec",
    "ParamSet",
    "Denoiser",
    "DenoiserConfig",
    "local_l1",
    "pack_rggb",
    "demosaic_bilinear",
    "DynamicIspModel",
    "ModelConfig",
    "default_spec_table",
    "spec_table_to_text",
    "spec_table_from_text",
    "TrainConfig",
    "train",
    "atps",
    "staged_denoiser_training",
    "AdamW",
    "FeatureExtractor",
    "total_loss",
    "psnr",
    "ssim",
    "MetricsReport",
]
