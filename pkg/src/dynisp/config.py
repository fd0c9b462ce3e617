"""Run configuration: plain key=value text with [section] headers.

Schema (all keys optional unless noted):

    [model]
    use_inv_tone = false         ; prepend the inverse tone map
    use_denoiser = false         ; insert the DNN denoiser
    input_mode = rgb             ; rgb | bayer4
    local = false                ; default control mode
    latent_dim = 256
    virtual_seq = 8
    use_projection = true
    encoder_resolution = 224
    denoiser_mid_channels = 12
    seed = 0

    [train]
    epochs / batch_size / lr_max / lr_min / warmup_iters / weight_decay /
    lambda_feat / lambda_local / grad_clip / seed / local_control

    [atps]
    stages = 5,4                 ; runs per refinement stage
    r = 0.7                      ; bound blend factor
    spec_table = path.txt        ; optional search-space table to start from

    [data]
    manifest = path              ; dataset manifest (see data module)
    augment = true
    crop = 256

Booleans accept true/false/1/0/yes/no. A config's identity is its sha256
hash over the normalized key=value pairs; every subcommand logs it.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib

from .encoder import EncoderConfig
from .model import ModelConfig
from .training import TrainConfig

__all__ = ["load_config", "config_hash", "model_config_from", "train_config_from"]


def load_config(path: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    return cp


def config_hash(cp: configparser.ConfigParser) -> str:
    h = hashlib.sha256()
    for section in sorted(cp.sections()):
        for key in sorted(cp[section]):
            h.update(f"{section}.{key}={cp[section][key]}\n".encode())
    return h.hexdigest()[:16]


def _coerce(cp: configparser.ConfigParser, section: str, cls, skip=()) -> dict:
    """Pull keys matching the dataclass fields of ``cls`` with typed parsing."""
    out = {}
    if not cp.has_section(section):
        return out
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in cp[section]:
        if key in skip:
            continue
        if key not in fields:
            raise ValueError(f"unknown config key [{section}] {key}")
        ftype = fields[key].type
        if ftype in ("bool", bool):
            out[key] = cp.getboolean(section, key)
        elif ftype in ("int", int):
            out[key] = cp.getint(section, key)
        elif ftype in ("float", float):
            out[key] = cp.getfloat(section, key)
        else:
            out[key] = cp.get(section, key)
    return out


def model_config_from(cp: configparser.ConfigParser) -> ModelConfig:
    kw = _coerce(cp, "model", ModelConfig, skip=("encoder_resolution",))
    if cp.has_option("model", "encoder_resolution"):
        kw["encoder"] = EncoderConfig(
            input_resolution=cp.getint("model", "encoder_resolution"),
            seed=kw.get("seed", 0),
        )
    return ModelConfig(**kw)


def train_config_from(cp: configparser.ConfigParser) -> TrainConfig:
    kw = _coerce(cp, "train", TrainConfig)
    return TrainConfig(model=model_config_from(cp), **kw)
