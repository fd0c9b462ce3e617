"""Dataset manifests, ingestion and paired augmentations.

A manifest is a small text file: a header of ``key=value`` lines (``task``
is required) followed by one record per line,
``input_path,gt_path[,sensor_tag]`` with paths relative to the manifest.
Bayer inputs (``input_mode=bayer4``) are 16-bit single-channel RGGB mosaics
and receive no augmentation; everything else gets paired random flips,
90-degree rotations and crops when augmentation is on.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .denoiser import pack_rggb
from .imgio import read_image

__all__ = ["DatasetRecord", "DatasetManifest", "ingest", "validation_split"]

TASKS = ("universal_isp", "normal_isp", "tone_mapping", "enhancement")


@dataclass
class DatasetRecord:
    input_path: str
    gt_path: str
    sensor_tag: str | None = None

    @property
    def image_id(self) -> str:
        return os.path.splitext(os.path.basename(self.input_path))[0]


@dataclass
class DatasetManifest:
    task: str
    records: list[DatasetRecord] = field(default_factory=list)
    input_mode: str = "rgb"  # 'rgb' or 'bayer4'

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {TASKS}")

    @classmethod
    def load(cls, path: str) -> "DatasetManifest":
        base = os.path.dirname(os.path.abspath(path))
        header: dict[str, str] = {}
        records: list[DatasetRecord] = []
        with open(path) as f:
            for lineno, raw in enumerate(f, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" in line and "," not in line:
                    key, _, val = line.partition("=")
                    header[key.strip()] = val.strip()
                    continue
                parts = [p.strip() for p in line.split(",")]
                if len(parts) not in (2, 3):
                    raise ValueError(f"bad manifest record at line {lineno}: {raw!r}")
                records.append(
                    DatasetRecord(
                        os.path.join(base, parts[0]),
                        os.path.join(base, parts[1]),
                        parts[2] if len(parts) == 3 else None,
                    )
                )
        if "task" not in header:
            raise ValueError(f"manifest {path} missing required 'task' header")
        return cls(header["task"], records, header.get("input_mode", "rgb"))


def _to_chw(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img[None]
    return np.transpose(img, (2, 0, 1))


def _load_pair(rec: DatasetRecord, input_mode: str) -> tuple[np.ndarray, np.ndarray]:
    x = read_image(rec.input_path)
    y = read_image(rec.gt_path)
    if input_mode == "bayer4":
        if x.ndim != 2:
            raise ValueError(f"bayer input must be single-channel: {rec.input_path}")
        x = pack_rggb(_to_chw(x)[None])[0]
        if y.shape[:2] != (x.shape[1] * 2, x.shape[2] * 2):
            raise ValueError(f"ground truth must be full-resolution RGB for {rec.input_path}")
        return x.astype(np.float32), _to_chw(y).astype(np.float32)
    xc, yc = _to_chw(x), _to_chw(y)
    if xc.shape[1:] != yc.shape[1:]:
        raise ValueError(
            f"dim mismatch {xc.shape[1:]} vs {yc.shape[1:]} for {rec.input_path}"
        )
    return xc.astype(np.float32), yc.astype(np.float32)


def _augment_pair(x: np.ndarray, y: np.ndarray, crop: int | None,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if crop is not None and (x.shape[1] > crop or x.shape[2] > crop):
        top = int(rng.integers(0, x.shape[1] - crop + 1))
        left = int(rng.integers(0, x.shape[2] - crop + 1))
        x = x[:, top : top + crop, left : left + crop]
        y = y[:, top : top + crop, left : left + crop]
    if rng.random() < 0.5:
        x, y = x[:, :, ::-1], y[:, :, ::-1]
    if rng.random() < 0.5:
        x, y = x[:, ::-1], y[:, ::-1]
    k = int(rng.integers(0, 4))
    if k:
        x = np.rot90(x, k, axes=(1, 2))
        y = np.rot90(y, k, axes=(1, 2))
    return np.ascontiguousarray(x), np.ascontiguousarray(y)


def ingest(manifest: DatasetManifest, augment: bool = False, crop: int | None = None,
           seed: int = 0):
    """Yield (image_id, input, gt) CHW float pairs; deterministic per seed.

    Augmentation is force-disabled for mosaicked inputs: flips and rotations
    would silently permute the RGGB phase.
    """
    rng = np.random.default_rng(seed)
    do_aug = augment and manifest.input_mode != "bayer4"
    for rec in manifest.records:
        x, y = _load_pair(rec, manifest.input_mode)
        if do_aug:
            x, y = _augment_pair(x, y, crop, rng)
        yield rec.image_id, x, y


def validation_split(manifest: DatasetManifest, fraction: float = 0.1
                     ) -> tuple[DatasetManifest, DatasetManifest]:
    """Tail split by sorted image id; the last ``fraction`` goes to validation."""
    recs = sorted(manifest.records, key=lambda r: r.image_id)
    n_val = max(int(round(len(recs) * fraction)), 1) if recs else 0
    train = DatasetManifest(manifest.task, recs[: len(recs) - n_val], manifest.input_mode)
    val = DatasetManifest(manifest.task, recs[len(recs) - n_val :], manifest.input_mode)
    return train, val
