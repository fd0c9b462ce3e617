"""Reading and writing of 8/16-bit PNG, PPM and PAM images.

Everything crossing this boundary is float in [0, 1]; 8-bit codes map 255
-> 1.0 and 16-bit codes map 65535 -> 1.0. PNG/PPM go through OpenCV; PAM
(the P7 netpbm container) has a small parser of its own since OpenCV does
not handle it.
"""

from __future__ import annotations

import os

import cv2
import numpy as np

__all__ = ["read_image", "write_image"]


def read_image(path: str) -> np.ndarray:
    """Load an image as float32 in [0, 1]; (h, w) for single-channel files,
    (h, w, 3) RGB otherwise."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if path.lower().endswith(".pam"):
        raw = _read_pam(path)
    else:
        raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise ValueError(f"unreadable image: {path}")
        if raw.ndim == 3:
            if raw.shape[2] == 4:
                raw = raw[:, :, :3]
            raw = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return _normalize(raw, path)


def _normalize(raw: np.ndarray, path: str) -> np.ndarray:
    if raw.dtype == np.uint8:
        return raw.astype(np.float32) / 255.0
    if raw.dtype == np.uint16:
        return raw.astype(np.float32) / 65535.0
    raise ValueError(f"unsupported sample type {raw.dtype} in {path}")


def write_image(path: str, img: np.ndarray, bit_depth: int = 8) -> None:
    """Store a float [0, 1] array ((h, w) or (h, w, 3) RGB) as PNG/PPM/PAM."""
    if bit_depth not in (8, 16):
        raise ValueError("bit_depth must be 8 or 16")
    scale = 255 if bit_depth == 8 else 65535
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    coded = np.round(np.clip(img, 0.0, 1.0) * scale).astype(dtype)
    if path.lower().endswith(".pam"):
        _write_pam(path, coded, scale)
        return
    if coded.ndim == 3:
        coded = cv2.cvtColor(coded, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(path, coded):
        raise ValueError(f"could not write image: {path}")


def _read_pam(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P7":
            raise ValueError(f"not a PAM (P7) file: {path}")
        fields: dict[str, str] = {}
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"truncated PAM header: {path}")
            line = line.strip()
            if not line or line.startswith(b"#"):
                continue
            if line == b"ENDHDR":
                break
            key, _, val = line.partition(b" ")
            fields[key.decode()] = val.decode().strip()
        try:
            w = int(fields["WIDTH"])
            h = int(fields["HEIGHT"])
            depth = int(fields["DEPTH"])
            maxval = int(fields["MAXVAL"])
        except KeyError as exc:
            raise ValueError(f"PAM header missing {exc} in {path}") from exc
        if maxval not in (255, 65535):
            raise ValueError(f"unsupported PAM MAXVAL {maxval} in {path}")
        dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
        data = np.frombuffer(f.read(), dtype=dtype)
        if data.size != w * h * depth:
            raise ValueError(f"PAM payload size mismatch in {path}")
        arr = data.reshape(h, w, depth)
        if maxval == 65535:
            arr = arr.astype(np.uint16)
        if depth == 1:
            arr = arr[:, :, 0]
        elif depth != 3:
            raise ValueError(f"unsupported PAM depth {depth} in {path}")
        return np.ascontiguousarray(arr)


def _write_pam(path: str, coded: np.ndarray, maxval: int) -> None:
    depth = 1 if coded.ndim == 2 else coded.shape[2]
    h, w = coded.shape[:2]
    tupltype = "GRAYSCALE" if depth == 1 else "RGB"
    payload = coded if coded.dtype == np.uint8 else coded.astype(">u2")
    with open(path, "wb") as f:
        f.write(
            f"P7\nWIDTH {w}\nHEIGHT {h}\nDEPTH {depth}\nMAXVAL {maxval}\n"
            f"TUPLTYPE {tupltype}\nENDHDR\n".encode()
        )
        f.write(np.ascontiguousarray(payload).tobytes())
