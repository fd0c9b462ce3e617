"""PSNR and SSIM for [0, 1] images.

SSIM follows the standard formulation: k1=0.01, k2=0.03, 11x11 Gaussian
window with sigma=1.5, dynamic range 1.0, statistics from a valid-mode
windowed convolution, channels averaged. Two variants are exposed:

* ``original_res``     - straight SSIM at the native resolution.
* ``fivek_lowpass_256`` - Gaussian low-pass then bilinear subsample of both
  images to 256x256 before comparing; the low-pass sigma is 0.5x the
  per-axis shrink factor (a conventional anti-alias choice).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

__all__ = ["psnr", "ssim", "MetricsReport", "SSIM_VARIANTS"]

SSIM_VARIANTS = ("original_res", "fivek_lowpass_256")

PSNR_CAP = 99.0


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """10*log10(1 / MSE); identical images return the 99 dB cap sentinel."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred.astype(np.float64) - gt.astype(np.float64)) ** 2))
    if mse <= 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


_WINDOW = _gaussian_window()


def _ssim_channel(a: np.ndarray, b: np.ndarray, k1: float, k2: float) -> float:
    c1 = k1**2
    c2 = k2**2
    win = _WINDOW
    half = win.shape[0] // 2

    def filt(img):
        out = cv2.filter2D(img, -1, win, borderType=cv2.BORDER_REFLECT)
        return out[half:-half, half:-half]  # valid region only

    mu_a = filt(a)
    mu_b = filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _lowpass_subsample(img: np.ndarray, size: int = 256) -> np.ndarray:
    h, w = img.shape[:2]
    sy = max(h / size / 2.0, 1e-6)
    sx = max(w / size / 2.0, 1e-6)
    if h > size or w > size:
        img = cv2.GaussianBlur(img, ksize=(0, 0), sigmaX=sx, sigmaY=sy)
    return cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)


def ssim(pred: np.ndarray, gt: np.ndarray, variant: str = "original_res",
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over channels; images are (h, w) or (h, w, c) in [0, 1]."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if variant not in SSIM_VARIANTS:
        raise ValueError(f"unknown SSIM variant {variant!r}; choose from {SSIM_VARIANTS}")
    a = pred.astype(np.float64)
    b = gt.astype(np.float64)
    if variant == "fivek_lowpass_256":
        a = _lowpass_subsample(a)
        b = _lowpass_subsample(b)
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if min(a.shape[0], a.shape[1]) < _WINDOW.shape[0]:
        # images smaller than the 11x11 window: single whole-image window
        # with uniform weights (keeps tiny fixtures hand-computable)
        fn = lambda ca, cb: _ssim_global(ca, cb, k1, k2)
    else:
        fn = lambda ca, cb: _ssim_channel(ca, cb, k1, k2)
    vals = [fn(a[..., c], b[..., c]) for c in range(a.shape[2])]
    return float(np.mean(vals))


def _ssim_global(a: np.ndarray, b: np.ndarray, k1: float, k2: float) -> float:
    c1, c2 = k1**2, k2**2
    mu_a, mu_b = a.mean(), b.mean()
    var_a = a.var()
    var_b = b.var()
    cov = ((a - mu_a) * (b - mu_b)).mean()
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(num / den)


@dataclass
class MetricsReport:
    variant: str
    per_image: dict[str, tuple[float, float]] = field(default_factory=dict)  # id -> (psnr, ssim)
    runtime_ms: dict[str, float] = field(default_factory=dict)
    resolution: str | None = None

    def add(self, image_id: str, psnr_db: float, ssim_val: float) -> None:
        self.per_image[image_id] = (psnr_db, ssim_val)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([v[0] for v in self.per_image.values()]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([v[1] for v in self.per_image.values()]))

    def to_lines(self) -> str:
        lines = [f"{k} {p:.4f} {s:.6f}" for k, (p, s) in sorted(self.per_image.items())]
        lines.append(f"mean {self.mean_psnr:.4f} {self.mean_ssim:.6f}")
        return "\n".join(lines) + "\n"
