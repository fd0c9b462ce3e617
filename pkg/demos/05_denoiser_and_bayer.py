"""The dynamic denoiser and the Bayer path.

The denoiser is a small residual CNN whose depthwise stage is *generated* by
the controller: 108 scalars decode into a 12x3x3 kernel bank per image. On
packed RGGB mosaics the same module doubles as a learned demosaicker via
pixel shuffle; with all weights at zero it degrades gracefully to bilinear
demosaicing, so training starts from a sensible prior.
"""

import numpy as np

from dynisp.denoiser import Denoiser, DenoiserConfig, demosaic_bilinear, local_l1, pack_rggb
from dynisp.tensor import Tensor

rng = np.random.default_rng(1)

print("1. rgb mode: zero weights leave the image untouched (residual design)")
dn = Denoiser(DenoiserConfig(seed=0))
for p in dn._params.values():
    p.data[:] = 0.0
x = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)).astype(np.float32))
kern = Tensor(np.zeros((1, 12, 3, 3), dtype=np.float32))
out = dn.denoise(x, kern)
print(f"   max |out - in| = {np.abs(out.data - x.data).max():.2e}")

print("\n2. bayer mode: a full-resolution mosaic packs to 4 half-res channels")
mosaic = rng.uniform(0, 1, (1, 1, 8, 8)).astype(np.float32)
packed = pack_rggb(mosaic)
print(f"   mosaic {mosaic.shape[2:]} -> packed {packed.shape[1:]}")
rgb = demosaic_bilinear(Tensor(packed))
print(f"   bilinear demosaic -> rgb {rgb.shape[1:]}")
err = np.abs(rgb.data[0, 0, 0::2, 0::2] - mosaic[0, 0, 0::2, 0::2]).max()
print(f"   red channel at red sites reproduces the mosaic: max err {err:.1e}")

print("\n3. zero-weight bayer denoiser == bilinear demosaic (same prior)")
dnb = Denoiser(DenoiserConfig(input_mode="bayer4", seed=0))
for p in dnb._params.values():
    p.data[:] = 0.0
out_b = dnb.denoise(Tensor(packed), kern)
print(f"   max difference: {np.abs(out_b.data - np.clip(rgb.data, 0, 1)).max():.2e}")

print("\n4. the pooled-L1 color constraint")
print("   compares 16x16 average pools (stride 8) before and after denoising,")
print("   so noise removal is free but color shifts are penalized:")
base = Tensor(rng.uniform(0.2, 0.8, (1, 3, 32, 32)).astype(np.float32))
noisy = Tensor(np.clip(base.data + rng.normal(0, 0.05, base.data.shape), 0, 1)
               .astype(np.float32))
shifted = Tensor(np.clip(base.data + 0.08, 0, 1).astype(np.float32))
print(f"   local_l1(base, base + noise)      = {local_l1(base, noisy).item():.4f}")
print(f"   local_l1(base, base + 0.08 shift) = {local_l1(base, shifted).item():.4f}")
