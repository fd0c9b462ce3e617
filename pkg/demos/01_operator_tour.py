"""A walking tour of the white-box ISP operators.

Each stage of the pipeline is a small closed-form image operator whose
parameters are plain numbers. This script pushes a horizontal ramp image
through every stage, printing a handful of sample values so you can see what
each curve does to the tonal scale.
"""

import numpy as np

from dynisp.isp import (
    ColorMatrix,
    ContrastParams,
    GainParams,
    InvToneMapParams,
    ToneMapParams,
    color_correct,
    contrast_stretch,
    gain,
    inv_tone_map,
    tone_map,
)
from dynisp.tensor import Tensor


def t3(vals):
    return Tensor(np.array(vals, dtype=np.float32).reshape(1, 3, 1, 1))


def sample(name, img, cols=(0, 63, 127, 191, 255)):
    row = img.data[0, 0, 0]
    print(f"  {name:<22}" + "  ".join(f"{row[c]:.4f}" for c in cols))


# a 1x3x8x256 left-to-right ramp, identical in all three channels
ramp = np.broadcast_to(
    np.linspace(0.0, 1.0, 256, dtype=np.float32), (1, 3, 8, 256)
).copy()
x = Tensor(ramp)

print("input columns 0 / 63 / 127 / 191 / 255")
sample("ramp", x)

print("\npiecewise gain: ph=0.7, pw=0.3 brightens shadows (slope 2.33 below the knee)")
g = gain(x, GainParams(ph=t3([0.7] * 3), pw=t3([0.3] * 3), px_log10=t3([-1.0] * 3)))
sample("gain(x)", g)

print("\ntone map with g1=2.2 approximates a display gamma; g2 bends the toe")
t = tone_map(x, ToneMapParams(g1=t3([2.2] * 3), g2=t3([1.0] * 3), k=t3([1.0] * 3)))
sample("tone(x)", t)
print(f"  check: 0.25 ** (1/2.2) = {0.25 ** (1 / 2.2):.4f}")

print("\ninverse tone map undoes a display curve (here its own parameters)")
it = inv_tone_map(x, InvToneMapParams(g3=t3([2.2] * 3), g4=t3([1.0] * 3), k2=t3([1.0] * 3)))
sample("inv_tone(x)", it)

print("\ncontrast stretch: an S-curve around the px=0.5 pivot")
c = contrast_stretch(
    x, ContrastParams(ph=t3([0.3] * 3), pw=t3([0.5] * 3), px=t3([0.5] * 3))
)
sample("contrast(x)", c)

print("\ncolor-correction matrix mixes channels; a warm cast, for instance")
m = np.array([[[1.10, -0.05, -0.05], [-0.02, 1.04, -0.02], [-0.08, -0.02, 1.10]]],
             dtype=np.float32)
cc = color_correct(x, ColorMatrix(m=Tensor(m)))
mid = cc.data[0, :, 0, 127]
print(f"  mid-gray 0.498 -> r={mid[0]:.4f} g={mid[1]:.4f} b={mid[2]:.4f}")

print("\nevery operator fixes the endpoints: f(0)=0 and f(1)=1")
for name, img in [("gain", g), ("tone", t), ("contrast", c)]:
    ends = img.data[0, 0, 0, [0, 255]]
    print(f"  {name:<10} f(0)={ends[0]:.7f}  f(1)={ends[1]:.7f}")
