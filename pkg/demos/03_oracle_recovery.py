"""Recovering a hidden parameter set from image pairs alone.

We fabricate a ground-truth ISP: one fixed, hand-picked parameter set applied
to 16 random images. The model only ever sees the (input, output) pairs, yet
a short training run drives its decoded parameters toward the hidden ones and
the reconstruction toward the targets. This is the cleanest evidence that the
gradient path through encoder -> controller -> white-box operators works end
to end.

Takes roughly a minute on a desktop CPU. For the full 2k-iteration version
(train PSNR above 40 dB) see the acceptance suite.
"""

import numpy as np

from dynisp.encoder import EncoderConfig
from dynisp.isp import (
    ColorMatrix,
    ContrastParams,
    GainParams,
    PipelineConfig,
    ToneMapParams,
    run_pipeline,
)
from dynisp.model import DynamicIspModel, ModelConfig
from dynisp.tensor import Tensor
from dynisp.training import TrainConfig, evaluate_psnr, train

rng = np.random.default_rng(42)
x = rng.uniform(0.02, 0.98, (16, 3, 64, 64)).astype(np.float32)


def t3(vals):
    return Tensor(np.array(vals, dtype=np.float32).reshape(1, 3, 1, 1))


HIDDEN = {
    "gain.ph.r": 0.55, "gain.ph.g": 0.50, "gain.ph.b": 0.60,
    "tone.g1.r": 1.80, "tone.g1.g": 2.00, "tone.g1.b": 1.90,
}
params = {
    "ccm": ColorMatrix(m=Tensor(np.array([[[1.05, -0.03, -0.02],
                                           [-0.04, 1.08, -0.04],
                                           [-0.02, -0.05, 1.07]]], np.float32))),
    "gain": GainParams(ph=t3([0.55, 0.50, 0.60]), pw=t3([0.35, 0.30, 0.40]),
                       px_log10=t3([-0.9, -1.0, -0.8])),
    "tone": ToneMapParams(g1=t3([1.8, 2.0, 1.9]), g2=t3([1.1, 1.2, 1.15]),
                          k=t3([0.90, 0.92, 0.88])),
    "contrast": ContrastParams(ph=t3([0.52, 0.50, 0.48]), pw=t3([0.45, 0.50, 0.55]),
                               px=t3([0.5, 0.5, 0.5])),
}
y = run_pipeline(Tensor(x), params, PipelineConfig()).data
print(f"oracle dataset: 16 pairs, input PSNR vs target "
      f"{-10 * np.log10(((x - y) ** 2).mean()):.2f} dB")

cfg = TrainConfig(
    model=ModelConfig(encoder=EncoderConfig(input_resolution=64, seed=0), latent_dim=64),
    epochs=250, batch_size=8, lr_max=3e-3, lr_min=1e-5, warmup_iters=50,
    lambda_feat=0.0, weight_decay=0.0, seed=5,
)
print("training (500 iterations)...")
res = train(cfg, x, y)
print(f"epoch loss {res.epoch_losses[0]:.3e} -> {res.epoch_losses[-1]:.3e}, "
      f"train PSNR {res.final_psnr:.2f} dB")

from dataclasses import replace

model = DynamicIspModel(replace(cfg.model, seed=cfg.seed))
model.load_state_dict(res.state)
print(f"eval PSNR on the oracle pairs: {evaluate_psnr(model, x, y):.2f} dB")

print("\ndecoded vs hidden parameters (first image):")
dump = model.decoded_parameters(Tensor(x[:1]))
for name, want in HIDDEN.items():
    print(f"  {name:<12} decoded {dump[name][0]:.3f}   hidden {want:.3f}")
