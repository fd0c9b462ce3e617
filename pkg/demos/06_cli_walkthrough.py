"""End-to-end command-line walkthrough on a throwaway dataset.

Builds a tiny manifest + config in a temp directory, then drives the five
subcommands exactly as you would from a shell:

    dynisp train      --config run.cfg --checkpoint model.ckpt
    dynisp tune-space --config run.cfg --out space.txt --ledger ledger.csv
    dynisp infer      --config run.cfg --checkpoint model.ckpt --input ... --output ...
    dynisp eval       --pred out/ --gt gt/
    dynisp bench      --config run.cfg --resolution 480P
"""

import os
import tempfile

import numpy as np

from dynisp.cli import main
from dynisp.imgio import write_image

root = tempfile.mkdtemp(prefix="dynisp_demo_")
print(f"workspace: {root}\n")

rng = np.random.default_rng(0)
inputs = os.path.join(root, "inputs")
gts = os.path.join(root, "gts")
os.makedirs(inputs)
os.makedirs(gts)
for i in range(4):
    x = rng.uniform(0.1, 0.9, (32, 32, 3)).astype(np.float32)
    y = np.clip(0.9 * x ** 0.8, 0, 1)
    write_image(os.path.join(inputs, f"img_{i}.png"), x)
    write_image(os.path.join(gts, f"img_{i}.png"), y)

with open(os.path.join(root, "manifest.txt"), "w") as f:
    f.write("task=enhancement\n")
    for i in range(4):
        f.write(f"inputs/img_{i}.png,gts/img_{i}.png\n")

with open(os.path.join(root, "run.cfg"), "w") as f:
    f.write(
        "[model]\nlatent_dim = 64\nencoder_resolution = 32\nseed = 3\n"
        "[train]\nepochs = 200\nbatch_size = 4\nlr_max = 3e-3\nwarmup_iters = 10\n"
        "lambda_feat = 0\nseed = 3\n"
        "[atps]\nstages = 2,1\nr = 0.7\n"
        f"[data]\nmanifest = {os.path.join(root, 'manifest.txt')}\n"
    )

cfg = os.path.join(root, "run.cfg")
ckpt = os.path.join(root, "model.ckpt")
pred = os.path.join(root, "pred")

for argv in (
    ["train", "--config", cfg, "--checkpoint", ckpt],
    ["tune-space", "--config", cfg,
     "--out", os.path.join(root, "space.txt"),
     "--ledger", os.path.join(root, "ledger.csv")],
    ["infer", "--config", cfg, "--checkpoint", ckpt,
     "--input", inputs, "--output", pred,
     "--dump-params", os.path.join(root, "params.txt")],
    ["eval", "--pred", pred, "--gt", gts],
    ["bench", "--config", cfg, "--resolution", "480P",
     "--iterations", "3", "--warmup", "1"],
):
    print(f"$ dynisp {' '.join(argv)}")
    rc = main(argv)
    print(f"(exit {rc})\n")
