"""Multi-seed search-space refinement in miniature.

Every ISP scalar is decoded through a sigmoid squashed into its (min, max)
search interval, so the intervals themselves are hyperparameters. The tuner
trains several models from scratch with different seeds, keeps the best run,
and pulls each interval toward the extremes that run actually used:

    new_min = r * used_min + (1 - r) * old_min     (likewise for max)

Two tiny stages here; the run ledger records every training for auditability.
"""

import os
import tempfile

import numpy as np

from dynisp.encoder import EncoderConfig
from dynisp.model import DynamicIspModel, ModelConfig
from dynisp.training import TrainConfig, atps

rng = np.random.default_rng(3)
x = rng.uniform(0.05, 0.95, (8, 3, 32, 32)).astype(np.float32)
y = np.clip(0.9 * x ** 0.8, 0, 1).astype(np.float32)  # a fixed mild retouch

cfg = TrainConfig(
    model=ModelConfig(encoder=EncoderConfig(input_resolution=32, seed=0), latent_dim=64),
    epochs=30, batch_size=4, lr_max=3e-3, lr_min=1e-5, warmup_iters=10,
    lambda_feat=0.0, weight_decay=0.0, seed=7,
)

ledger = os.path.join(tempfile.mkdtemp(), "ledger.csv")
print("refining with 2 stages of 2 seeds each...")
res = atps(cfg, x, y, stages=(2, 2), r=0.7, ledger_path=ledger)

base = DynamicIspModel(cfg.model).spec_table
print(f"\n{'parameter':<16}{'initial':<22}{'refined':<22}shrink")
for name in list(res.table)[:8]:
    blo, bhi = base[name]
    lo, hi = res.table[name]
    shrink = 1.0 - (hi - lo) / (bhi - blo)
    print(f"{name:<16}[{blo:7.3f},{bhi:7.3f}]    [{lo:7.3f},{hi:7.3f}]    {shrink:5.1%}")
print(f"... ({len(res.table)} parameters total)")

print(f"\nper-stage best final-epoch loss:")
for s, stage in enumerate(res.stage_results):
    best = min(r_.final_epoch_loss for r_ in stage if not r_.failed)
    print(f"  stage {s}: {best:.4e}  ({len(stage)} runs)")

print(f"\nledger at {ledger} (one line per run and parameter):")
with open(ledger) as f:
    lines = f.read().splitlines()
print("  " + "\n  ".join(lines[:3]))
print(f"  ... ({len(lines)} lines)")
