"""Loss assembly, the optimization loop, multi-seed search-space refinement
and the staged denoiser schedule.

The search-space refinement trains the model several times from scratch with
different seeds, keeps the run with the best mean final-epoch loss, and
pulls every parameter's bounds toward that run's used-value extrema:

    new_min = r * used_min + (1 - r) * old_min   (and likewise for max)

with blend factor r in (0, 1]. Narrow spaces starve the sigmoid squashing of
gradient, so r stays below 1 in practice (0.7 by default).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .denoiser import local_l1
from .model import DynamicIspModel, ModelConfig
from .module import Module, uniform_init
from .nnops import conv2d, reflect_pad
from .tensor import Tensor

__all__ = [
    "TrainConfig",
    "TrainResult",
    "AdamW",
    "lr_at",
    "FeatureExtractor",
    "total_loss",
    "train",
    "atps",
    "AtpsResult",
    "staged_denoiser_training",
    "psnr_from_mse",
    "evaluate_psnr",
]


def psnr_from_mse(mse: float) -> float:
    if mse <= 0:
        return 99.0
    return float(min(99.0, -10.0 * np.log10(mse)))


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: dict[str, Tensor], weight_decay: float = 1e-2,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / c1
            vhat = self.v[k] / c2
            p.data = p.data - lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p.data)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def lr_at(it: int, total_iters: int, lr_max: float, lr_min: float, warmup: int) -> float:
    """Linear warmup to ``lr_max`` then cosine annealing down to ``lr_min``."""
    if warmup > 0 and it < warmup:
        return lr_max * (it / warmup)
    span = max(total_iters - warmup, 1)
    frac = min((it - warmup) / span, 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * frac))


class FeatureExtractor(Module):
    """Frozen, seed-deterministic convolutional feature stack used as the
    perceptual term. A stand-in interface: externally trained weights can be
    loaded through ``load_state_dict`` / checkpoint files."""

    CHANNELS = (8, 16, 32, 64)

    def __init__(self, seed: int = 777):
        super().__init__()
        rng = np.random.default_rng(seed)
        cin = 3
        for i, cout in enumerate(self.CHANNELS):
            w = self.add_param(f"conv{i}.w", uniform_init(rng, (cout, cin, 3, 3), cin * 9))
            w.requires_grad = False
            cin = cout

    def features(self, x: Tensor) -> list[Tensor]:
        feats = []
        for i in range(len(self.CHANNELS)):
            x = T.relu(conv2d(reflect_pad(x, 1), self._params[f"conv{i}.w"], stride=2))
            feats.append(x)
        return feats


def total_loss(
    pred: Tensor,
    gt: Tensor,
    extractor: FeatureExtractor | None = None,
    lambda_feat: float = 0.1,
    x_dn: Tensor | None = None,
    dn_ref: Tensor | None = None,
    lambda_local: float = 0.01,
    local_pool: tuple[int, int] = (16, 8),
) -> tuple[Tensor, dict[str, float]]:
    """MSE + weighted feature distance + (optionally) the pooled-L1 denoiser
    constraint. Returns the scalar loss and a float breakdown."""
    mse = T.tmean((pred - gt) ** 2.0)
    loss = mse
    parts = {"mse": mse.item()}
    if extractor is not None and lambda_feat > 0:
        fp = extractor.features(pred)
        fg = extractor.features(gt)
        terms = [T.tmean((a - b) ** 2.0) for a, b in zip(fp, fg)]
        feat = terms[0]
        for t in terms[1:]:
            feat = feat + t
        feat = feat * (1.0 / len(terms))
        loss = loss + feat * lambda_feat
        parts["feat"] = feat.item()
    if x_dn is not None and dn_ref is not None and lambda_local > 0:
        k_a, s_a = local_pool
        ll = local_l1(dn_ref, x_dn, k_a, s_a)
        loss = loss + ll * lambda_local
        parts["local_l1"] = ll.item()
    parts["total"] = loss.item()
    return loss, parts


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 5
    batch_size: int = 16
    lr_max: float = 1e-4
    lr_min: float = 1e-7
    warmup_iters: int = 1000
    weight_decay: float = 1e-2
    lambda_feat: float = 0.1
    lambda_local: float = 0.01
    local_pool: tuple[int, int] = (16, 8)
    grad_clip: float = 1.0
    seed: int = 0
    local_control: bool = False
    trainable_prefixes: tuple[str, ...] | None = None  # None = everything
    divergence_loss: float = 1e3


@dataclass
class TrainResult:
    epoch_losses: list[float]
    final_epoch_loss: float
    used_params: dict[str, tuple[float, float]]
    state: dict[str, np.ndarray]
    failed: bool
    final_psnr: float

    def state_hash(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.state):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.state[k]).tobytes())
        return h.hexdigest()


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train(
    cfg: TrainConfig,
    inputs: np.ndarray,
    targets: np.ndarray,
    model: DynamicIspModel | None = None,
    spec_table: dict[str, tuple[float, float]] | None = None,
    extractor: FeatureExtractor | None = None,
) -> TrainResult:
    """One full training run; deterministic given the seed.

    During the final epoch the min/max of every decoded ISP parameter over
    all batches is collected for the search-space tuner.
    """
    if model is None:
        model = DynamicIspModel(replace(cfg.model, seed=cfg.seed), spec_table=spec_table)
    if extractor is None and cfg.lambda_feat > 0:
        extractor = FeatureExtractor()
    params = model.parameters()
    if cfg.trainable_prefixes is not None:
        params = {
            k: v for k, v in params.items() if k.startswith(cfg.trainable_prefixes)
        }
    opt = AdamW(params, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    n = inputs.shape[0]
    iters_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_iters = cfg.epochs * iters_per_epoch
    use_dn = cfg.model.use_denoiser

    it = 0
    epoch_losses: list[float] = []
    used: dict[str, tuple[float, float]] = {}
    last_psnr = 0.0
    failed = False
    for epoch in range(cfg.epochs):
        losses = []
        mses = []
        final_epoch = epoch == cfg.epochs - 1
        if final_epoch:
            used = {}
        for idx in _batches(n, cfg.batch_size, rng):
            xb = Tensor(inputs[idx])
            yb = Tensor(targets[idx])
            lr = lr_at(it, total_iters, cfg.lr_max, cfg.lr_min, cfg.warmup_iters)
            it += 1
            try:
                with T.tape() as tp:
                    aux: dict = {}
                    rec = used if final_epoch else None
                    out = model.forward(
                        xb, local=cfg.local_control, record_params=rec, aux=aux if use_dn else None
                    )
                    loss, parts = total_loss(
                        out,
                        yb,
                        extractor=extractor,
                        lambda_feat=cfg.lambda_feat,
                        x_dn=aux.get("denoised") if use_dn else None,
                        dn_ref=aux.get("dn_input") if use_dn else None,
                        lambda_local=cfg.lambda_local,
                        local_pool=cfg.local_pool,
                    )
                    if not np.isfinite(parts["total"]) or parts["total"] > cfg.divergence_loss:
                        failed = True
                        break
                    opt.zero_grad()
                    tp.backward(loss)
                _clip_gradients(params, cfg.grad_clip)
                opt.step(lr)
            except ValueError:
                failed = True
                break
            losses.append(parts["total"])
            mses.append(parts["mse"])
        if failed or not losses:
            failed = True
            break
        epoch_losses.append(float(np.mean(losses)))
        last_psnr = psnr_from_mse(float(np.mean(mses)))
    return TrainResult(
        epoch_losses=epoch_losses,
        final_epoch_loss=epoch_losses[-1] if epoch_losses else float("inf"),
        used_params=used,
        state=model.state_dict(),
        failed=failed,
        final_psnr=last_psnr,
    )


def _clip_gradients(params: dict[str, Tensor], max_norm: float) -> None:
    if max_norm <= 0:
        return
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale


@dataclass
class AtpsResult:
    table: dict[str, tuple[float, float]]
    best_state: dict[str, np.ndarray] | None
    stage_tables: list[dict[str, tuple[float, float]]]
    stage_results: list[list[TrainResult]]


def atps(
    cfg: TrainConfig,
    inputs: np.ndarray,
    targets: np.ndarray,
    stages: tuple[int, ...] = (5, 4),
    r: float = 0.7,
    ledger_path: str | None = None,
    initial_table: dict[str, tuple[float, float]] | None = None,
    extractor: FeatureExtractor | None = None,
) -> AtpsResult:
    """Multi-seed refinement of the parameter search spaces.

    Each stage trains ``stages[s]`` models from scratch with distinct seeds,
    keeps the one with the lowest mean final-epoch loss (diverged runs are
    excluded), and blends the bounds toward its used-parameter extrema. If
    every run of a stage fails, the previous bounds are kept.
    """
    if not 0.0 < r <= 1.0:
        raise ValueError("blend factor r must lie in (0, 1]")
    probe = DynamicIspModel(replace(cfg.model, seed=cfg.seed), spec_table=initial_table)
    table = dict(probe.spec_table)
    best_state = None
    stage_tables: list[dict[str, tuple[float, float]]] = []
    stage_results: list[list[TrainResult]] = []
    for s, t_count in enumerate(stages):
        results: list[TrainResult] = []
        for t in range(t_count):
            run_cfg = replace(cfg, seed=cfg.seed + 1000 * s + t)
            res = train(run_cfg, inputs, targets, spec_table=table, extractor=extractor)
            results.append(res)
            if ledger_path:
                _append_ledger(ledger_path, s, run_cfg.seed, res)
        stage_results.append(results)
        viable = [res for res in results if not res.failed]
        if not viable:
            stage_tables.append(dict(table))
            continue
        best = min(viable, key=lambda res: res.final_epoch_loss)
        best_state = best.state
        new_table = {}
        for name, (lo, hi) in table.items():
            ulo, uhi = best.used_params.get(name, (lo, hi))
            new_lo = r * ulo + (1 - r) * lo
            new_hi = r * uhi + (1 - r) * hi
            if not new_lo < new_hi:  # guard against degenerate collapse
                new_lo, new_hi = lo, hi
            new_table[name] = (new_lo, new_hi)
        table = new_table
        stage_tables.append(dict(table))
    return AtpsResult(table, best_state, stage_tables, stage_results)


def _append_ledger(path: str, stage: int, seed: int, res: TrainResult) -> None:
    loss = res.final_epoch_loss if np.isfinite(res.final_epoch_loss) else float("nan")
    with open(path, "a") as f:
        if not res.used_params:
            f.write(f"{stage},{seed},{loss:.9g},<failed>,nan,nan\n")
        for name, (lo, hi) in res.used_params.items():
            f.write(f"{stage},{seed},{loss:.9g},{name},{lo:.9g},{hi:.9g}\n")


@dataclass
class StagedResult:
    model_state: dict[str, np.ndarray]
    table: dict[str, tuple[float, float]]
    stage_psnrs: dict[str, float]


def staged_denoiser_training(
    cfg: TrainConfig,
    inputs: np.ndarray,
    targets: np.ndarray,
    atps_stages: tuple[int, ...] = (1,),
    atps_r: float = 0.7,
    stage_b_epochs: int | None = None,
    stage_c_epochs: int | None = None,
    extractor: FeatureExtractor | None = None,
) -> StagedResult:
    """Three-phase schedule for pipelines with a DNN denoiser.

    A: train the denoiser-free pipeline (with search-space refinement) so
       color mapping is learned outside the DNN.
    B: insert the denoiser, freeze everything else, train with the pooled-L1
       color constraint; only the denoiser weights and its kernel-decode
       head may move.
    C: finetune the whole model at a tenth of the learning rate.
    """
    if not cfg.model.use_denoiser:
        raise ValueError("staged training requires a denoiser-enabled model config")
    base_model_cfg = replace(cfg.model, use_denoiser=False)
    stage_a_cfg = replace(cfg, model=base_model_cfg)
    a = atps(stage_a_cfg, inputs, targets, stages=atps_stages, r=atps_r, extractor=extractor)
    if a.best_state is None:
        raise RuntimeError("every stage-A training diverged")

    model = DynamicIspModel(replace(cfg.model, seed=cfg.seed))
    # carry over refined bounds for the shared layers; the filter layer keeps
    # its default range
    merged = dict(model.spec_table)
    merged.update({k: v for k, v in a.table.items() if k in merged})
    model.set_spec_table(merged)
    shared = {k: v for k, v in a.best_state.items() if k in model.state_dict()}
    state = model.state_dict()
    state.update(shared)
    model.load_state_dict(state)

    b_cfg = replace(
        cfg,
        epochs=stage_b_epochs or cfg.epochs,
        trainable_prefixes=("denoiser.", "controller.layer.dnfilter."),
    )
    b = train(b_cfg, inputs, targets, model=model, extractor=extractor)
    if b.failed:
        raise RuntimeError("stage-B training diverged")
    model.load_state_dict(b.state)

    c_cfg = replace(
        cfg,
        epochs=stage_c_epochs or max(cfg.epochs // 2, 1),
        lr_max=cfg.lr_max / 10.0,
        lr_min=min(cfg.lr_min, cfg.lr_max / 10.0),
        seed=cfg.seed + 17,
    )
    c = train(c_cfg, inputs, targets, model=model, extractor=extractor)
    if c.failed:
        raise RuntimeError("stage-C training diverged")
    model.load_state_dict(c.state)
    return StagedResult(
        model_state=model.state_dict(),
        table=merged,
        stage_psnrs={"a": max(r_.final_psnr for r_ in a.stage_results[-1] if not r_.failed),
                     "b": b.final_psnr, "c": c.final_psnr},
    )


def evaluate_psnr(model: DynamicIspModel, inputs: np.ndarray, targets: np.ndarray,
                  local: bool = False, batch_size: int = 8) -> float:
    """Mean PSNR of the model over a dataset (no gradient tracking)."""
    mses = []
    for start in range(0, inputs.shape[0], batch_size):
        xb = Tensor(inputs[start : start + batch_size])
        yb = targets[start : start + batch_size]
        out = model.forward(xb, local=local)
        mses.append(float(((out.data - yb) ** 2).mean()))
    return psnr_from_mse(float(np.mean(mses)))
