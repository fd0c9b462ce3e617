"""Command-line surface: train, tune-space, infer, eval, bench.

Every subcommand logs the sha256 hash of its resolved configuration and
exits nonzero on any error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .config import config_hash, load_config, model_config_from, train_config_from
from .data import DatasetManifest, ingest
from .imgio import read_image, write_image
from .metrics import SSIM_VARIANTS, MetricsReport, psnr, ssim
from .model import DynamicIspModel, spec_table_from_text, spec_table_to_text
from .tensor import Tensor
from .training import atps, train

RESOLUTIONS = {"480P": (480, 854), "fullHD": (1080, 1920), "4K": (2160, 3840)}

IMAGE_EXTS = (".png", ".ppm", ".pam")


def _log(msg: str) -> None:
    print(msg, flush=True)


def _load_dataset(cp) -> tuple[np.ndarray, np.ndarray]:
    if not cp.has_option("data", "manifest"):
        raise ValueError("config is missing [data] manifest")
    manifest = DatasetManifest.load(cp.get("data", "manifest"))
    augment = cp.getboolean("data", "augment", fallback=False)
    crop = cp.getint("data", "crop", fallback=0) or None
    seed = cp.getint("train", "seed", fallback=0)
    xs, ys = [], []
    n_aug = 0
    for _, x, y in ingest(manifest, augment=augment, crop=crop, seed=seed):
        xs.append(x)
        ys.append(y)
        n_aug += augment and manifest.input_mode != "bayer4"
    if not xs:
        raise ValueError("manifest contains no records")
    shapes = {x.shape for x in xs}
    if len(shapes) > 1:
        raise ValueError(f"inputs have mixed shapes {sorted(shapes)}; set [data] crop")
    _log(f"augmentations applied: {n_aug}")
    return np.stack(xs), np.stack(ys)


def cmd_train(args) -> int:
    cp = load_config(args.config)
    _log(f"config hash: {config_hash(cp)}")
    cfg = train_config_from(cp)
    x, y = _load_dataset(cp)
    table = None
    if args.spec_table:
        with open(args.spec_table) as f:
            table = spec_table_from_text(f.read())
    res = train(cfg, x, y, spec_table=table)
    if res.failed:
        raise RuntimeError("training diverged")
    _log(f"final epoch loss: {res.final_epoch_loss:.6g}  train PSNR: {res.final_psnr:.2f} dB")
    if args.checkpoint:
        model = DynamicIspModel(replace(cfg.model, seed=cfg.seed), spec_table=table)
        model.load_state_dict(res.state)
        model.save(args.checkpoint)
        _log(f"checkpoint written: {args.checkpoint}")
    return 0


def cmd_tune_space(args) -> int:
    cp = load_config(args.config)
    _log(f"config hash: {config_hash(cp)}")
    cfg = train_config_from(cp)
    x, y = _load_dataset(cp)
    stages = tuple(
        int(s) for s in cp.get("atps", "stages", fallback="5,4").split(",")
    )
    r = cp.getfloat("atps", "r", fallback=0.7)
    initial = None
    if cp.has_option("atps", "spec_table"):
        with open(cp.get("atps", "spec_table")) as f:
            initial = spec_table_from_text(f.read())
    res = atps(cfg, x, y, stages=stages, r=r, ledger_path=args.ledger,
               initial_table=initial)
    with open(args.out, "w") as f:
        f.write(spec_table_to_text(res.table))
    _log(f"refined search space written: {args.out}")
    if args.checkpoint and res.best_state is not None:
        model = DynamicIspModel(replace(cfg.model, seed=cfg.seed))
        model.set_spec_table(res.table)
        model.load_state_dict(res.best_state)
        model.save(args.checkpoint)
        _log(f"best checkpoint written: {args.checkpoint}")
    return 0


def _build_model(cp, checkpoint: str | None, spec_table_path: str | None) -> DynamicIspModel:
    mc = model_config_from(cp)
    table = None
    if spec_table_path:
        with open(spec_table_path) as f:
            table = spec_table_from_text(f.read())
    model = DynamicIspModel(mc, spec_table=table)
    if checkpoint:
        model.load(checkpoint)
    return model


def _image_to_batch(img: np.ndarray, input_mode: str) -> np.ndarray:
    if input_mode == "bayer4":
        from .denoiser import pack_rggb

        if img.ndim != 2:
            raise ValueError("bayer4 inference expects single-channel mosaics")
        return pack_rggb(img[None, None])
    if img.ndim == 2:
        raise ValueError("rgb inference expects 3-channel images")
    return np.transpose(img, (2, 0, 1))[None]


def cmd_infer(args) -> int:
    cp = load_config(args.config)
    _log(f"config hash: {config_hash(cp)}")
    model = _build_model(cp, args.checkpoint, args.spec_table)
    os.makedirs(args.output, exist_ok=True)
    names = sorted(
        n for n in os.listdir(args.input) if n.lower().endswith(IMAGE_EXTS)
    )
    if not names:
        raise ValueError(f"no images found in {args.input}")
    dump = open(args.dump_params, "w") if args.dump_params else None
    try:
        for name in names:
            image_id = os.path.splitext(name)[0]
            img = read_image(os.path.join(args.input, name))
            batch = _image_to_batch(img, model.config.input_mode)
            xb = Tensor(batch)
            out = model.forward(xb, local=args.local)
            rgb = np.transpose(out.data[0], (1, 2, 0))
            write_image(os.path.join(args.output, image_id + ".png"), rgb)
            if dump and not args.local:
                for pname, vals in model.decoded_parameters(xb, local=False).items():
                    dump.write(f"{image_id} {pname} {vals[0]:.9g}\n")
    finally:
        if dump:
            dump.close()
    _log(f"{len(names)} images written to {args.output}")
    return 0


def cmd_eval(args) -> int:
    if not os.path.isdir(args.gt):
        raise FileNotFoundError(f"ground-truth directory does not exist: {args.gt}")
    if not os.path.isdir(args.pred):
        raise FileNotFoundError(f"prediction directory does not exist: {args.pred}")
    preds = sorted(n for n in os.listdir(args.pred) if n.lower().endswith(IMAGE_EXTS))
    if not preds:
        raise ValueError(f"no images found in {args.pred}")
    report = MetricsReport(variant=args.ssim_variant)
    for name in preds:
        gt_path = os.path.join(args.gt, name)
        if not os.path.exists(gt_path):
            raise FileNotFoundError(f"missing ground truth for {name}: {gt_path}")
        p = read_image(os.path.join(args.pred, name))
        g = read_image(gt_path)
        if p.shape != g.shape:
            raise ValueError(f"dimension mismatch for {name}: {p.shape} vs {g.shape}")
        report.add(os.path.splitext(name)[0], psnr(p, g), ssim(p, g, args.ssim_variant))
    text = report.to_lines()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    print(text, end="")
    return 0


def cmd_bench(args) -> int:
    cp = load_config(args.config)
    _log(f"config hash: {config_hash(cp)}")
    model = _build_model(cp, args.checkpoint, None)
    h, w = RESOLUTIONS[args.resolution]
    if model.config.input_mode == "bayer4":
        h, w = h // 2, w // 2
    rng = np.random.default_rng(0)
    c = 4 if model.config.input_mode == "bayer4" else 3
    x = Tensor(rng.uniform(0, 1, (1, c, h, w)).astype(np.float32))
    stats = {}
    for mode in ("global", "local"):
        local = mode == "local"
        for _ in range(args.warmup):
            model.forward(x, local=local)
        times = []
        for _ in range(args.iterations):
            t0 = time.perf_counter()
            model.forward(x, local=local)
            times.append((time.perf_counter() - t0) * 1000.0)
        stats[mode] = (float(np.mean(times)), float(np.median(times)))
        _log(f"{mode}: mean {stats[mode][0]:.2f} ms  median {stats[mode][1]:.2f} ms "
             f"({args.resolution}, {args.iterations} iters)")
    _log(f"local/global ratio: {stats['local'][0] / stats['global'][0]:.2f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynisp",
                                description="dynamically controlled white-box ISP")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one configured training")
    t.add_argument("--config", required=True)
    t.add_argument("--checkpoint", help="where to store the trained weights")
    t.add_argument("--spec-table", help="search-space table to train inside")
    t.set_defaults(fn=cmd_train)

    ts = sub.add_parser("tune-space", help="multi-seed search-space refinement")
    ts.add_argument("--config", required=True)
    ts.add_argument("--out", required=True, help="refined table output path")
    ts.add_argument("--ledger", help="append-only run ledger path")
    ts.add_argument("--checkpoint", help="store best run's weights")
    ts.set_defaults(fn=cmd_tune_space)

    i = sub.add_parser("infer", help="process a directory of images")
    i.add_argument("--config", required=True)
    i.add_argument("--checkpoint")
    i.add_argument("--spec-table")
    i.add_argument("--input", required=True)
    i.add_argument("--output", required=True)
    i.add_argument("--local", action="store_true", help="local (per-region) control")
    i.add_argument("--dump-params", help="write 'image_id param value' lines here")
    i.set_defaults(fn=cmd_infer)

    e = sub.add_parser("eval", help="PSNR/SSIM of predictions against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--ssim-variant", choices=SSIM_VARIANTS, default="original_res")
    e.add_argument("--out", help="also write the report here")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="runtime of global vs local control")
    b.add_argument("--config", required=True)
    b.add_argument("--checkpoint")
    b.add_argument("--resolution", choices=sorted(RESOLUTIONS), default="480P")
    b.add_argument("--iterations", type=int, default=50)
    b.add_argument("--warmup", type=int, default=10)
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
