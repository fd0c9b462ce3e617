"""Acceptance suite: nine end-to-end criteria, one printed verdict line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the verdict lines as
they complete. The training-based criteria (5-7) take a few minutes each on a
desktop CPU; everything is seeded and deterministic.
"""

import time
from dataclasses import replace

import numpy as np

from dynisp import nnops
from dynisp import tensor as T
from dynisp.controller import Controller, ControllerConfig
from dynisp.denoiser import Denoiser, DenoiserConfig, local_l1
from dynisp.encoder import EncoderConfig
from dynisp.isp import (
    DEFAULT_RANGES,
    ColorMatrix,
    ContrastParams,
    GainParams,
    InvToneMapParams,
    PipelineConfig,
    ToneMapParams,
    color_correct,
    contrast_stretch,
    gain,
    identity_ccm,
    identity_contrast,
    identity_tone,
    inv_tone_map,
    run_pipeline,
    tone_map,
)
from dynisp.metrics import psnr, ssim
from dynisp.model import (
    DynamicIspModel,
    ModelConfig,
    build_layer_specs,
    default_spec_table,
)
from dynisp.tensor import Tensor
from dynisp.training import (
    TrainConfig,
    atps,
    evaluate_psnr,
    staged_denoiser_training,
    train,
)

from conftest import gradcheck


def _verdict(num: int, title: str, ok: bool, detail: str) -> None:
    print(f"\n[criterion {num}] {title}: {'PASS' if ok else 'FAIL'}  ({detail})")


def _t3(vals):
    return Tensor(np.array(vals, dtype=np.float32).reshape(1, 3, 1, 1))


# ----------------------------------------------------------------------
# shared oracle construction

HIDDEN_GAIN = {"ph": [0.55, 0.50, 0.60], "pw": [0.35, 0.30, 0.40],
               "pxlog": [-0.9, -1.0, -0.8]}


def _oracle_images(size=64):
    rng = np.random.default_rng(42)
    return rng.uniform(0.02, 0.98, (16, 3, size, size)).astype(np.float32)


def _full_oracle_params():
    """A hidden parameter set exercising every mandatory stage."""
    return {
        "ccm": ColorMatrix(m=Tensor(np.array(
            [[[1.05, -0.03, -0.02], [-0.04, 1.08, -0.04], [-0.02, -0.05, 1.07]]],
            dtype=np.float32))),
        "gain": GainParams(ph=_t3(HIDDEN_GAIN["ph"]), pw=_t3(HIDDEN_GAIN["pw"]),
                           px_log10=_t3(HIDDEN_GAIN["pxlog"])),
        "tone": ToneMapParams(g1=_t3([1.8, 2.0, 1.9]), g2=_t3([1.1, 1.2, 1.15]),
                              k=_t3([0.90, 0.92, 0.88])),
        "contrast": ContrastParams(ph=_t3([0.52, 0.50, 0.48]),
                                   pw=_t3([0.45, 0.50, 0.55]),
                                   px=_t3([0.5, 0.5, 0.5])),
    }


def _gain_oracle():
    """Hidden gain parameters; every other stage held exactly at identity by
    leaving it out of the search-space table. The decomposition of a full
    tonal chain into its stages is not unique (several stage settings produce
    the same curve to within the fit precision reachable here), so interval
    containment is only a meaningful property when the stage under refinement
    is the one that has to explain the data."""
    x = _oracle_images()
    hidden = {}
    for p, vals in HIDDEN_GAIN.items():
        for c, v in zip("rgb", vals):
            hidden[f"gain.{p}.{c}"] = v
    params = {
        "ccm": identity_ccm(1),
        "gain": GainParams(ph=_t3(HIDDEN_GAIN["ph"]), pw=_t3(HIDDEN_GAIN["pw"]),
                           px_log10=_t3(HIDDEN_GAIN["pxlog"])),
        "tone": identity_tone(1),
        "contrast": identity_contrast(1),
    }
    y = run_pipeline(Tensor(x), params, PipelineConfig()).data
    init = {k: v for k, v in default_spec_table().items()
            if k.startswith("gain.")}
    return x, y, hidden, init


def _oracle_cfg(**kw):
    kw.setdefault("model", ModelConfig(
        encoder=EncoderConfig(input_resolution=64, seed=0), latent_dim=64))
    kw.setdefault("batch_size", 8)
    kw.setdefault("lr_max", 3e-3)
    kw.setdefault("lr_min", 1e-5)
    kw.setdefault("warmup_iters", 50)
    kw.setdefault("lambda_feat", 0.0)
    kw.setdefault("weight_decay", 0.0)
    kw.setdefault("seed", 5)
    return TrainConfig(**kw)


# ----------------------------------------------------------------------


def test_criterion_1_gradient_suite():
    t0 = time.time()
    n_checked = [0]

    def run(name, fn, make_tensors, instances=20, eps=1e-5):
        for inst in range(instances):
            rng = np.random.default_rng(hash(name) % 2**31 + inst)
            gradcheck(fn, make_tensors(rng), seed=inst, eps=eps)
            n_checked[0] += 1

    def rt(rng, shape, lo, hi):
        return Tensor(rng.uniform(lo, hi, shape), requires_grad=True,
                      dtype=np.float64)

    def rn(rng, shape, s=1.0):
        return Tensor(rng.normal(0, s, shape), requires_grad=True, dtype=np.float64)

    # elementwise / reductions (kink ops evaluated away from their kinks)
    run("add", T.add, lambda r: [rn(r, (2, 3, 4, 4)), rn(r, (3,))])
    run("sub", T.sub, lambda r: [rn(r, (2, 3, 4, 4)), rn(r, (2, 3, 4, 4))])
    run("mul", T.mul, lambda r: [rn(r, (2, 3, 4, 4)), rn(r, (3,))])
    run("div", T.div, lambda r: [rn(r, (2, 3, 4, 4)), rt(r, (2, 3, 4, 4), 0.5, 2.0)])
    run("pow", lambda a: a ** 2.0, lambda r: [rn(r, (2, 3, 4, 4))])
    run("pow_frac", lambda a: a ** 0.455, lambda r: [rt(r, (2, 3, 4, 4), 0.1, 0.9)])
    run("exp", T.exp, lambda r: [rn(r, (2, 3, 4, 4))])
    run("log", T.log, lambda r: [rt(r, (2, 3, 4, 4), 0.1, 3.0)])
    run("sigmoid", T.sigmoid, lambda r: [rn(r, (2, 3, 4, 4), 2.0)])
    run("relu", T.relu, lambda r: [rn(r, (2, 3, 4, 4)) + 0.001 * 0])
    run("min", T.minimum, lambda r: [rt(r, (2, 3, 4, 4), 0, 0.45),
                                     rt(r, (2, 3, 4, 4), 0.55, 1)])
    run("max", T.maximum, lambda r: [rt(r, (2, 3, 4, 4), 0, 0.45),
                                     rt(r, (3,), 0.55, 1)])
    run("abs", T.abs_, lambda r: [rt(r, (2, 3, 4, 4), 0.1, 1.0)])
    run("neg", T.neg, lambda r: [rn(r, (2, 3, 4, 4))])
    run("tsum_ax", lambda a: T.tsum(a, axis=(2, 3), keepdims=True),
        lambda r: [rn(r, (2, 3, 4, 4))])
    run("tmean", lambda a: T.tmean(a, axis=1, keepdims=True),
        lambda r: [rn(r, (2, 3, 4, 4))])
    run("reshape", lambda a: T.reshape(a, (2, 48)), lambda r: [rn(r, (2, 3, 4, 4))])
    run("slice", lambda a: a[:, 1:3], lambda r: [rn(r, (2, 4, 3, 3))])
    run("concat", lambda a, b: T.concat([a, b], axis=1),
        lambda r: [rn(r, (2, 2, 3, 3)), rn(r, (2, 3, 3, 3))])
    run("clamp", lambda a: T.clamp(a, 0.0, 1.0),
        lambda r: [rt(r, (2, 3, 4, 4), 0.05, 0.95)])

    # structured nn ops
    run("matmul", nnops.matmul, lambda r: [rn(r, (4, 5)), rn(r, (5, 3))])
    run("linear", nnops.linear,
        lambda r: [rn(r, (4, 6)), rn(r, (6, 5), 0.3), rn(r, (5,))])
    run("conv2d", lambda x, k, b: nnops.conv2d(x, k, stride=1, padding=1) + b,
        lambda r: [rn(r, (1, 3, 6, 6)), rn(r, (4, 3, 3, 3), 0.3),
                   rn(r, (4, 1, 1), 0.3)])
    run("conv2d_s2", lambda x, k: nnops.conv2d(x, k, stride=2),
        lambda r: [rn(r, (1, 3, 6, 6)), rn(r, (4, 3, 3, 3), 0.3)])
    run("conv_grouped", lambda x, k: nnops.conv2d(x, k, groups=4),
        lambda r: [rn(r, (1, 4, 5, 5)), rn(r, (4, 1, 3, 3), 0.3)])
    run("dyn_depthwise", nnops.dynamic_depthwise_conv,
        lambda r: [rn(r, (2, 3, 6, 6)), rn(r, (2, 3, 3, 3), 0.3)])
    run("layer_norm", nnops.layer_norm,
        lambda r: [rn(r, (2, 6, 3, 3)), rn(r, (6,)), rn(r, (6,))])
    run("reflect_pad", lambda a: nnops.reflect_pad(a, 2),
        lambda r: [rn(r, (1, 2, 5, 5))])
    run("avg_pool", lambda a: nnops.avg_pool(a, 2, 2), lambda r: [rn(r, (1, 3, 8, 8))])
    run("global_pool", nnops.global_avg_pool, lambda r: [rn(r, (2, 3, 5, 5))])
    run("resize", lambda a: nnops.resize_bilinear(a, 8, 7),
        lambda r: [rn(r, (1, 3, 5, 5))])
    run("pixel_shuffle", lambda a: nnops.pixel_shuffle(a, 2),
        lambda r: [rn(r, (1, 12, 3, 3))])
    run("einsum", lambda a, b: nnops.einsum2("nij,njk->nik", a, b),
        lambda r: [rn(r, (2, 3, 4)), rn(r, (2, 4, 3))])

    # ISP operators with per-image parameter tensors; inputs kept away from
    # the piecewise breakpoints
    def gain_fn(x, ph, pw, px):
        return gain(x, GainParams(ph=ph, pw=pw, px_log10=px))

    def gain_tensors(r):
        ph = rt(r, (2, 3, 1, 1), 0.3, 0.7)
        pw = rt(r, (2, 3, 1, 1), 0.2, 0.5)
        px = rt(r, (2, 3, 1, 1), -1.2, -0.6)
        b_lo = (10.0 ** px.data) * (1 - pw.data)
        x = rt(r, (2, 3, 4, 4), 0.02, 0.98)
        for b in (b_lo, b_lo + pw.data):
            x.data[np.abs(x.data - b) < 1e-3] += 3e-3
        return [x, ph, pw, px]

    run("gain", gain_fn, gain_tensors)

    def contrast_tensors(r):
        ph = rt(r, (2, 3, 1, 1), 0.3, 0.7)
        pw = rt(r, (2, 3, 1, 1), 0.3, 0.6)
        px = rt(r, (2, 3, 1, 1), 0.4, 0.6)
        b_lo = px.data * (1 - pw.data)
        x = rt(r, (2, 3, 4, 4), 0.02, 0.98)
        for b in (b_lo, b_lo + pw.data):
            x.data[np.abs(x.data - b) < 1e-3] += 3e-3
        return [x, ph, pw, px]

    run("contrast", lambda x, ph, pw, px:
        contrast_stretch(x, ContrastParams(ph=ph, pw=pw, px=px)), contrast_tensors)
    run("tone", lambda x, g1, g2, k: tone_map(x, ToneMapParams(g1=g1, g2=g2, k=k)),
        lambda r: [rt(r, (2, 3, 4, 4), 0.05, 0.95), rt(r, (2, 3, 1, 1), 1.2, 3.0),
                   rt(r, (2, 3, 1, 1), 0.5, 2.0), rt(r, (2, 3, 1, 1), 0.6, 0.95)])
    run("inv_tone", lambda x, g3, g4, k2:
        inv_tone_map(x, InvToneMapParams(g3=g3, g4=g4, k2=k2)),
        lambda r: [rt(r, (2, 3, 4, 4), 0.05, 0.95), rt(r, (2, 3, 1, 1), 1.2, 3.0),
                   rt(r, (2, 3, 1, 1), 0.5, 2.0), rt(r, (2, 3, 1, 1), 0.6, 0.95)])
    run("ccm", lambda x, m: color_correct(x, ColorMatrix(m=m)),
        lambda r: [rt(r, (2, 3, 4, 4), 0.05, 0.95),
                   Tensor(np.eye(3)[None] + r.normal(0, 0.05, (2, 3, 3)),
                          requires_grad=True, dtype=np.float64)])

    # controller decode + state update and the denoiser, checked end to end
    # through their float64-promoted parameters
    layers = build_layer_specs(default_spec_table())
    ctrl = Controller(layers, ControllerConfig(latent_dim=32, seed=0))
    for p in ctrl._params.values():
        p.data = p.data.astype(np.float64)

    def ctrl_fn(v):
        pset = ctrl.decode_params(v, ctrl.layers[0])
        v2 = ctrl.update_state(v, pset, ctrl.layers[0])
        return T.concat([pset.values, v2], axis=1)

    run("controller", ctrl_fn,
        lambda r: [rn(r, (2, 32))], instances=20)

    dn = Denoiser(DenoiserConfig(seed=0))
    for p in dn._params.values():
        p.data = p.data.astype(np.float64)

    # kernel scale and input range chosen so the residual keeps the output
    # strictly inside (0, 1): at the clamp boundary the straight-through
    # estimator deliberately disagrees with finite differences
    run("denoiser", lambda x, k: dn.denoise(x, k),
        lambda r: [rt(r, (1, 3, 8, 8), 0.15, 0.85), rn(r, (1, 12, 3, 3), 0.2)],
        instances=20, eps=1e-6)

    dt = time.time() - t0
    ok = dt < 120
    _verdict(1, "gradient suite (analytic vs finite difference)", ok,
             f"{n_checked[0]} instances across 38 operators, {dt:.1f}s")
    assert ok


def test_criterion_2_operator_invariants():
    # the invariants are algebraic properties of the operator family, so they
    # are checked in float64 where rounding cannot mask (or fake) a violation
    t0 = time.time()
    rng = np.random.default_rng(7)
    n_draws = 500
    grid = np.linspace(0.0, 1.0, 1024, dtype=np.float64)
    x = Tensor(np.broadcast_to(grid, (n_draws, 3, 1, 1024)).copy(), dtype=np.float64)

    def draw(key):
        lo, hi = DEFAULT_RANGES[key]
        return Tensor(rng.uniform(lo, hi, (n_draws, 3, 1, 1)), dtype=np.float64)

    failures = []

    def check(name, out, monotone=True):
        d = out.data
        if d.min() < -1e-6 or d.max() > 1 + 1e-6:
            failures.append(f"{name}: range [{d.min()}, {d.max()}]")
        if np.abs(d[..., 0]).max() > 1e-6 or np.abs(d[..., -1] - 1).max() > 1e-6:
            failures.append(f"{name}: endpoints not fixed")
        if monotone and np.diff(d, axis=-1).min() < -2e-6:
            failures.append(f"{name}: not monotone")

    gp = GainParams(ph=draw("gain.ph"), pw=draw("gain.pw"),
                    px_log10=draw("gain.pxlog"))
    check("gain", gain(x, gp))
    tp_ = ToneMapParams(g1=draw("tone.g1"), g2=draw("tone.g2"), k=draw("tone.k"))
    check("tone", tone_map(x, tp_))
    cp = ContrastParams(ph=draw("contrast.ph"), pw=draw("contrast.pw"),
                        px=draw("contrast.px"))
    check("contrast", contrast_stretch(x, cp))
    ip = InvToneMapParams(g3=draw("invtone.g3"), g4=draw("invtone.g4"),
                          k2=draw("invtone.k2"))
    # the inverse tone curve fixes both endpoints but is allowed to be
    # non-monotone for extreme (g3, g4) draws; only range/endpoints apply
    check("inv_tone", inv_tone_map(x, ip), monotone=False)

    # tone-map identity at g1 = g2 = 1
    ones = Tensor(np.ones((n_draws, 3, 1, 1)), dtype=np.float64)
    ident = tone_map(x, ToneMapParams(g1=ones, g2=ones, k=draw("tone.k")))
    if np.abs(ident.data - x.data).max() > 1e-6:
        failures.append("tone identity at g1=g2=1 broken")

    # breakpoint continuity of the piecewise family: the operator evaluated
    # exactly at both breakpoints must agree with both adjacent segment
    # formulas to 1e-6
    for name, ph, pw, px in (
        ("gain", gp.ph.data, gp.pw.data, 10.0 ** gp.px_log10.data),
        ("contrast", cp.ph.data, cp.pw.data, cp.px.data),
    ):
        ph64, pw64, px64 = ph, pw, px
        b_lo = px64 * (1 - pw64)
        b_hi = b_lo + pw64
        s_out = (1 - ph64) / (1 - pw64)
        s_mid = ph64 / pw64
        fn = gain if name == "gain" else contrast_stretch
        p = gp if name == "gain" else cp
        for b, segs in ((b_lo, (s_out * b_lo,
                                s_out * b_lo)),
                        (b_hi, (s_out * b_hi + (s_mid - s_out) * pw64,
                                s_out * b_hi + (s_mid - s_out) * pw64))):
            xb = Tensor(b.copy(), dtype=np.float64)
            got = fn(xb, p).data
            for want in segs:
                if np.abs(got - want).max() > 1e-6:
                    failures.append(f"{name}: breakpoint discontinuity "
                                    f"{np.abs(got - want).max():.2e}")
                    break

    dt = time.time() - t0
    ok = not failures and dt < 60
    _verdict(2, "operator invariants (500 draws, 1024-point grids)", ok,
             f"{'; '.join(failures) if failures else 'all properties hold'}, {dt:.1f}s")
    assert ok


def test_criterion_3_controller_contracts():
    rng = np.random.default_rng(0)
    layers = build_layer_specs(default_spec_table())
    ctrl = Controller(layers, ControllerConfig(latent_dim=64, seed=0))
    v = Tensor(rng.normal(0, 1, (1000, 64)).astype(np.float32))
    issues = []
    for layer in ctrl.layers:
        vals = ctrl.decode_params(v, layer).values.data
        if not (np.all(vals > layer.pmin) and np.all(vals < layer.pmax)):
            issues.append(f"{layer.name} bounds violated")
    vv = Tensor(rng.normal(0, 1, (32, 64)).astype(np.float32))
    for layer in ctrl.layers:
        pset = ctrl.decode_params(vv, layer)
        v_new = ctrl.update_state(vv, pset, layer)
        if not np.all(np.abs(v_new.data) <= 5.0 * np.abs(vv.data) + 1e-6):
            issues.append(f"{layer.name} attention ceiling violated")
        vv = v_new
    layer = ctrl.layers[0]
    pfx = f"layer.{layer.name}"
    for k in ("key1.w", "key1.b", "key2.w", "key2.b"):
        ctrl._params[f"{pfx}.{k}"].data[:] = 0.0
    v8 = Tensor(rng.normal(0, 1, (8, 64)).astype(np.float32))
    v_new = ctrl.update_state(v8, ctrl.decode_params(v8, layer), layer)
    if not np.allclose(v_new.data, 2.5 * v8.data, rtol=1e-6, atol=1e-6):
        issues.append("zero-key scaling is not exactly 2.5x")
    ok = not issues
    _verdict(3, "controller contracts (1000 latents)", ok,
             "; ".join(issues) if issues else
             "strict bounds, |V_l| <= 5|V_{l-1}|, zero-key = 2.5x")
    assert ok


def test_criterion_4_local_global_consistency():
    cfg = ModelConfig(latent_dim=96, use_projection=False, seed=11)
    model = DynamicIspModel(cfg)
    x = Tensor(np.full((1, 3, 480, 854), 0.37, dtype=np.float32))
    out_g = model.forward(x, local=False).data
    out_l = model.forward(x, local=True).data
    diff = float(np.abs(out_l - out_g).max())
    ok = diff <= 1e-5
    _verdict(4, "local/global consistency at 480P", ok, f"max diff {diff:.2e}")
    assert ok


def test_criterion_5_synthetic_oracle_recovery():
    t0 = time.time()
    x = _oracle_images()
    y = run_pipeline(Tensor(x), _full_oracle_params(), PipelineConfig()).data
    # 16 images, batch 8 -> 2 iterations per epoch -> 2000 iterations
    cfg = _oracle_cfg(epochs=1000, lr_max=5e-3)
    res = train(cfg, x, y)
    model = DynamicIspModel(replace(cfg.model, seed=cfg.seed))
    model.load_state_dict(res.state)
    db = evaluate_psnr(model, x, y)
    dt = time.time() - t0
    ok = not res.failed and db >= 40.0 and dt < 1200
    _verdict(5, "synthetic oracle recovery (2k iterations, batch 8)", ok,
             f"train PSNR {db:.2f} dB, {dt / 60:.1f} min")
    assert ok


def test_criterion_6_search_space_refinement():
    t0 = time.time()
    x, y, hidden, init = _gain_oracle()
    cfg = _oracle_cfg(epochs=250)
    res = atps(cfg, x, y, stages=(3, 2), r=0.7, initial_table=init)
    issues = []
    for name, (lo, hi) in res.table.items():
        ilo, ihi = init[name]
        if not (hi - lo) < (ihi - ilo):
            issues.append(f"{name} not narrower")
        if not lo <= hidden[name] <= hi:
            issues.append(f"{name} lost hidden value "
                          f"({hidden[name]} not in [{lo:.3f}, {hi:.3f}])")

    # degenerate blend r=1 must reproduce the best run's extrema exactly
    cfg1 = _oracle_cfg(epochs=50, seed=23)
    res1 = atps(cfg1, x, y, stages=(2,), r=1.0, initial_table=init)
    viable = [t_ for t_ in res1.stage_results[0] if not t_.failed]
    best = min(viable, key=lambda t_: t_.final_epoch_loss)
    for name, (lo, hi) in res1.table.items():
        ulo, uhi = best.used_params[name]
        if abs(lo - ulo) > 1e-12 or abs(hi - uhi) > 1e-12:
            issues.append(f"r=1 case not exact for {name}")

    dt = time.time() - t0
    ok = not issues
    detail = "; ".join(issues[:4]) if issues else \
        "all 9 refined intervals narrowed and contain the hidden values; r=1 exact"
    _verdict(6, "search-space refinement (S=2, T=[3,2])", ok,
             f"{detail}, {dt / 60:.1f} min")
    assert ok


def test_criterion_7_denoiser_staging():
    t0 = time.time()
    rng = np.random.default_rng(77)
    from scipy.ndimage import gaussian_filter

    clean = rng.uniform(0.05, 0.95, (16, 3, 48, 48)).astype(np.float32)
    clean = gaussian_filter(clean, sigma=(0, 0, 1.5, 1.5)).astype(np.float32)
    y = run_pipeline(Tensor(clean), _full_oracle_params(), PipelineConfig()).data
    x = np.clip(clean + rng.normal(0, 0.05, clean.shape), 0, 1).astype(np.float32)

    mc = ModelConfig(encoder=EncoderConfig(input_resolution=32, seed=0),
                     latent_dim=64, use_denoiser=True)
    cfg = _oracle_cfg(model=mc, epochs=200, seed=9, lambda_local=0.01)

    staged = staged_denoiser_training(cfg, x, y, atps_stages=(1,),
                                      stage_b_epochs=150, stage_c_epochs=100)
    m_staged = DynamicIspModel(replace(mc, seed=cfg.seed))
    m_staged.set_spec_table(staged.table)
    m_staged.load_state_dict(staged.model_state)

    # joint-from-scratch reference with a comparable iteration budget and no
    # color constraint
    joint = train(replace(cfg, epochs=450, lambda_local=0.0), x, y)
    m_joint = DynamicIspModel(replace(mc, seed=cfg.seed))
    m_joint.load_state_dict(joint.state)

    def mean_ll1(model):
        vals = []
        for s in range(0, 16, 8):
            aux = {}
            model.forward(Tensor(x[s:s + 8]), aux=aux)
            vals.append(local_l1(aux["dn_input"], aux["denoised"]).item())
        return float(np.mean(vals))

    ps = evaluate_psnr(m_staged, x, y)
    pj = evaluate_psnr(m_joint, x, y)
    ll_s, ll_j = mean_ll1(m_staged), mean_ll1(m_joint)
    dt = time.time() - t0
    ok = ps >= pj - 0.1 and ll_s < ll_j and dt < 2400
    _verdict(7, "staged denoiser training (sigma=0.05)", ok,
             f"staged {ps:.2f} dB vs joint {pj:.2f} dB; "
             f"local-L1 {ll_s:.4f} vs {ll_j:.4f}; {dt / 60:.1f} min")
    assert ok


def test_criterion_8_runtime_ratio():
    model = DynamicIspModel(ModelConfig(seed=0))
    x = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 2160, 3840))
               .astype(np.float32))
    times = {}
    for mode in (False, True):
        model.forward(x, local=mode)  # warmup
        samples = []
        for _ in range(5):
            t0 = time.perf_counter()
            model.forward(x, local=mode)
            samples.append(time.perf_counter() - t0)
        # min is the usual noise-robust latency estimator: scheduling stalls
        # only ever inflate a sample
        times[mode] = float(np.min(samples))
    ratio = times[True] / times[False]
    ok = ratio <= 4.0
    _verdict(8, "4K local/global runtime ratio", ok,
             f"global {times[False] * 1000:.0f} ms, local {times[True] * 1000:.0f} ms, "
             f"ratio {ratio:.2f} (budget 4.0)")
    assert ok


def test_criterion_9_metrics_oracle():
    a = np.tile(np.array([0.1, 0.2, 0.3, 0.4]), (4, 1))
    b = a + 0.1
    issues = []
    # by hand: MSE = 0.01 -> 20 dB exactly
    if psnr(np.zeros((8, 8)), np.full((8, 8), 0.1)) != 20.0:
        issues.append("PSNR of MSE 0.01 is not exactly 20 dB")
    if abs(psnr(a, b) - 20.0) > 1e-6:
        issues.append("4x4 PSNR oracle off")
    # by hand: mu_a=0.25, mu_b=0.35, var=cov=0.0125 ->
    # ssim = (0.1751 * 0.0259) / (0.1851 * 0.0259) = 0.9459751...
    want = 0.1751 / 0.1851
    if abs(ssim(a, b) - want) > 1e-4:
        issues.append(f"4x4 SSIM oracle off: {ssim(a, b):.6f} vs {want:.6f}")
    if ssim(a, a.copy()) != 1.0:
        issues.append("SSIM of identical images is not 1")
    ok = not issues
    _verdict(9, "metrics oracle (hand-computed 4x4 values)", ok,
             "; ".join(issues) if issues else
             f"PSNR exact, SSIM {ssim(a, b):.6f} = 1751/1851")
    assert ok
