"""One test per acceptance criterion; each records a PASS/FAIL line shown in the run summary."""

import time

import numpy as np
import pytest
from scipy import ndimage

from conftest import ACCEPTANCE_LINES
from crispedge import functional as F
from crispedge import tensor as T
from crispedge.classic import canny, gradient_magnitude
from crispedge.config import RunConfig
from crispedge.data import AugmentConfig, gen_synthetic
from crispedge.evaluation import MatchCounts, correspond, evaluate, morphological_thin
from crispedge.gradcheck import grad_check
from crispedge.losses import LOSSES, LossConfig, focal_tversky_loss, hybrid_focal_loss
from crispedge.network import BRM, SDMCM, laplacian_layer
from crispedge.nn import BatchNorm2d, CondConv2d
from crispedge.tensor import Tensor
from crispedge.train import train
from oracles import brute_force_matching, has_full_2x2, naive_conv2d


def record(number, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ------------------------------------------------------------ 1 gradients

def _operator_cases(rng):
    """``{name: (f, x)}`` with every input at most 2x4x8x8 in activation size."""
    t = lambda *s: Tensor(rng.normal(size=s))
    c = lambda *s: rng.normal(size=s)
    act = (2, 4, 8, 8)
    cases = {}

    for d in (1, 2, 3):
        for groups in (1, 4):
            x, w, k = t(*act), t(4, 4 // groups, 3, 3), c(*act)
            cases[f"conv2d d={d} groups={groups} (input)"] = (
                lambda v, w=w, d=d, g=groups, k=k: T.tsum(F.conv2d(v, w, None, 1, d, d, g) * k), x)
            cases[f"conv2d d={d} groups={groups} (weight)"] = (
                lambda v, x=x, d=d, g=groups, k=k: T.tsum(F.conv2d(x, v, None, 1, d, d, g) * k), w)
    xs, ws, ks = t(2, 3, 8, 8), t(2, 3, 3, 3), c(2, 2, 4, 4)
    cases["conv2d stride 2 (bias)"] = (lambda v: T.tsum(F.conv2d(xs, ws, v, 2, 1) * ks), t(2))
    kp = c(2, 3, 8, 8)
    cases["conv2d per-sample kernels"] = (lambda v: T.tsum(F.conv2d(xs, v, None, 1, 1) * kp), t(2, 3, 3, 3, 3))

    for training in (True, False):
        bn = BatchNorm2d(4)
        bn.running_var = np.full(4, 1.5)
        bn.training = training
        k = c(*act)
        cases[f"batchnorm training={training}"] = (lambda v, bn=bn, k=k: T.tsum(bn(v) * k), t(*act))

    k = c(*act)
    away = Tensor(np.sign(rng.normal(size=act)) * rng.uniform(0.1, 1.0, size=act))
    cases["relu"] = (lambda v: T.tsum(F.relu(v) * k), away)
    cases["sigmoid"] = (lambda v: T.tsum(F.sigmoid(v) * k), t(*act))
    cases["upsample x2"] = (lambda v: T.tsum(F.upsample_bilinear(v, 2) * k), t(2, 4, 4, 4))
    wf, kf = Tensor(c(3, 4)), c(2, 3)
    cases["global pool + fc"] = (
        lambda v: T.tsum(F.fully_connected(F.flatten(F.global_avg_pool(v)), wf) * kf), t(*act))
    kc = c(2, 8, 8, 8)
    cases["concat"] = (lambda v: T.tsum(F.concat_channels([v, v * 2.0]) * kc), t(*act))
    cases["add/mul"] = (lambda v: T.tsum(F.add(v, v * v) * k), t(*act))
    cases["log/power/div/clip"] = (
        lambda v: T.tsum(T.log(v) + T.power(v, 0.75) + 1.0 / v + T.clip(v, 0.3, 0.7) * v),
        Tensor(rng.uniform(0.1, 0.9, size=act)))
    wm = Tensor(c(32, 3))
    cases["matmul/reshape/mean"] = (lambda v: T.mean(T.matmul(v.reshape(16, 32), wm) ** 2.0), t(*act))
    cases["laplacian layer"] = (lambda v: T.tsum(laplacian_layer(v) * k), t(*act))

    cc, xc = CondConv2d(rng, 4, 4, 3, 4), t(*act)
    cases["condconv (input)"] = (lambda v: T.tsum(cc(v) * k), t(*act))
    cases["condconv (experts)"] = (lambda v: T.tsum(cc(xc) * k), cc.experts)
    sd, xd = SDMCM(rng, 8, 0.25, ((1,), (1, 2), (1, 2, 3), (1, 2, 3, 3))), t(1, 8, 8, 8)
    kd = c(1, sd.out_channels, 8, 8)
    cases["sdmcm"] = (lambda v: T.tsum(sd(v) * kd), xd)
    brm = BRM(rng, 4, 4, 4)
    kb = c(*act)
    cases["brm"] = (lambda v: T.tsum(brm(v) * kb), t(*act))
    return cases


def test_criterion_1_gradient_suite():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    cases = _operator_cases(rng)
    op_worst, op_name = 0.0, ""
    for name, (fn, x) in cases.items():
        err = grad_check(fn, x)
        if err >= op_worst:
            op_worst, op_name = err, name

    g = (rng.random((2, 1, 8, 8)) < 0.2).astype(float)
    p = Tensor(rng.uniform(0.05, 0.95, size=(2, 1, 8, 8)))
    loss_worst = max(grad_check(lambda v, f=f: f(v, g, LossConfig()), p) for f in LOSSES.values())
    runtime = time.perf_counter() - t0
    ok = op_worst < 1e-4 and loss_worst < 1e-5 and runtime < 120
    record(1, ok, f"{len(cases)} operator checks max rel err {op_worst:.2e} ({op_name}), "
                  f"4 losses max {loss_worst:.2e}, {runtime:.1f}s")


# ------------------------------------------------------- 2 conv oracle

def test_criterion_2_conv_oracle():
    rng = np.random.default_rng(77)
    worst, seen = 0.0, set()
    for i in range(50):
        dilation = 1 + i % 3
        depthwise = (i // 3) % 2 == 1
        cin = int(rng.integers(1, 5))
        groups = cin if depthwise else 1
        cout = cin * int(rng.integers(1, 3)) if depthwise else int(rng.integers(1, 5))
        k = int(rng.choice([1, 2, 3]))
        stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 3))
        extent = dilation * (k - 1) + 1
        h = int(rng.integers(max(extent - 2 * padding, 1), 10))
        w = int(rng.integers(max(extent - 2 * padding, 1), 10))
        x = rng.normal(size=(int(rng.integers(1, 3)), cin, h, w))
        wt = rng.normal(size=(cout, cin // groups, k, k))
        b = rng.normal(size=cout)
        got = F.conv2d(Tensor(x), Tensor(wt), Tensor(b), stride, padding, dilation, groups).data
        want = naive_conv2d(x, wt, b, stride, padding, dilation, groups)
        assert got.shape == want.shape
        worst = max(worst, float(np.abs(got - want).max()))
        seen.add((dilation, "cin" if depthwise else 1))
    record(2, worst <= 1e-10 and len(seen) == 6, f"50 configs, {len(seen)} (dilation, groups) kinds, max abs diff {worst:.1e}")


# ------------------------------------------------------ 3 loss goldens

def test_criterion_3_loss_golden_values():
    g = np.zeros((1, 1, 6, 6))
    g[0, 0, 2, 1:5] = 1.0
    perfect = focal_tversky_loss(Tensor(g.copy()), g).item()

    # one pixel, p=0.8 on an edge: squared FN term 0.04 weighted by beta=0.7
    single = focal_tversky_loss(Tensor(np.array([[0.8]])), np.array([[1.0]])).item()
    one_fp = g.copy()
    one_fp[0, 0, 5, 5] = 1.0
    ft_up = focal_tversky_loss(Tensor(one_fp), g).item() > perfect
    hfl_up = hybrid_focal_loss(Tensor(one_fp), g).item() > hybrid_focal_loss(Tensor(g.copy()), g).item()
    ok = abs(perfect - 1.0) <= 1e-9 and abs(single - 1.035 ** 0.75) <= 1e-5 and ft_up and hfl_up
    record(3, ok, f"perfect L_FT={perfect:.10f}, single={single:.6f}, FP increases FT/HFL: {ft_up}/{hfl_up}")


# ------------------------------------------------------ 4 matching / ODS

def _pick(rng, h, w, k):
    m = np.zeros(h * w, bool)
    m[rng.choice(h * w, size=min(k, h * w), replace=False)] = True
    return m.reshape(h, w)


def test_criterion_4_matching_and_summary_metrics():
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(500):
        h, w = (int(v) for v in rng.integers(1, 9, size=2))
        pred, gt = _pick(rng, h, w, int(rng.integers(0, 6))), _pick(rng, h, w, int(rng.integers(0, 6)))
        tol = float(rng.choice([0.0, 1.0, 1.5, 2.0, 3.0]))
        best = brute_force_matching(np.argwhere(pred), np.argwhere(gt), tol)
        got = correspond(pred, [gt], tol)
        mismatches += got != MatchCounts(best, int(pred.sum()) - best, int(gt.sum()) - best)

    ois_violations = 0
    for _ in range(100):
        n = int(rng.integers(1, 4))
        gts = [[_pick(rng, 16, 16, int(rng.integers(1, 30)))] for _ in range(n)]
        preds = [np.clip(ndimage.gaussian_filter(g[0].astype(float), 0.7) * 2.5 + rng.random((16, 16)) * 0.3, 0, 1)
                 for g in gts]
        rep = evaluate(preds, gts, "c-eval", np.linspace(0.05, 0.95, 10), tol_px=1.0)
        ois_violations += rep.ois_f < rep.ods_f

    perfect = []
    for mode in ("s-eval", "c-eval"):
        pairs = gen_synthetic(3, 64, 8)
        rep = evaluate([p.gt[0].astype(float) for p in pairs], [p.gt for p in pairs], mode)
        perfect.append((rep.ods_f, rep.ois_f, rep.ap))
    perfect_ok = all(v == 1.0 for trio in perfect for v in trio)
    record(4, mismatches == 0 and ois_violations == 0 and perfect_ok,
           f"matching mismatches {mismatches}/500, OIS<ODS in {ois_violations}/100 datasets, "
           f"perfect (ODS,OIS,AP) S/C = {perfect}")


# ---------------------------------------------------------- 5 morphology

def test_criterion_5_thin_outputs():
    corpus = gen_synthetic(30, 64, 5)
    blocks_thin = blocks_canny = not_idempotent = 0
    for pair in corpus:
        gray = pair.image.mean(axis=0)
        mask = gradient_magnitude(gray, "sobel") >= 0.15
        thin = morphological_thin(mask)
        blocks_thin += has_full_2x2(thin)
        not_idempotent += not np.array_equal(morphological_thin(thin), thin)
        blocks_canny += has_full_2x2(canny(gray))
    record(5, blocks_thin == blocks_canny == not_idempotent == 0,
           f"30 images: 2x2 blocks thin={blocks_thin} canny={blocks_canny}, non-idempotent thinning={not_idempotent}")


# ---------------------------------------------------------- 6 crispness

def test_criterion_6_crispness_separation():
    pairs = gen_synthetic(10, 64, 6)
    gts = [p.gt for p in pairs]
    # 3-px width: the thin map grown by one pixel on each side
    thick = [ndimage.binary_dilation(p.gt[0], structure=np.ones((3, 3), bool)).astype(float) for p in pairs]
    s = evaluate(thick, gts, "s-eval").ods_f
    c = evaluate(thick, gts, "c-eval").ods_f
    record(6, c < s, f"dilated perfect prediction C-Eval ODS {c:.4f} < S-Eval ODS {s:.4f}")


# ---------------------------------------------------- 7/8 desk-scale training

DESK_EPOCHS = 40


def desk_config(loss="hfl", derivative="laplacian") -> RunConfig:
    cfg = RunConfig()
    cfg.net.derivative = derivative
    cfg.loss.name = loss
    cfg.train.epochs = DESK_EPOCHS
    cfg.train.lr = 1e-3
    cfg.train.lr_step = 15
    # score once, after the last epoch
    cfg.train.eval_every = DESK_EPOCHS
    cfg.data.augment = AugmentConfig(crop_size=(40, 40))
    return cfg


@pytest.fixture(scope="module")
def desk_runs():
    train_set, held_out = gen_synthetic(200, 64, 0), gen_synthetic(50, 64, 1)
    runs = {}
    for name, cfg in (("hfl", desk_config()), ("wce", desk_config(loss="wce")),
                      ("no-laplacian", desk_config(derivative="none"))):
        t0 = time.perf_counter()
        res = train(cfg, train_set, held_out)
        runs[name] = (res.history[-1].val_ods, time.perf_counter() - t0)
        print(f"desk run {name}: C-Eval ODS {runs[name][0]:.4f} in {runs[name][1]:.0f}s")
    return runs


@pytest.mark.slow
def test_criterion_7_desk_training(desk_runs):
    (hfl, seconds), (wce, _) = desk_runs["hfl"], desk_runs["wce"]
    ok = hfl >= 0.75 and hfl > wce and seconds < 20 * 60
    record(7, ok, f"HFL C-Eval ODS {hfl:.4f} (floor 0.75) vs WCE {wce:.4f}, HFL run {seconds / 60:.1f} min")


@pytest.mark.slow
def test_criterion_8_ablation_direction(desk_runs):
    full, wce, no_lap = (desk_runs[k][0] for k in ("hfl", "wce", "no-laplacian"))
    ok = no_lap <= full and wce <= full
    record(8, ok, f"full {full:.4f}, without Laplacian path {no_lap:.4f}, with WCE {wce:.4f}")
