"""Acceptance gate: one test per shipping criterion, one verdict line each.

Every test prints `acceptance N PASS/FAIL: <measured numbers>` directly to the
terminal (bypassing capture) and then asserts, so the printed verdict always
matches the pytest outcome. Criteria 1 and 8 do real work (a finite-difference
sweep and two desk-scale training runs) and dominate the suite's runtime.
"""

import math
import os
import time

import numpy as np
import pytest

from test_ops import ceil_same_pads, naive_conv2d

from polypseg.convops import ConvSpec, conv2d
from polypseg.data import split_dataset
from polypseg.layers import ParamRegistry, param_count
from polypseg.losses import (
    FocalParams,
    LossWeights,
    bce_loss,
    dice_loss,
    focal_loss,
    hybrid_loss,
)
from polypseg.metrics import compute_metrics, confusion_counts, xor_error_map
from polypseg.mspp import Mspp, MsppConfig
from polypseg.network import Model, ModelConfig
from polypseg.paab import Paab, paab_refine
from polypseg.synth import SynthConfig, generate_sample
from polypseg.tensor import Tensor
from polypseg.trainer import (
    ScheduleState,
    TrainConfig,
    evaluate,
    plateau_step,
    train,
)
from polypseg.verification import (
    FULL_MODEL_BOUND,
    PER_OP_BOUND,
    full_model_check,
    per_op_checks,
)


def _verdict(capsys, num: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\nacceptance {num} {'PASS' if ok else 'FAIL'}: {detail}")


def test_1_gradient_suite(capsys):
    tic = time.monotonic()
    per_op = list(per_op_checks())
    worst_name, worst_err = max(((n, e) for n, e, _ in per_op), key=lambda t: t[1])
    model_err, model_bound = full_model_check(size=32, sample=40)
    elapsed = time.monotonic() - tic
    ok = (worst_err <= PER_OP_BOUND and model_err <= model_bound and elapsed <= 300.0)
    _verdict(capsys, 1, ok,
             f"per-op worst {worst_err:.2e} ({worst_name}) <= {PER_OP_BOUND:.0e}; "
             f"full model 1x3x32x32 {model_err:.2e} <= {model_bound:.0e}; "
             f"{elapsed:.0f}s <= 300s")
    for name, err, bound in per_op:
        assert err <= bound, f"{name}: {err} > {bound}"
    assert model_err <= model_bound
    assert elapsed <= 300.0


def test_2_convolution_oracles(capsys):
    rng = np.random.default_rng(2024)
    worst_sep = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 3))
        c_in = int(rng.integers(2, 5))
        c_out = int(rng.integers(2, 7))
        h, w = int(rng.integers(5, 10)), int(rng.integers(5, 10))
        k = int(rng.choice((3, 5)))
        stride = int(rng.choice((1, 2)))
        x = rng.normal(size=(n, c_in, h, w))
        dw = rng.normal(size=(c_in, 1, k, k))
        pw = rng.normal(size=(c_out, c_in, 1, 1))
        b = rng.normal(size=c_out)
        mid = conv2d(Tensor(x), Tensor(dw), None,
                     ConvSpec(k, k, stride=stride, groups=c_in))
        got = conv2d(mid, Tensor(pw), Tensor(b), ConvSpec(1, 1)).data
        pads_h = ceil_same_pads(h, k, stride, 1)
        pads_w = ceil_same_pads(w, k, stride, 1)
        ref = naive_conv2d(x, dw, None, stride=stride, groups=c_in,
                           pads=(*pads_h, *pads_w))
        ref = naive_conv2d(ref, pw, b)
        worst_sep = max(worst_sep, float(np.abs(got - ref).max()))

    worst_dil = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 3))
        c_in = int(rng.integers(1, 4))
        c_out = int(rng.integers(1, 5))
        k = int(rng.choice((3, 5)))
        d = int(rng.integers(2, 5))
        span = (k - 1) * d + 1
        h = int(rng.integers(span, span + 6))
        w = int(rng.integers(span, span + 6))
        x = rng.normal(size=(n, c_in, h, w))
        wt = rng.normal(size=(c_out, c_in, k, k))
        b = rng.normal(size=c_out)
        inflated = np.zeros((c_out, c_in, span, span))
        inflated[:, :, ::d, ::d] = wt
        got = conv2d(Tensor(x), Tensor(wt), Tensor(b),
                     ConvSpec(k, k, dilation=d)).data
        ref = conv2d(Tensor(x), Tensor(inflated), Tensor(b),
                     ConvSpec(span, span)).data
        worst_dil = max(worst_dil, float(np.abs(got - ref).max()))

    ok = worst_sep <= 1e-6 and worst_dil <= 1e-6
    _verdict(capsys, 2, ok,
             f"separable vs naive composition {worst_sep:.2e} <= 1e-6; "
             f"dilated vs zero-inflated kernel {worst_dil:.2e} <= 1e-6 "
             f"(50 random cases each)")
    assert worst_sep <= 1e-6
    assert worst_dil <= 1e-6


def test_3_attention_identities(capsys):
    rng = np.random.default_rng(3)
    paab = Paab(ParamRegistry(), "paab", 8, rng, np.float64)
    feats = Tensor(rng.normal(size=(2, 8, 7, 9)))

    spatial = paab.spatial_map(feats)
    channel = paab.channel_map(feats)
    refined = paab(feats).data
    factored = feats.data * (spatial.data + channel.data)
    distrib_err = float(np.abs(refined - factored).max())

    ones_s = Tensor(np.ones((2, 1, 7, 9)))
    ones_c = Tensor(np.ones((2, 8, 1, 1)))
    doubled_exact = bool(np.array_equal(paab_refine(feats, ones_s, ones_c).data,
                                        2.0 * feats.data))

    perm = rng.permutation(7 * 9)
    permuted = feats.data.reshape(2, 8, -1)[:, :, perm].reshape(2, 8, 7, 9)
    perm_exact = bool(np.array_equal(channel.data,
                                     paab.channel_map(Tensor(permuted)).data))

    ok = distrib_err <= 1e-12 and doubled_exact and perm_exact
    _verdict(capsys, 3, ok,
             f"refine vs F*(Ms+Mc) {distrib_err:.2e} <= 1e-12; "
             f"unit maps double features exactly: {doubled_exact}; "
             f"channel gate spatial-permutation invariant exactly: {perm_exact}")
    assert distrib_err <= 1e-12
    assert doubled_exact
    assert perm_exact


def test_4_pyramid_contract(capsys):
    rng = np.random.default_rng(4)
    config = MsppConfig(in_channels=8, branch_channels=8, out_channels=16)
    mspp = Mspp(ParamRegistry(), "mspp", config, rng, np.float32)
    spatial_ok = True
    concat_channels = None
    for size in (16, 32, 64):
        x = Tensor(rng.normal(size=(1, 8, size, size)).astype(np.float32))
        branches = mspp.branch_outputs(x)
        concat_channels = sum(b.data.shape[1] for b in branches)
        out = mspp(x)
        spatial_ok = spatial_ok and out.data.shape[2:] == (size, size)
        spatial_ok = spatial_ok and all(b.data.shape[2:] == (size, size) for b in branches)

    full_params = param_count(Model(ModelConfig(variant="full", input_size=64)).registry)
    nopaab_params = param_count(Model(ModelConfig(variant="no_paab", input_size=64)).registry)

    channels_ok = concat_channels == 9 * config.branch_channels
    params_ok = nopaab_params < full_params
    ok = spatial_ok and channels_ok and params_ok
    _verdict(capsys, 4, ok,
             f"spatial dims preserved at 16/32/64: {spatial_ok}; "
             f"concat channels {concat_channels} == 9*{config.branch_channels}; "
             f"no_paab {nopaab_params} < full {full_params} params")
    assert spatial_ok
    assert channels_ok
    assert params_ok


def test_5_loss_identities(capsys):
    rng = np.random.default_rng(5)
    pred = Tensor(rng.uniform(0.02, 0.98, size=(2, 1, 8, 8)))
    target = Tensor((rng.random((2, 1, 8, 8)) > 0.5).astype(np.float64))
    weights = LossWeights(alpha=0.7, beta=1.3, gamma=0.45)
    focal = FocalParams()

    combined = hybrid_loss(pred, target, weights, focal).data
    parts = (weights.alpha * dice_loss(pred, target).data
             + weights.beta * bce_loss(pred, target).data
             + weights.gamma * focal_loss(pred, target, focal).data)
    linear_err = float(abs(combined - parts))

    focal_as_bce = focal_loss(pred, target, FocalParams(balance=1.0, focusing=0.0)).data
    bce_exact = bool(np.array_equal(focal_as_bce, bce_loss(pred, target).data))

    perfect = float(dice_loss(target, target).data)

    one_px_p = Tensor(np.full((1, 1, 1, 1), 0.5))
    one_px_t = Tensor(np.ones((1, 1, 1, 1)))
    bce_err = abs(float(bce_loss(one_px_p, one_px_t).data) - math.log(2.0))
    focal_err = abs(float(focal_loss(one_px_p, one_px_t, FocalParams()).data)
                    - 0.25 * 0.25 * math.log(2.0))

    ok = (linear_err <= 1e-12 and bce_exact and perfect == 0.0
          and bce_err <= 1e-9 and focal_err <= 1e-9)
    _verdict(capsys, 5, ok,
             f"hybrid linearity {linear_err:.2e} <= 1e-12; "
             f"focal(0,1) == bce exactly: {bce_exact}; perfect dice == {perfect}; "
             f"single pixel ln2 err {bce_err:.2e}, 0.25*0.25*ln2 err {focal_err:.2e} <= 1e-9")
    assert linear_err <= 1e-12
    assert bce_exact
    assert perfect == 0.0
    assert bce_err <= 1e-9
    assert focal_err <= 1e-9


def test_6_metric_identities(capsys):
    rng = np.random.default_rng(6)
    worst_miou = 0.0
    worst_hmean = 0.0
    xor_exact = True
    for _ in range(1000):
        pred = (rng.random((16, 16)) > rng.uniform(0.2, 0.8)).astype(np.uint8)
        gt = (rng.random((16, 16)) > rng.uniform(0.2, 0.8)).astype(np.uint8)
        counts = confusion_counts(pred, gt)
        rep = compute_metrics(counts)
        worst_miou = max(worst_miou,
                         abs(rep.dice - 2.0 * rep.miou / (1.0 + rep.miou)))
        pr = rep.precision + rep.recall
        hmean = 0.0 if pr == 0.0 else 2.0 * rep.precision * rep.recall / pr
        worst_hmean = max(worst_hmean, abs(rep.dice - hmean))
        xor_exact = xor_exact and int(xor_error_map(pred, gt).sum()) == counts.fp + counts.fn

    ok = worst_miou <= 1e-12 and worst_hmean <= 1e-12 and xor_exact
    _verdict(capsys, 6, ok,
             f"dice vs 2*miou/(1+miou) {worst_miou:.2e} <= 1e-12; "
             f"dice vs harmonic(precision, recall) {worst_hmean:.2e} <= 1e-12; "
             f"xor population == fp+fn exactly: {xor_exact} (1000 pairs)")
    assert worst_miou <= 1e-12
    assert worst_hmean <= 1e-12
    assert xor_exact


def test_7_schedule_exactness(capsys):
    state = ScheduleState(lr=1e-4)
    plateau_step(state, 1.0)  # first value always improves on +inf
    events = []
    for step in range(1, 21):  # twenty consecutive non-improving epochs
        lr, stop = plateau_step(state, 1.0)
        events.append((step, lr, stop))

    drop_steps = [s for s, lr, _ in events if lr != 1e-4]
    stop_steps = [s for s, _, stop in events if stop]
    drop_ok = bool(drop_steps) and drop_steps[0] == 15 and events[14][1] == 1e-5
    stop_ok = stop_steps == [20]
    held_ok = all(lr == 1e-4 for s, lr, _ in events[:14])

    ok = drop_ok and stop_ok and held_ok
    _verdict(capsys, 7, ok,
             f"lr held at 1e-4 through 14 stale epochs: {held_ok}; "
             f"dropped to 1e-5 exactly at the 15th: {drop_ok}; "
             f"stopped exactly at the 20th: {stop_ok}")
    assert held_ok
    assert drop_ok
    assert stop_ok


def test_8_desk_scale_convergence(capsys):
    tic = time.monotonic()
    samples = [generate_sample(42 + i, SynthConfig(size=64)) for i in range(200)]
    train_s, val_s, test_s = split_dataset(samples, seed=42)
    assert (len(train_s), len(val_s), len(test_s)) == (160, 20, 20)

    scores = {}
    for variant in ("full", "no_mspp"):
        model = Model(ModelConfig(variant=variant, input_size=64, seed=42))
        model, history = train(model, {"train": train_s, "val": val_s},
                               TrainConfig(epochs=60, seed=42))
        macro, _ = evaluate(model, test_s)
        scores[variant] = (max(r.val_dice for r in history), macro.dice)
    elapsed = time.monotonic() - tic

    best_val, full_test = scores["full"]
    ablated_test = scores["no_mspp"][1]
    ok = best_val >= 0.90 and full_test >= 0.88 and ablated_test < full_test
    _verdict(capsys, 8, ok,
             f"full: best val dice {best_val:.4f} >= 0.90, test dice {full_test:.4f} "
             f">= 0.88; no_mspp test dice {ablated_test:.4f} < full; "
             f"{elapsed / 60:.1f} min wall (single core)")
    assert best_val >= 0.90
    assert full_test >= 0.88
    assert ablated_test < full_test


def test_9_determinism_and_persistence(capsys, tmp_path):
    samples = [generate_sample(7 + i, SynthConfig(size=32)) for i in range(12)]
    train_s, val_s, _ = split_dataset(samples, seed=7)
    datasets = {"train": train_s, "val": val_s}
    config = ModelConfig(variant="full", input_size=32, seed=11)

    ckpts = []
    for run in ("a", "b"):
        path = str(tmp_path / f"run_{run}.ckpt")
        train(Model(config), datasets,
              TrainConfig(epochs=2, seed=11, checkpoint_path=path))
        ckpts.append(open(path, "rb").read())
    bitwise_ok = ckpts[0] == ckpts[1]

    _, straight = train(Model(config), datasets, TrainConfig(epochs=3, seed=11))
    part_path = str(tmp_path / "partial.ckpt")
    train(Model(config), datasets,
          TrainConfig(epochs=2, seed=11, checkpoint_path=part_path))
    resumed_model = Model(config)
    _, resumed = train(resumed_model, datasets, TrainConfig(epochs=3, seed=11),
                       resume_from=part_path)
    resume_err = 0.0
    for rec in resumed:
        ref = next(r for r in straight if r.epoch == rec.epoch)
        resume_err = max(resume_err,
                         abs(rec.train_loss - ref.train_loss),
                         abs(rec.val_loss - ref.val_loss))
    resume_ok = bool(resumed) and resume_err <= 1e-6

    ok = bitwise_ok and resume_ok
    _verdict(capsys, 9, ok,
             f"same seed/config checkpoints bitwise identical: {bitwise_ok} "
             f"({len(ckpts[0])} bytes); resume vs uninterrupted loss gap "
             f"{resume_err:.2e} <= 1e-6")
    assert bitwise_ok
    assert resume_ok
