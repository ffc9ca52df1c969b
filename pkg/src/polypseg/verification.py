"""Gradient verification suite shared by the CLI and the acceptance tests.

Per-op checks perturb every coordinate of small float64 tensors across many
seeds. The whole-model check builds the full variant at 64-bit, composes it
with the hybrid loss, and checks a seeded subsample of coordinates from every
parameter tensor (exhaustive checking of a few hundred thousand coordinates
would blow the time budget without adding coverage).

Inputs that feed kinked or selecting ops (relu, max pools) are drawn from
shuffled distinct grids so no coordinate sits within the finite-difference
step of a kink or a tie.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .convops import (
    ConvSpec,
    channel_pool,
    conv2d,
    global_pool,
    pool2d,
    upsample_bilinear,
)
from .gradcheck import grad_check
from .losses import hybrid_loss
from .network import Model, ModelConfig
from .tensor import Tensor

PER_OP_BOUND = 1e-4
FULL_MODEL_BOUND = 1e-3


def _t(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _distinct(rng, shape, step=0.1):
    """Shuffled distinct values with gaps of `step`, centered near zero and
    never exactly zero: safe under +/- 1e-5 perturbation for max/relu."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) + 0.5) * step
    return Tensor((vals - vals.mean()).reshape(shape), requires_grad=True)


def _weighted(rng, shape):
    w = Tensor(rng.normal(size=shape))
    return lambda out: T.tmean(T.mul(out, w))


def _op_cases(rng):
    """Yield (name, fn, inputs) triples; fn(*inputs) is scalar."""
    a = _t(rng, (2, 3, 4))
    b = _t(rng, (2, 3, 4), lo=0.5, hi=2.0)
    bc = _t(rng, (1, 3, 1))
    w4 = _weighted(rng, (2, 3, 4))
    yield "add", lambda u, v: w4(T.add(u, v)), [a, b]
    yield "sub", lambda u, v: w4(T.sub(u, v)), [a, b]
    yield "mul", lambda u, v: w4(T.mul(u, v)), [a, b]
    yield "div", lambda u, v: w4(T.div(u, v)), [a, b]
    yield "add_broadcast", lambda u, v: w4(T.add(u, v)), [a, bc]
    yield "mul_broadcast", lambda u, v: w4(T.mul(u, v)), [a, bc]
    yield "neg", lambda u: w4(T.neg(u)), [a]
    yield "pow", lambda u: w4(T.pow_scalar(u, 2.5)), [b]
    yield "log", lambda u: w4(T.log(u)), [b]
    yield "sigmoid", lambda u: w4(T.sigmoid(u)), [a]

    k = _distinct(rng, (2, 3, 4))
    yield "relu", lambda u: w4(T.relu(u)), [k]
    yield "clamp", lambda u: w4(T.clamp(u, -0.52, 0.48)), [k]

    x2 = _t(rng, (3, 4))
    dw = _t(rng, (2, 4))
    db = _t(rng, (2,))
    wd = _weighted(rng, (3, 2))
    yield "dense", lambda u, v, c: wd(T.dense(u, v, c)), [x2, dw, db]
    yield "reshape", lambda u: wd(T.reshape(u, (3, 2))), [_t(rng, (2, 3))]
    ca = _t(rng, (2, 2, 3, 3))
    cb = _t(rng, (2, 1, 3, 3))
    wc = _weighted(rng, (2, 3, 3, 3))
    yield "concat", lambda u, v: wc(T.concat([u, v], axis=1)), [ca, cb]
    yield "sum", lambda u: T.tsum(T.mul(u, u)), [a]
    yield "mean", lambda u: T.tmean(T.mul(u, u)), [a]

    xc = _t(rng, (1, 2, 6, 6))
    w33 = _t(rng, (3, 2, 3, 3))
    b3 = _t(rng, (3,))
    wo = _weighted(rng, (1, 3, 6, 6))
    yield "conv2d", lambda u, v, c: wo(conv2d(u, v, c, ConvSpec(3, 3))), [xc, w33, b3]
    wo3 = _weighted(rng, (1, 3, 3, 3))
    yield "conv2d_stride2", (
        lambda u, v: wo3(conv2d(u, v, None, ConvSpec(3, 3, stride=2)))), [xc, w33]
    yield "conv2d_dilation2", (
        lambda u, v: wo(conv2d(u, v, None, ConvSpec(3, 3, dilation=2)))), [xc, w33]
    xg = _t(rng, (1, 4, 5, 5))
    wg = _t(rng, (4, 2, 3, 3))
    wog = _weighted(rng, (1, 4, 5, 5))
    yield "conv2d_groups2", (
        lambda u, v: wog(conv2d(u, v, None, ConvSpec(3, 3, groups=2)))), [xg, wg]
    wdw = _t(rng, (4, 1, 3, 3))
    yield "conv2d_depthwise", (
        lambda u, v: wog(conv2d(u, v, None, ConvSpec(3, 3, groups=4)))), [xg, wdw]
    wasym = _t(rng, (3, 2, 5, 1))
    yield "conv2d_5x1", (
        lambda u, v: wo(conv2d(u, v, None, ConvSpec(5, 1)))), [xc, wasym]
    w11 = _t(rng, (3, 2, 1, 1))
    yield "conv2d_1x1", (
        lambda u, v: wo(conv2d(u, v, None, ConvSpec(1, 1)))), [xc, w11]

    xp = _distinct(rng, (1, 2, 6, 6), step=0.1)
    wp = _weighted(rng, (1, 2, 3, 3))
    wp5 = _weighted(rng, (1, 2, 5, 5))
    yield "pool_max", lambda u: wp(pool2d(u, "max", 2)), [xp]
    yield "pool_avg", lambda u: wp(pool2d(u, "avg", 2)), [xp]
    yield "pool_avg_overlap", lambda u: wp5(pool2d(u, "avg", 2, stride=1)), [xp]
    wg1 = _weighted(rng, (1, 2, 1, 1))
    yield "global_avg_pool", lambda u: wg1(global_pool(u, "avg")), [xp]
    yield "global_max_pool", lambda u: wg1(global_pool(u, "max")), [xp]
    wch = _weighted(rng, (1, 1, 6, 6))
    yield "channel_avg_pool", lambda u: wch(channel_pool(u, "avg")), [xp]
    yield "channel_max_pool", lambda u: wch(channel_pool(u, "max")), [xp]
    xu = _t(rng, (1, 2, 3, 3))
    wu = _weighted(rng, (1, 2, 6, 6))
    yield "upsample_bilinear", lambda u: wu(upsample_bilinear(u, 2)), [xu]


def per_op_checks(eps: float = 1e-5, seeds=range(20)):
    """Run every op case across the seeds; yields (name, worst_err, bound)."""
    worst: dict[str, float] = {}
    order: list[str] = []
    for seed in seeds:
        rng = np.random.default_rng(1000 + seed)
        for name, fn, inputs in _op_cases(rng):
            err = grad_check(fn, inputs, eps=eps)
            if name not in worst:
                order.append(name)
                worst[name] = err
            else:
                worst[name] = max(worst[name], err)
    for name in order:
        yield name, worst[name], PER_OP_BOUND


def full_model_check(size: int = 32, eps: float = 1e-5, sample: int = 40,
                     seed: int = 0) -> tuple[float, float]:
    """Whole pipeline at 64-bit: image -> full-variant model -> hybrid loss.
    Checks `sample` seeded coordinates per tensor (input and every parameter)."""
    config = ModelConfig(variant="full", input_size=size, seed=7)
    model = Model(config, dtype=np.float64)
    rng = np.random.default_rng(seed)
    image = Tensor(rng.uniform(0.05, 0.95, size=(1, 3, size, size)), requires_grad=True)
    target = Tensor((rng.uniform(size=(1, 1, size, size)) > 0.5).astype(np.float64))

    def fn(img, *_params):
        return hybrid_loss(model(img), target)

    err = grad_check(fn, [image] + model.registry.tensors(),
                     eps=eps, sample=sample, seed=seed)
    return err, FULL_MODEL_BOUND
