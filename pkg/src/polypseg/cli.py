"""Command line driver.

Subcommands: synth, train, eval, predict, gradcheck. Exit codes: 0 success,
2 usage/config problems, 3 data or file-format problems, 4 numeric failures.
Diagnostics go to stderr; result summaries go to stdout.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .augment import AUGMENT_OPS, augment
from .data import load_dataset, resize_mask, resize_normalize, save_dataset, split_dataset
from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    NumericError,
    PolypsegError,
    ValidationError,
)
from .losses import FocalParams, LossWeights
from .metrics import binarize
from .network import VARIANTS, Model, ModelConfig
from .pnm import read_ppm, write_pgm
from .synth import SynthConfig, Sample, generate_sample
from .tensor import Tensor
from .trainer import TrainConfig, evaluate, model_from_checkpoint, train

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="polypseg", formatter_class=fmt,
        description="Binary segmentation engine: synthetic data, training, "
                    "evaluation, prediction, and gradient verification.")
    parser.add_argument("--version", action="version", version=f"polypseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", formatter_class=fmt,
                             help="generate a synthetic dataset directory")
    p_synth.add_argument("--out", required=True, help="dataset directory to create")
    p_synth.add_argument("--n", type=int, default=200, help="number of samples")
    p_synth.add_argument("--size", type=int, default=64, help="image size in pixels")
    p_synth.add_argument("--seed", type=int, default=0, help="base seed")
    p_synth.add_argument("--aug-factor", type=int, default=0,
                         help="extra augmented copies per training sample")

    p_train = sub.add_parser("train", formatter_class=fmt,
                             help="train a model on a dataset directory")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--ckpt", required=True, help="checkpoint output path")
    p_train.add_argument("--variant", choices=VARIANTS, default="full",
                         help="model wiring")
    p_train.add_argument("--size", type=int, default=256,
                         help="model input size, multiple of 16")
    p_train.add_argument("--epochs", type=int, default=150, help="epoch budget")
    p_train.add_argument("--batch-size", type=int, default=4, help="samples per step")
    p_train.add_argument("--lr", type=float, default=1e-4, help="initial learning rate")
    p_train.add_argument("--alpha", type=float, default=1.0, help="dice weight")
    p_train.add_argument("--beta", type=float, default=1.0, help="bce weight")
    p_train.add_argument("--gamma", type=float, default=1.0, help="focal weight")
    p_train.add_argument("--seed", type=int, default=0, help="run seed")
    p_train.add_argument("--history", default=None, help="training history CSV path")
    p_train.add_argument("--resume", default=None, help="checkpoint to resume from")

    p_eval = sub.add_parser("eval", formatter_class=fmt,
                            help="evaluate a checkpoint on a dataset split")
    p_eval.add_argument("--data", required=True, help="dataset directory")
    p_eval.add_argument("--ckpt", required=True, help="checkpoint path")
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="test",
                        help="split to score")
    p_eval.add_argument("--csv", default=None, help="per-image metrics CSV path")
    p_eval.add_argument("--threshold", type=float, default=0.5,
                        help="binarization threshold")
    p_eval.add_argument("--xor-maps", default=None,
                        help="directory for per-image XOR error maps")

    p_pred = sub.add_parser("predict", formatter_class=fmt,
                            help="segment one image with a checkpoint")
    p_pred.add_argument("--ckpt", required=True, help="checkpoint path")
    p_pred.add_argument("--image", required=True, help="input PPM image")
    p_pred.add_argument("--out", required=True,
                        help="output prefix; writes <out>.pgm and <out>_prob.pgm")
    p_pred.add_argument("--threshold", type=float, default=0.5,
                        help="binarization threshold")

    p_grad = sub.add_parser("gradcheck", formatter_class=fmt,
                            help="run the gradient verification suite")
    p_grad.add_argument("--eps", type=float, default=1e-5,
                        help="finite-difference step")
    p_grad.add_argument("--model-size", type=int, default=32,
                        help="input size for the whole-model check")
    p_grad.add_argument("--sample", type=int, default=40,
                        help="coordinates checked per tensor in the whole-model pass")
    return parser


def _cmd_synth(args) -> int:
    synth_config = SynthConfig(size=args.size)
    samples = [generate_sample(args.seed + i, synth_config, sample_id=f"s{args.seed + i:08d}")
               for i in range(args.n)]
    train_s, val_s, test_s = split_dataset(samples, seed=args.seed)
    if args.aug_factor > 0:
        rng = np.random.default_rng(args.seed + 777)
        extra = []
        for sample in train_s:
            for k in range(args.aug_factor):
                op = AUGMENT_OPS[int(rng.integers(len(AUGMENT_OPS)))]
                out = augment(sample, op, rng)
                out.sample_id = f"{sample.sample_id}_a{k}"
                extra.append(out)
        train_s = train_s + extra
    save_dataset(args.out, {"train": train_s, "val": val_s, "test": test_s})
    print(f"wrote {len(train_s)}/{len(val_s)}/{len(test_s)} train/val/test samples to {args.out}")
    return 0


def _resized_split(samples, size) -> list:
    out = []
    for s in samples:
        if s.image.shape[1] == size and s.image.shape[2] == size:
            out.append(s)
        else:
            out.append(Sample(
                image=resize_normalize(s.image, size),
                mask=resize_mask(s.mask, size),
                sample_id=s.sample_id, seed=s.seed,
                augmentation_trail=list(s.augmentation_trail)))
    return out


def _cmd_train(args) -> int:
    datasets = load_dataset(args.data)
    datasets = {split: _resized_split(samples, args.size)
                for split, samples in datasets.items()}
    model_config = ModelConfig(variant=args.variant, input_size=args.size, seed=args.seed)
    model = Model(model_config)
    train_config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        weights=LossWeights(alpha=args.alpha, beta=args.beta, gamma=args.gamma),
        focal=FocalParams(), seed=args.seed,
        checkpoint_path=args.ckpt, history_path=args.history)
    model, history = train(model, datasets, train_config, resume_from=args.resume)
    best = min(history, key=lambda r: r.val_loss) if history else None
    if best is not None:
        print(f"trained {len(history)} epochs; best val loss {best.val_loss:.6f} "
              f"(dice {best.val_dice:.4f}) at epoch {best.epoch}; checkpoint: {args.ckpt}")
    return 0


def _cmd_eval(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    datasets = load_dataset(args.data)
    samples = _resized_split(datasets[args.split], model.config.input_size)
    if args.xor_maps:
        os.makedirs(args.xor_maps, exist_ok=True)
    macro, rows = evaluate(model, samples, threshold=args.threshold,
                           csv_path=args.csv, xor_dir=args.xor_maps)
    print(f"{args.split}: n={len(rows)} dice={macro.dice:.4f} miou={macro.miou:.4f} "
          f"precision={macro.precision:.4f} recall={macro.recall:.4f} "
          f"accuracy={macro.accuracy:.4f}")
    return 0


def _cmd_predict(args) -> int:
    model, _ = model_from_checkpoint(args.ckpt)
    image = read_ppm(args.image)
    size = model.config.input_size
    resized = resize_normalize(image, size)
    prob = model(Tensor(resized[None].astype(model.dtype))).data[0]
    mask = binarize(prob, args.threshold)
    write_pgm(f"{args.out}.pgm", mask.astype(np.float32))
    write_pgm(f"{args.out}_prob.pgm", prob.astype(np.float32))
    print(f"wrote {args.out}.pgm and {args.out}_prob.pgm "
          f"(foreground fraction {mask.mean():.4f})")
    return 0


def _cmd_gradcheck(args) -> int:
    from .verification import full_model_check, per_op_checks
    failures = 0
    for name, err, bound in per_op_checks(eps=args.eps):
        status = "ok" if err <= bound else "FAIL"
        if status == "FAIL":
            failures += 1
        print(f"{name}: max rel err {err:.3e} (bound {bound:.0e}) {status}")
    err, bound = full_model_check(size=args.model_size, eps=args.eps, sample=args.sample)
    status = "ok" if err <= bound else "FAIL"
    if status == "FAIL":
        failures += 1
    print(f"full_model[{args.model_size}x{args.model_size}]: max rel err {err:.3e} "
          f"(bound {bound:.0e}) {status}")
    if failures:
        raise NumericError(f"{failures} gradient check(s) exceeded their bound")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "predict": _cmd_predict,
        "gradcheck": _cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ValidationError, DimensionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PolypsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
