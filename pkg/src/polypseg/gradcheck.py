"""Central-difference gradient verification.

The relative error for each checked coordinate is
|analytic - numeric| / max(1, |analytic|, |numeric|), which stays meaningful
when both gradients are near zero.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ConfigError
from .tensor import Tape, Tensor, backward, set_finite_checks


@contextlib.contextmanager
def _finite_checks():
    set_finite_checks(True)
    try:
        yield
    finally:
        set_finite_checks(False)


def grad_check(fn, inputs, eps: float = 1e-5, sample: int | None = None, seed: int = 0) -> float:
    """Return the worst relative error between analytic and numeric gradients.

    ``fn(*inputs)`` must produce a scalar Tensor and be deterministic.
    Every float64 coordinate of every ``requires_grad`` input is perturbed by
    +/- eps unless ``sample`` caps the count per input, in which case a seeded
    choice of coordinates is checked (deterministic for a given seed).
    """
    inputs = list(inputs)
    for t in inputs:
        if not isinstance(t, Tensor):
            raise ConfigError("grad_check inputs must be Tensors")
        if t.requires_grad and t.data.dtype != np.float64:
            raise ConfigError("grad_check requires float64 inputs; rebuild the model at 64-bit")
        t.grad = None

    with _finite_checks():
        with Tape() as tape:
            out = fn(*inputs)
        if out.data.size != 1:
            raise ConfigError(f"grad_check target must be scalar, got shape {out.data.shape}")
        backward(tape, out)

        rng = np.random.default_rng(seed)
        worst = 0.0
        for t in inputs:
            if not t.requires_grad:
                continue
            flat = t.data.reshape(-1)
            analytic = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
            n = flat.size
            if sample is not None and sample < n:
                coords = np.sort(rng.choice(n, size=sample, replace=False))
            else:
                coords = range(n)
            for i in coords:
                saved = flat[i]
                flat[i] = saved + eps
                f_plus = float(fn(*inputs).data)
                flat[i] = saved - eps
                f_minus = float(fn(*inputs).data)
                flat[i] = saved
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = float(analytic[i])
                err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                worst = max(worst, err)
    return worst
