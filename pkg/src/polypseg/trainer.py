"""Training loop, Adam, plateau schedule, checkpoints, and evaluation.

Checkpoints are a single binary file: magic "DLV3", a u32 format version, a
length-prefixed JSON header (model config, optimizer scalars, schedule state,
epoch counter, data RNG state), then named float32 arrays (parameters first,
then Adam's first and second moments), each as name length, name bytes, rank,
dims, and little-endian payload. The JSON is dumped with sorted keys so
saving the same state twice produces identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, NumericError, StateError
from .layers import zero_grads
from .losses import FocalParams, LossWeights, hybrid_loss
from .metrics import (
    binarize,
    compute_metrics,
    confusion_counts,
    macro_average,
    write_metrics_csv,
    xor_error_map,
)
from .network import Model, ModelConfig
from .pnm import write_pgm
from .tensor import Tape, Tensor, backward

CHECKPOINT_MAGIC = b"DLV3"
CHECKPOINT_VERSION = 1


@dataclass
class AdamState:
    """Bias-corrected Adam over a parameter registry, moments keyed by name."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")


def adam_init(registry, lr: float = 1e-4) -> AdamState:
    state = AdamState(lr=lr)
    for name, p in registry.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(registry, state: AdamState) -> None:
    """One update over every registered parameter. Parameters with no
    gradient this step are treated as having a zero gradient."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in registry.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            raise StateError(f"optimizer has no state for parameter '{name}'")
        if m.shape != p.data.shape:
            raise StateError(
                f"optimizer state for '{name}' has shape {m.shape}, "
                f"parameter has {p.data.shape}")
        g = p.grad if p.grad is not None else 0.0
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= state.lr * update


@dataclass
class ScheduleState:
    """Reduce-on-plateau plus early stop, both driven by validation loss.
    An improvement is a drop of more than min_delta below the best seen."""

    lr: float = 1e-4
    min_delta: float = 1e-5
    plateau_patience: int = 15
    plateau_factor: float = 0.1
    stop_patience: int = 20
    best_val_loss: float = float("inf")
    lr_wait: int = 0
    stop_wait: int = 0

    def __post_init__(self):
        if self.plateau_patience < 1 or self.stop_patience < 1:
            raise ConfigError("patience values must be >= 1")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(f"plateau factor must be in (0, 1), got {self.plateau_factor}")


def plateau_step(state: ScheduleState, val_loss: float) -> tuple[float, bool]:
    """Feed one epoch's validation loss; returns (lr, should_stop). The lr
    multiplies by the factor on the plateau_patience-th consecutive
    non-improving epoch, and should_stop turns true on the stop_patience-th."""
    if not np.isfinite(val_loss):
        raise NumericError(f"non-finite validation loss {val_loss}")
    if val_loss < state.best_val_loss - state.min_delta:
        state.best_val_loss = val_loss
        state.lr_wait = 0
        state.stop_wait = 0
    else:
        state.lr_wait += 1
        state.stop_wait += 1
        if state.lr_wait >= state.plateau_patience:
            state.lr *= state.plateau_factor
            state.lr_wait = 0
    return state.lr, state.stop_wait >= state.stop_patience


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 4
    lr: float = 1e-4
    weights: LossWeights = LossWeights()
    focal: FocalParams = FocalParams()
    dice_eps: float = 1.0
    seed: int = 0
    threshold: float = 0.5
    checkpoint_path: str | None = None
    history_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_dice: float
    lr: float
    seconds: float


HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "val_dice", "lr", "seconds")


def write_history_csv(path, history) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(HISTORY_FIELDS) + "\n")
        for rec in history:
            fh.write(
                f"{rec.epoch},{rec.train_loss!r},{rec.val_loss!r},"
                f"{rec.val_dice!r},{rec.lr!r},{rec.seconds:.3f}\n")


def _stack_batch(samples, dtype) -> tuple[Tensor, Tensor]:
    images = np.stack([s.image for s in samples]).astype(dtype)
    masks = np.stack([s.mask for s in samples]).astype(dtype)
    return Tensor(images), Tensor(masks)


def _forward_in_batches(model: Model, samples, batch_size: int):
    """Yield (sample, probability map) without recording gradients."""
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images, _ = _stack_batch(chunk, model.dtype)
        probs = model(images).data
        for i, sample in enumerate(chunk):
            yield sample, probs[i]


def _validation_pass(model: Model, samples, config: TrainConfig):
    losses = []
    dices = []
    for start in range(0, len(samples), config.batch_size):
        chunk = samples[start:start + config.batch_size]
        images, masks = _stack_batch(chunk, model.dtype)
        probs = model(images)
        loss = hybrid_loss(probs, masks, config.weights, config.focal, config.dice_eps)
        losses.append(float(loss.data) * len(chunk))
        for i in range(len(chunk)):
            counts = confusion_counts(
                binarize(probs.data[i], config.threshold), chunk[i].mask.astype(np.uint8))
            dices.append(compute_metrics(counts).dice)
    return sum(losses) / len(samples), float(np.mean(dices))


def train(model: Model, datasets: dict, config: TrainConfig,
          resume_from: str | None = None) -> tuple[Model, list]:
    """Run the recipe over datasets {"train": [...], "val": [...]}.

    Per epoch: seeded shuffle of the training set, forward/loss/backward and
    one Adam step per batch, then a full validation pass feeding the plateau
    schedule. The best-validation-loss state is checkpointed (when a path is
    configured) and restored into the returned model.
    """
    train_samples = datasets.get("train", [])
    val_samples = datasets.get("val", [])
    if not train_samples or not val_samples:
        raise ConfigError("training requires non-empty train and val splits")

    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        if payload["model_config"] != model.config:
            raise ConfigError("checkpoint model config differs from the supplied model")
        _restore_model_arrays(model, payload)
        adam = payload["adam"]
        schedule = payload["schedule"]
        data_rng = _rng_from_state(payload["rng_state"])
        start_epoch = payload["epoch"] + 1
        for name in model.registry.names():
            if name not in adam.m:
                raise StateError(f"checkpoint optimizer state missing '{name}'")
    else:
        adam = adam_init(model.registry, lr=config.lr)
        schedule = ScheduleState(lr=config.lr)
        data_rng = np.random.default_rng(config.seed)
        start_epoch = 0

    history: list[EpochRecord] = []
    best_state: bytes | None = None
    for epoch in range(start_epoch, config.epochs):
        tic = time.monotonic()
        order = data_rng.permutation(len(train_samples))
        epoch_loss = 0.0
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            chunk = [train_samples[i] for i in order[start:start + config.batch_size]]
            images, masks = _stack_batch(chunk, model.dtype)
            zero_grads(model.registry)
            with Tape() as tape:
                probs = model(images)
                loss = hybrid_loss(probs, masks, config.weights, config.focal, config.dice_eps)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch} batch {batch_no}")
            backward(tape, loss)
            adam.lr = schedule.lr
            adam_step(model.registry, adam)
            epoch_loss += loss_value * len(chunk)
        train_loss = epoch_loss / len(train_samples)

        val_loss, val_dice = _validation_pass(model, val_samples, config)
        improved = val_loss < schedule.best_val_loss - schedule.min_delta
        lr_after, should_stop = plateau_step(schedule, val_loss)
        history.append(EpochRecord(
            epoch=epoch, train_loss=train_loss, val_loss=val_loss,
            val_dice=val_dice, lr=lr_after, seconds=time.monotonic() - tic))

        if improved or best_state is None:
            best_state = checkpoint_bytes(model, adam, schedule, epoch, data_rng)
            if config.checkpoint_path:
                with open(config.checkpoint_path, "wb") as fh:
                    fh.write(best_state)
        if config.history_path:
            write_history_csv(config.history_path, history)
        if should_stop:
            break

    if best_state is not None:
        _restore_model_arrays(model, _parse_checkpoint(best_state))
    return model, history


def evaluate(model: Model, samples, threshold: float = 0.5,
             csv_path: str | None = None, batch_size: int = 8,
             xor_dir: str | None = None):
    """Per-image metrics plus their macro average; optionally writes the CSV
    report and XOR error maps."""
    samples = list(samples)
    if not samples:
        raise ConfigError("evaluate needs at least one sample")
    rows = []
    for sample, prob in _forward_in_batches(model, samples, batch_size):
        pred = binarize(prob, threshold)
        counts = confusion_counts(pred, sample.mask.astype(np.uint8))
        rows.append((sample.sample_id, compute_metrics(counts), counts))
        if xor_dir is not None:
            xmap = xor_error_map(pred, sample.mask.astype(np.uint8))
            write_pgm(os.path.join(xor_dir, f"{sample.sample_id}_xor.pgm"),
                      xmap[0].astype(np.float32))
    macro = macro_average([r[1] for r in rows])
    if csv_path is not None:
        write_metrics_csv(csv_path, rows, macro)
    return macro, rows


# -- checkpoint serialization -------------------------------------------------

def _rng_to_state(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": {"state": str(state["state"]["state"]), "inc": str(state["state"]["inc"])},
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def _rng_from_state(payload: dict) -> np.random.Generator:
    if payload["bit_generator"] != "PCG64":
        raise FormatError(f"unsupported bit generator {payload['bit_generator']!r}")
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(payload["state"]["state"]), "inc": int(payload["state"]["inc"])},
        "has_uint32": int(payload["has_uint32"]),
        "uinteger": int(payload["uinteger"]),
    }
    return rng


def checkpoint_bytes(model: Model, adam: AdamState, schedule: ScheduleState,
                     epoch: int, data_rng: np.random.Generator) -> bytes:
    header = {
        "model_config": asdict(model.config),
        "adam": {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                 "eps": adam.eps, "step": adam.step},
        "schedule": asdict(schedule),
        "epoch": epoch,
        "rng_state": _rng_to_state(data_rng),
        "dtype": model.dtype.name,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
             struct.pack("<I", len(blob)), blob]
    names = model.registry.names()
    arrays = [(name, model.registry.get(name).data) for name in names]
    arrays += [(f"adam.m/{name}", adam.m[name]) for name in names]
    arrays += [(f"adam.v/{name}", adam.v[name]) for name in names]
    parts.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(path, model: Model, adam: AdamState, schedule: ScheduleState,
                    epoch: int, data_rng: np.random.Generator) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, adam, schedule, epoch, data_rng))


class _Cursor:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.blob):
            raise FormatError(f"checkpoint truncated reading {what}", offset=self.pos)
        piece = self.blob[self.pos:self.pos + count]
        self.pos += count
        return piece

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def _parse_checkpoint(blob: bytes) -> dict:
    cur = _Cursor(blob)
    if cur.take(4, "magic") != CHECKPOINT_MAGIC:
        raise FormatError("not a checkpoint file (bad magic)", offset=0)
    version = cur.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=4)
    header_len = cur.u32("header length")
    header_at = cur.pos
    try:
        header = json.loads(cur.take(header_len, "header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("checkpoint header is not valid JSON", offset=header_at) from None
    arrays = {}
    count = cur.u32("array count")
    for _ in range(count):
        name_len = cur.u32("name length")
        name = cur.take(name_len, "array name").decode("utf-8")
        rank = cur.u32("rank")
        dims = struct.unpack(f"<{rank}I", cur.take(4 * rank, "dims"))
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = cur.take(4 * size, f"array '{name}' payload")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if cur.pos != len(blob):
        raise FormatError("trailing bytes after final array", offset=cur.pos)

    mc = header["model_config"]
    mc["encoder_channels"] = tuple(mc["encoder_channels"])
    mc["dilations"] = tuple(mc["dilations"])
    model_config = ModelConfig(**mc)
    adam = AdamState(**header["adam"])
    schedule = ScheduleState(**header["schedule"])
    for name in list(arrays):
        if name.startswith("adam.m/"):
            adam.m[name[len("adam.m/"):]] = arrays.pop(name)
        elif name.startswith("adam.v/"):
            adam.v[name[len("adam.v/"):]] = arrays.pop(name)
    return {
        "model_config": model_config,
        "params": arrays,
        "adam": adam,
        "schedule": schedule,
        "epoch": int(header["epoch"]),
        "rng_state": header["rng_state"],
        "dtype": header["dtype"],
    }


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        return _parse_checkpoint(fh.read())


def _restore_model_arrays(model: Model, payload: dict) -> None:
    params = payload["params"]
    for name, p in model.registry.items():
        if name not in params:
            raise FormatError(f"checkpoint is missing parameter '{name}'")
        arr = params[name]
        if arr.shape != p.data.shape:
            raise FormatError(
                f"checkpoint parameter '{name}' has shape {arr.shape}, "
                f"model expects {p.data.shape}")
        p.data = arr.astype(model.dtype)


def model_from_checkpoint(path) -> tuple[Model, dict]:
    """Rebuild the model a checkpoint describes and load its parameters."""
    payload = load_checkpoint(path)
    model = Model(payload["model_config"], dtype=np.float32)
    _restore_model_arrays(model, payload)
    return model, payload
