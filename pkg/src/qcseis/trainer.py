"""Adam optimization, adversarial/supervised training loops, checkpoints.

Training is deterministic for a fixed seed and worker count: data order
comes from a dedicated generator whose state rides along in checkpoints,
so a resumed run continues bit-identically. Checkpoints use the QCKP
container described in `save_checkpoint`.
"""
from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import models as mdl
from .autograd import Tensor
from .objectives import (
    LossWeights,
    loss_complementarity,
    loss_discriminator,
    loss_generator,
    mae,
    rmse,
)
from .seisdata import SeismicDataset

__all__ = [
    "Adam",
    "TrainConfig",
    "TrainingDivergedError",
    "CheckpointError",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "load_model_state",
    "train_gan",
    "train_unet",
    "HISTORY_COLUMNS",
]

log = logging.getLogger("qcseis.trainer")

HISTORY_COLUMNS = ("epoch", "split", "mae", "rmse", "loss_g", "loss_d", "loss_com")

_QCKP_MAGIC = b"QCKP"
_QCKP_VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class TrainingDivergedError(RuntimeError):
    """Raised when losses stay non-finite for three consecutive steps."""


class CheckpointError(RuntimeError):
    """Raised when a checkpoint cannot be read or does not fit the model."""


class Adam:
    """Standard Adam update with bias correction.

    Steps with any non-finite gradient are skipped entirely (counted in
    `skipped`), leaving parameters and moments untouched.
    """

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.tensor.data) for p in self.params]
        self.v = [np.zeros_like(p.tensor.data) for p in self.params]
        self.step_count = 0
        self.skipped = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> bool:
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.tensor.data)
            if not np.all(np.isfinite(g)):
                self.skipped += 1
                log.warning("skipping optimizer step %d: non-finite gradient in %s",
                            self.step_count + 1, p.name)
                return False
            grads.append(g)
        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - self.beta1 ** t
        correction2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / correction1
            v_hat = v / correction2
            p.tensor.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.tensor.data.dtype)
        return True


def clip_global_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global norm is at most max_norm."""
    total = 0.0
    grads = [p.grad for p in params if p.trainable and p.grad is not None]
    for g in grads:
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads:
            g *= g.dtype.type(factor)
        log.info("gradient clipping active: norm %.3f -> %.3f", norm, max_norm)
    return norm


@dataclass
class TrainConfig:
    """Optimization settings; the defaults are full-scale, smoke configs shrink them."""

    epochs: int = 100
    batch_size: int = 16
    lr: float | None = None  # resolved per family: 1e-5 adversarial, 1e-4 unet
    weights: LossWeights = field(default_factory=LossWeights)
    com_in_discriminator: bool = True
    seed: int = 0
    checkpoint_every: int = 5
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("need epochs >= 1 and batch_size >= 2")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


# ---------------------------------------------------------------------------
# QCKP checkpoints


@dataclass
class Checkpoint:
    version: int
    config: dict
    entries: dict

    def require_arch(self, arch: dict) -> None:
        if self.config.get("arch") != arch:
            raise CheckpointError(
                "checkpoint architecture does not match the requested model: "
                f"stored {json.dumps(self.config.get('arch'), sort_keys=True)[:200]} ..."
            )


def _iter_state_entries(role: str, model: mdl.Module):
    for name, p in model.named_parameters():
        yield f"{role}.{name}", np.asarray(p.tensor.data)


def _optimizer_entries(role: str, opt: Adam):
    yield f"adam.{role}.step", np.asarray(float(opt.step_count), dtype=np.float64)
    yield f"adam.{role}.skipped", np.asarray(float(opt.skipped), dtype=np.float64)
    for p, m, v in zip(opt.params, opt.m, opt.v):
        yield f"adam.{role}.m.{p.name}", m
        yield f"adam.{role}.v.{p.name}", v


def save_checkpoint(path, task: str, model_map: dict, optimizer_map: dict,
                    train_cfg: TrainConfig, runtime: dict) -> None:
    """Write the QCKP container.

    Layout (little-endian): magic "QCKP", version u32, config-JSON length
    u32 + bytes, entry count u32, then per entry: name length u16 + UTF-8
    name, rank u8, dims u64 x rank, dtype tag u8 (0 = f32, 1 = f64), raw
    data. The config JSON carries the architecture blob, training config,
    circuit layouts, and runtime state (epoch, RNG, history).
    """
    arch = {role: m.arch_config() for role, m in model_map.items()}
    layouts = {role: _collect_layouts(m) for role, m in model_map.items()}
    config = {
        "format": _QCKP_VERSION,
        "task": task,
        "arch": arch,
        "train": train_cfg.to_dict(),
        "layouts": layouts,
        "runtime": runtime,
    }
    blob = json.dumps(config, sort_keys=True).encode("utf-8")

    entries = []
    for role, m in model_map.items():
        entries.extend(_iter_state_entries(role, m))
    for role, opt in optimizer_map.items():
        entries.extend(_optimizer_entries(role, opt))

    with open(path, "wb") as fh:
        fh.write(_QCKP_MAGIC)
        fh.write(struct.pack("<I", _QCKP_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            arr = np.asarray(arr)
            if arr.dtype == np.float32:
                tag, raw = 0, arr.astype("<f4")
            else:
                tag, raw = 1, arr.astype("<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(struct.pack("<B", tag))
            fh.write(raw.tobytes())


def _collect_layouts(model: mdl.Module) -> list:
    layouts = []
    stack = [model]
    while stack:
        node = stack.pop()
        if isinstance(node, mdl.QuantumConv):
            layouts.append([list(map(list, layer)) for layer in node.layout])
        stack.extend(node._modules.values())
    return layouts


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    view = memoryview(raw)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated while reading {what}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != _QCKP_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a QCKP checkpoint")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != _QCKP_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack("<I", take(4, "config length"))
    config = json.loads(bytes(take(blob_len, "config blob")).decode("utf-8"))
    (n_entries,) = struct.unpack("<I", take(4, "entry count"))
    entries = {}
    for i in range(n_entries):
        (name_len,) = struct.unpack("<H", take(2, f"entry {i} name length"))
        name = bytes(take(name_len, f"entry {i} name")).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"{name}: rank"))
        dims = [struct.unpack("<Q", take(8, f"{name}: dim {d}"))[0] for d in range(rank)]
        (tag,) = struct.unpack("<B", take(1, f"{name}: dtype tag"))
        if tag not in _DTYPE_TAGS:
            raise CheckpointError(f"{path}: entry {name!r} has unknown dtype tag {tag}")
        dtype = _DTYPE_TAGS[tag]
        count = int(np.prod(dims)) if dims else 1
        data = take(count * dtype.itemsize, f"entry {name!r} data")
        entries[name] = np.frombuffer(data, dtype=dtype).reshape(dims).copy()
    return Checkpoint(version=version, config=config, entries=entries)


def load_model_state(model: mdl.Module, ckpt: Checkpoint, role: str) -> None:
    """Copy every named parameter/buffer of `model` from checkpoint entries."""
    for name, p in model.named_parameters():
        key = f"{role}.{name}"
        if key not in ckpt.entries:
            raise CheckpointError(f"checkpoint is missing entry {key!r}")
        arr = ckpt.entries[key]
        if tuple(arr.shape) != tuple(p.tensor.shape):
            raise CheckpointError(
                f"entry {key!r} has shape {tuple(arr.shape)}, model expects {tuple(p.tensor.shape)}"
            )
        p.tensor.data = arr.astype(p.tensor.data.dtype, copy=True)


def _load_adam_state(opt: Adam, ckpt: Checkpoint, role: str) -> None:
    opt.step_count = int(ckpt.entries[f"adam.{role}.step"].reshape(())[()])
    opt.skipped = int(ckpt.entries[f"adam.{role}.skipped"].reshape(())[()])
    for i, p in enumerate(opt.params):
        for buf, kind in ((opt.m, "m"), (opt.v, "v")):
            key = f"adam.{role}.{kind}.{p.name}"
            if key not in ckpt.entries:
                raise CheckpointError(f"checkpoint is missing entry {key!r}")
            arr = ckpt.entries[key]
            if arr.shape != buf[i].shape:
                raise CheckpointError(f"entry {key!r} shape mismatch")
            buf[i] = arr.astype(buf[i].dtype, copy=True)


# ---------------------------------------------------------------------------
# training loops


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


def _write_history(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in rows:
            writer.writerow(row)


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        if len(idx) < 2:
            log.info("dropping trailing batch of size %d (batch stats need >= 2)", len(idx))
            continue
        yield idx


def _as_batch(stack: np.ndarray, idx: np.ndarray) -> Tensor:
    return Tensor(stack[idx][:, None, :, :])


def _validate(model, data: SeismicDataset, batch_size: int):
    model.eval()
    maes, rmses = [], []
    with ag.no_grad():
        for start in range(0, len(data), batch_size):
            sl = slice(start, start + batch_size)
            pred = model(Tensor(data.degraded[sl][:, None]))
            for j in range(pred.shape[0]):
                maes.append(mae(data.targets[sl][j], pred.data[j, 0]))
                rmses.append(rmse(data.targets[sl][j], pred.data[j, 0]))
    model.train()
    return float(np.mean(maes)), float(np.mean(rmses))


class _DivergenceGuard:
    def __init__(self, limit: int = 3):
        self.limit = limit
        self.streak = 0

    def observe(self, *values: float) -> None:
        if all(np.isfinite(v) for v in values):
            self.streak = 0
            return
        self.streak += 1
        if self.streak >= self.limit:
            raise TrainingDivergedError(
                f"loss was non-finite for {self.streak} consecutive steps"
            )


def _fmt(value) -> str:
    return repr(float(value))


def train_gan(
    gen: mdl.Generator,
    disc: mdl.Discriminator,
    train_set: SeismicDataset,
    val_set: SeismicDataset,
    cfg: TrainConfig,
    out_dir,
    resume: Checkpoint | None = None,
    step_hook=None,
) -> list:
    """Alternating adversarial training; returns the history rows.

    Per batch: one discriminator step on the negated two-sided objective,
    then one generator step on the adversarial + reconstruction (+ weighted
    complementarity) objective. Per epoch: validation MAE/RMSE, history CSV
    rewrite, cadenced "last" and best-validation checkpoints.
    """
    if train_set.task not in ("interpolation_random", "interpolation_regular", "denoise"):
        raise ValueError(f"adversarial training expects a restoration task, got {train_set.task!r}")
    if len(train_set) == 0:
        raise ValueError("training split is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lr = cfg.lr if cfg.lr is not None else 1e-5
    opt_g = Adam(gen.trainable_parameters(), lr)
    opt_d = Adam(disc.trainable_parameters(), lr)
    order_rng = np.random.default_rng([cfg.seed, 101])
    history: list = []
    start_epoch = 0
    best_val = float("inf")
    if resume is not None:
        resume.require_arch({"generator": gen.arch_config(), "discriminator": disc.arch_config()})
        load_model_state(gen, resume, "generator")
        load_model_state(disc, resume, "discriminator")
        _load_adam_state(opt_g, resume, "generator")
        _load_adam_state(opt_d, resume, "discriminator")
        run = resume.config["runtime"]
        order_rng = _restore_rng(run["rng_state"])
        history = [tuple(r) for r in run["history"]]
        start_epoch = int(run["epoch"])
        best_val = float(run["best_val_mae"]) if run["best_val_mae"] is not None else float("inf")

    guard = _DivergenceGuard()
    lam_com = cfg.weights.complementarity
    step = 0

    def checkpoint(path):
        runtime = {
            "epoch": epoch + 1,
            "rng_state": _rng_state(order_rng),
            "history": [list(r) for r in history],
            "best_val_mae": None if best_val == float("inf") else best_val,
        }
        save_checkpoint(path, train_set.task, {"generator": gen, "discriminator": disc},
                        {"generator": opt_g, "discriminator": opt_d}, cfg, runtime)

    for epoch in range(start_epoch, cfg.epochs):
        gen.train()
        disc.train()
        order = order_rng.permutation(len(train_set))
        agg = {"mae": [], "rmse": [], "loss_g": [], "loss_d": [], "loss_com": []}
        for idx in _batches(order, cfg.batch_size):
            x = _as_batch(train_set.degraded, idx)
            target = _as_batch(train_set.targets, idx)

            pred = gen(x)
            gen_pairs = gen.complementarity_pairs

            d_real = disc(target)
            disc_pairs = disc.complementarity_pairs
            d_fake = disc(pred.detach())
            l_d = loss_discriminator(d_real, d_fake)
            if cfg.com_in_discriminator and lam_com > 0 and disc_pairs:
                l_d = ag.add(l_d, ag.scale(loss_complementarity(disc_pairs), lam_com))
            disc.zero_grad()
            ag.backward(l_d)
            clip_global_norm(disc.trainable_parameters(), cfg.grad_clip)
            opt_d.step()

            d_score = disc(pred)
            l_com = loss_complementarity(gen_pairs)
            l_g = loss_generator(pred, target, d_score, cfg.weights)
            total = ag.add(l_g, ag.scale(l_com, lam_com)) if lam_com > 0 else l_g
            gen.zero_grad()
            disc.zero_grad()
            ag.backward(total)
            clip_global_norm(gen.trainable_parameters(), cfg.grad_clip)
            opt_g.step()

            guard.observe(l_d.item(), total.item())
            agg["mae"].append(mae(target.data, pred.data))
            agg["rmse"].append(rmse(target.data, pred.data))
            agg["loss_g"].append(l_g.item())
            agg["loss_d"].append(l_d.item())
            agg["loss_com"].append(l_com.item())
            step += 1
            if step_hook is not None:
                step_hook(step, {"generator": gen, "discriminator": disc})

        history.append((
            epoch + 1, "train", _fmt(np.mean(agg["mae"])), _fmt(np.mean(agg["rmse"])),
            _fmt(np.mean(agg["loss_g"])), _fmt(np.mean(agg["loss_d"])), _fmt(np.mean(agg["loss_com"])),
        ))
        val_mae, val_rmse = _validate(gen, val_set, cfg.batch_size)
        history.append((epoch + 1, "val", _fmt(val_mae), _fmt(val_rmse), "", "", ""))
        _write_history(out_dir / "history.csv", history)
        if val_mae < best_val:
            best_val = val_mae
            checkpoint(out_dir / "best.qckp")
        if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs:
            checkpoint(out_dir / "last.qckp")
    return history


def train_unet(
    model: mdl.UNet,
    train_set: SeismicDataset,
    val_set: SeismicDataset,
    cfg: TrainConfig,
    out_dir,
    resume: Checkpoint | None = None,
    step_hook=None,
) -> list:
    """Supervised L1 training (+ weighted complementarity on the bottleneck pair)."""
    if train_set.task != "lfe":
        raise ValueError(f"unet training expects the lfe task, got {train_set.task!r}")
    if len(train_set) == 0:
        raise ValueError("training split is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lr = cfg.lr if cfg.lr is not None else 1e-4
    opt = Adam(model.trainable_parameters(), lr)
    order_rng = np.random.default_rng([cfg.seed, 101])
    history: list = []
    start_epoch = 0
    best_val = float("inf")
    if resume is not None:
        resume.require_arch({"model": model.arch_config()})
        load_model_state(model, resume, "model")
        _load_adam_state(opt, resume, "model")
        run = resume.config["runtime"]
        order_rng = _restore_rng(run["rng_state"])
        history = [tuple(r) for r in run["history"]]
        start_epoch = int(run["epoch"])
        best_val = float(run["best_val_mae"]) if run["best_val_mae"] is not None else float("inf")

    guard = _DivergenceGuard()
    lam_com = cfg.weights.complementarity
    step = 0

    def checkpoint(path):
        runtime = {
            "epoch": epoch + 1,
            "rng_state": _rng_state(order_rng),
            "history": [list(r) for r in history],
            "best_val_mae": None if best_val == float("inf") else best_val,
        }
        save_checkpoint(path, train_set.task, {"model": model}, {"model": opt}, cfg, runtime)

    for epoch in range(start_epoch, cfg.epochs):
        model.train()
        order = order_rng.permutation(len(train_set))
        agg = {"mae": [], "rmse": [], "loss_g": [], "loss_com": []}
        for idx in _batches(order, cfg.batch_size):
            x = _as_batch(train_set.degraded, idx)
            target = _as_batch(train_set.targets, idx)
            pred = model(x)
            l1 = ag.tmean(ag.absval(ag.sub(pred, target)))
            l_com = loss_complementarity(model.complementarity_pairs)
            total = ag.add(l1, ag.scale(l_com, lam_com)) if lam_com > 0 else l1
            model.zero_grad()
            ag.backward(total)
            clip_global_norm(model.trainable_parameters(), cfg.grad_clip)
            opt.step()
            guard.observe(total.item())
            agg["mae"].append(mae(target.data, pred.data))
            agg["rmse"].append(rmse(target.data, pred.data))
            agg["loss_g"].append(total.item())
            agg["loss_com"].append(l_com.item())
            step += 1
            if step_hook is not None:
                step_hook(step, {"model": model})
        history.append((
            epoch + 1, "train", _fmt(np.mean(agg["mae"])), _fmt(np.mean(agg["rmse"])),
            _fmt(np.mean(agg["loss_g"])), "", _fmt(np.mean(agg["loss_com"])),
        ))
        val_mae, val_rmse = _validate(model, val_set, cfg.batch_size)
        history.append((epoch + 1, "val", _fmt(val_mae), _fmt(val_rmse), "", "", ""))
        _write_history(out_dir / "history.csv", history)
        if val_mae < best_val:
            best_val = val_mae
            checkpoint(out_dir / "best.qckp")
        if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs:
            checkpoint(out_dir / "last.qckp")
    return history
