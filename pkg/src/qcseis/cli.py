"""Command-line interface: data generation, training, evaluation, self-test.

Every command is driven by flags or a JSON config whose resolved form
(all defaults materialized) is echoed next to its outputs, so any run can
be reproduced from the echo alone. Machine-readable summaries go to
stdout; diagnostics go to stderr via logging.

Exit codes: 0 success, 1 self-test failure, 2 invalid flags/config,
3 I/O failure, 4 training divergence, 5 checkpoint/data mismatch.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import models as mdl
from . import qlayer, seisdata, trainer
from .objectives import EvalReport, LossWeights, amplitude_spectrum, fk_spectrum
from .selftest import run_selftest

log = logging.getLogger("qcseis.cli")

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_MISMATCH = 5


class ConfigError(ValueError):
    pass


def _env_seed(seed: int) -> int:
    override = os.environ.get("QCSEIS_SEED")
    if override is None:
        return seed
    try:
        return int(override)
    except ValueError as exc:
        raise ConfigError(f"QCSEIS_SEED must be an integer, got {override!r}") from exc


# ---------------------------------------------------------------------------
# config schema


_DATA_DEFAULTS = {"dir": None, "task": None}
_MODEL_DEFAULTS = {
    "family": None,  # "qcgan" or "unet"
    "quantum": True,
    "blocks": 4,
    "base_channels": 32,
    "quantum_fraction": 0.25,
    "n_qubits": 4,
    "n_circuits": 4,
    "circuit_depth": 2,
    "circuit_seed": 7,
    "input_scale": 1.0,
    "init_seed": 0,
}
_TRAIN_DEFAULTS = {
    "epochs": 100,
    "batch_size": 16,
    "lr": None,
    "lambda_rec": 100.0,
    "lambda_com": 1.0,
    "com_in_discriminator": True,
    "seed": 0,
    "checkpoint_every": 5,
    "grad_clip": 5.0,
    "out_dir": None,
}
_EVAL_DEFAULTS = {"report": None, "spectra_dir": None}


def _merge_section(name: str, doc: dict, defaults: dict) -> dict:
    section = doc.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = set(section) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(section)
    return merged


def resolve_config(doc: dict) -> dict:
    """Materialize defaults and reject unknown keys at every level."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(doc) - {"data", "model", "train", "eval"}
    if unknown:
        raise ConfigError(f"unknown top-level config sections: {sorted(unknown)}")
    resolved = {
        "data": _merge_section("data", doc, _DATA_DEFAULTS),
        "model": _merge_section("model", doc, _MODEL_DEFAULTS),
        "train": _merge_section("train", doc, _TRAIN_DEFAULTS),
        "eval": _merge_section("eval", doc, _EVAL_DEFAULTS),
    }
    if not resolved["data"]["dir"]:
        raise ConfigError("data.dir is required")
    if resolved["model"]["family"] not in ("qcgan", "unet"):
        raise ConfigError("model.family must be 'qcgan' or 'unet'")
    if not resolved["train"]["out_dir"]:
        raise ConfigError("train.out_dir is required")
    resolved["train"]["seed"] = _env_seed(resolved["train"]["seed"])
    return resolved


def _model_configs(model_cfg: dict, patch: tuple, family: str):
    common = dict(
        base_channels=model_cfg["base_channels"],
        quantum_fraction=model_cfg["quantum_fraction"],
        quantum=model_cfg["quantum"],
        n_qubits=model_cfg["n_qubits"],
        n_circuits=model_cfg["n_circuits"],
        circuit_depth=model_cfg["circuit_depth"],
        circuit_seed=model_cfg["circuit_seed"],
        input_scale=model_cfg["input_scale"],
        patch_height=patch[0],
        patch_width=patch[1],
    )
    if family == "qcgan":
        gen = mdl.GeneratorConfig(blocks=model_cfg["blocks"], **common)
        disc = mdl.DiscriminatorConfig(blocks=model_cfg["blocks"], **common)
        return gen, disc
    return mdl.UNetConfig(**common)


def _train_config(train_cfg: dict) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        epochs=train_cfg["epochs"],
        batch_size=train_cfg["batch_size"],
        lr=train_cfg["lr"],
        weights=LossWeights(
            reconstruction=train_cfg["lambda_rec"],
            complementarity=train_cfg["lambda_com"],
        ),
        com_in_discriminator=train_cfg["com_in_discriminator"],
        seed=train_cfg["seed"],
        checkpoint_every=train_cfg["checkpoint_every"],
        grad_clip=train_cfg["grad_clip"],
    )


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args) -> int:
    if args.height < 8 or args.width < 8:
        log.error("patch dims must be at least 8x8, got %dx%d", args.height, args.width)
        return EXIT_CONFIG
    if args.n < 10:
        log.error("need at least 10 patches, got %d", args.n)
        return EXIT_CONFIG
    seed = _env_seed(args.seed)
    # lfe defaults: coarser sampling and the low-frequency source wavelet
    dt = args.dt if args.dt is not None else (0.016 if args.task == "lfe" else 0.004)
    if args.f0_lo is None or args.f0_hi is None:
        f0 = (7.0, 7.0) if args.task == "lfe" else _F0_DEFAULTS
    else:
        f0 = (args.f0_lo, args.f0_hi)
    try:
        spec = seisdata.DegradationSpec(task=args.task, noise_sigma=args.noise_sigma, seed=seed)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    try:
        paths = seisdata.build_dataset(
            spec, args.n, (args.height, args.width), args.out,
            dt=dt, dx=args.dx, n_events=args.n_events,
            velocity_range=(args.v_lo, args.v_hi), f0_range=f0,
        )
    except OSError as exc:
        log.error("cannot write dataset: %s", exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    summary = {
        "task": args.task,
        "out": str(args.out),
        "counts": {k: len(seisdata.load_seis(v)) for k, v in paths.items() if k != "sidecar"},
        "bytes": {k: Path(v).stat().st_size for k, v in paths.items()},
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text())
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        log.error("config is not valid JSON: %s", exc)
        return EXIT_CONFIG
    try:
        cfg = resolve_config(doc)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG

    if args.workers:
        qlayer.set_workers(args.workers)

    data_dir = Path(cfg["data"]["dir"])
    try:
        train_set = seisdata.load_split(data_dir, "train")
        val_set = seisdata.load_split(data_dir, "val")
    except (OSError, ValueError) as exc:
        log.error("cannot load dataset from %s: %s", data_dir, exc)
        return EXIT_CONFIG
    if cfg["data"]["task"] and cfg["data"]["task"] != train_set.task:
        log.error("config expects task %r but dataset is %r", cfg["data"]["task"], train_set.task)
        return EXIT_CONFIG

    family = cfg["model"]["family"]
    expected_family = "unet" if train_set.task == "lfe" else "qcgan"
    if family != expected_family:
        log.error("task %r needs model family %r, config says %r", train_set.task, expected_family, family)
        return EXIT_CONFIG

    out_dir = Path(cfg["train"]["out_dir"])
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "resolved_config.json", "w") as fh:
            json.dump(cfg, fh, indent=2, sort_keys=True)
    except OSError as exc:
        log.error("cannot write to output dir %s: %s", out_dir, exc)
        return EXIT_IO

    resume = None
    if args.resume:
        try:
            resume = trainer.load_checkpoint(args.resume)
        except trainer.CheckpointError as exc:
            log.error("%s", exc)
            return EXIT_MISMATCH

    patch = train_set.patch_shape
    tc = _train_config(cfg["train"])
    init_seed = cfg["model"]["init_seed"]
    try:
        if family == "qcgan":
            gcfg, dcfg = _model_configs(cfg["model"], patch, family)
            gen = mdl.Generator(gcfg, init_seed=init_seed)
            disc = mdl.Discriminator(dcfg, init_seed=init_seed + 1)
            history = trainer.train_gan(gen, disc, train_set, val_set, tc, out_dir, resume=resume)
        else:
            ucfg = _model_configs(cfg["model"], patch, family)
            model = mdl.UNet(ucfg, init_seed=init_seed)
            history = trainer.train_unet(model, train_set, val_set, tc, out_dir, resume=resume)
    except trainer.TrainingDivergedError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except trainer.CheckpointError as exc:
        log.error("%s", exc)
        return EXIT_MISMATCH
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG

    val_rows = [row for row in history if row[1] == "val"]
    summary = {
        "epochs": tc.epochs,
        "final_val_mae": float(val_rows[-1][2]) if val_rows else None,
        "history": str(out_dir / "history.csv"),
        "last_checkpoint": str(out_dir / "last.qckp"),
        "best_checkpoint": str(out_dir / "best.qckp"),
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _restore_eval_model(ckpt: trainer.Checkpoint):
    arch = ckpt.config["arch"]
    if "generator" in arch:
        model = mdl.build_model(arch["generator"])
        trainer.load_model_state(model, ckpt, "generator")
    elif "model" in arch:
        model = mdl.build_model(arch["model"])
        trainer.load_model_state(model, ckpt, "model")
    else:
        raise trainer.CheckpointError("checkpoint has no restorable model entry")
    model.eval()
    return model


def _dump_spectra(out_dir: Path, index: int, target, degraded, predicted, dt: float, dx: float) -> None:
    mid = target.shape[1] // 2
    freqs, mag_t = amplitude_spectrum(target[:, mid], dt)
    _, mag_d = amplitude_spectrum(degraded[:, mid], dt)
    _, mag_p = amplitude_spectrum(predicted[:, mid], dt)
    with open(out_dir / f"amp_spectrum_{index:03d}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["freq_hz", "target", "degraded", "predicted"])
        for row in zip(freqs, mag_t, mag_d, mag_p):
            writer.writerow([repr(float(v)) for v in row])
    freqs, wavenumbers, grid = fk_spectrum(predicted, dt, dx)
    # magnitudes in dB relative to the panel maximum
    peak = grid.max()
    db = 20.0 * np.log10(np.maximum(grid, 1e-12) / max(peak, 1e-12))
    with open(out_dir / f"fk_pred_{index:03d}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["freq_hz\\wavenumber_per_m"] + [repr(float(k)) for k in wavenumbers])
        for f, row in zip(freqs, db):
            writer.writerow([repr(float(f))] + [repr(float(v)) for v in row])


def cmd_eval(args) -> int:
    if args.workers:
        qlayer.set_workers(args.workers)
    try:
        ckpt = trainer.load_checkpoint(args.checkpoint)
    except trainer.CheckpointError as exc:
        log.error("%s", exc)
        return EXIT_MISMATCH
    try:
        test_set = seisdata.load_split(args.data, "test")
    except (OSError, ValueError) as exc:
        log.error("cannot load dataset: %s", exc)
        return EXIT_IO
    if ckpt.config.get("task") != test_set.task:
        log.error("checkpoint was trained on task %r but dataset is %r",
                  ckpt.config.get("task"), test_set.task)
        return EXIT_MISMATCH
    try:
        model = _restore_eval_model(ckpt)
    except trainer.CheckpointError as exc:
        log.error("%s", exc)
        return EXIT_MISMATCH

    report = EvalReport(task=test_set.task)
    predictions = np.empty_like(test_set.targets)
    try:
        with ag.no_grad():
            for start in range(0, len(test_set), 8):
                sl = slice(start, start + 8)
                pred = model(ag.Tensor(test_set.degraded[sl][:, None]))
                predictions[sl] = pred.data[:, 0]
    except ag.ShapeError as exc:
        log.error("checkpoint and dataset are incompatible: %s", exc)
        return EXIT_MISMATCH
    for i in range(len(test_set)):
        report.add_sample(test_set.targets[i], predictions[i])

    try:
        report.to_csv(args.report)
        if args.spectra_dir:
            spectra_dir = Path(args.spectra_dir)
            spectra_dir.mkdir(parents=True, exist_ok=True)
            for i in range(len(test_set)):
                _dump_spectra(spectra_dir, i, test_set.targets[i], test_set.degraded[i],
                              predictions[i], test_set.dt, test_set.dx)
    except OSError as exc:
        log.error("cannot write report: %s", exc)
        return EXIT_IO
    print(json.dumps({"samples": report.count, "aggregate": report.aggregate(),
                      "report": str(args.report)}, sort_keys=True))
    return EXIT_OK


def cmd_selftest(args) -> int:
    if getattr(args, "workers", None):
        qlayer.set_workers(args.workers)
    results = run_selftest()
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    if failed:
        log.error("self-test failed at check %r", failed[0].name)
        return EXIT_SELFTEST
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


_F0_DEFAULTS = (15.0, 45.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcseis",
                                     description="quantum-classical seismic restoration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic degraded dataset")
    gen.add_argument("--task", required=True, choices=seisdata.TASKS)
    gen.add_argument("--out", required=True)
    gen.add_argument("--n", type=int, default=100, help="number of patches")
    gen.add_argument("--height", type=int, default=64, help="time samples per patch")
    gen.add_argument("--width", type=int, default=64, help="traces per patch")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--dt", type=float, default=None, help="seconds per sample")
    gen.add_argument("--dx", type=float, default=25.0, help="meters per trace")
    gen.add_argument("--n-events", type=int, default=4)
    gen.add_argument("--noise-sigma", type=float, default=0.1)
    gen.add_argument("--f0-lo", type=float, default=None,
                     help="wavelet frequency range low end (task-dependent default)")
    gen.add_argument("--f0-hi", type=float, default=None)
    gen.add_argument("--v-lo", type=float, default=1500.0)
    gen.add_argument("--v-hi", type=float, default=4000.0)
    gen.set_defaults(func=cmd_gen_data)

    train = sub.add_parser("train", help="train from a JSON run config")
    train.add_argument("--config", required=True)
    train.add_argument("--resume", default=None, help="checkpoint to continue from")
    train.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="quantum-layer evaluation threads")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a test split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--report", required=True)
    ev.add_argument("--spectra-dir", default=None)
    ev.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ev.set_defaults(func=cmd_eval)

    st = sub.add_parser("selftest", help="run the built-in verification suite")
    st.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    st.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
