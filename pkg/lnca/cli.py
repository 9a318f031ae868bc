from __future__ import annotations

"""
Command-line entry point.

  make-dataset   clean/corrupted pairs + manifest.jsonl
  train-ae       autoencoder phase        → ae.lnca, ae_losses.csv
  train-nca      automaton phase          → lnca.lnca, nca_losses.csv
  restore        restore a folder of images with a trained checkpoint
  eval           SSIM/PSNR/MSE report on the test split
  bench          memory/latency grid, FLOP counts, difference images

Errors are reported on stderr as one line:
  lnca: error kind=<kind> code=<exit code> reason="<text>"
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .bench import run_bench
from .checkpoint import load_autoencoder, load_model, save_model
from .config import LncaConfig, apply_overrides, load_config, with_changes
from .constants import AE_CHECKPOINT, CSV_HEADER_LINE, FULL_CHECKPOINT, MODEL_KINDS
from .corruption import CorruptionSpec, corrupt
from .dataset import Dataset, build_dataset, load_dataset, load_folder, toy_images, write_dataset
from .errors import CheckpointError, DatasetError, InvalidArgument, LncaError
from .images import list_images, load_image, resize_bilinear, save_image
from .metrics import psnr_mse, psnr_mse_per_image, ssim
from .model import LatentNCA, build_model
from .training import check_phase, derive_seed, train_ae, train_nca, write_loss_csv

log = logging.getLogger(__name__)

COMMANDS = ("make-dataset", "train-ae", "train-nca", "restore", "eval", "bench")
_TAG_EVAL = 21


def _byte_count(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a byte count: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError("byte budget must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration (defaults if omitted)")
    common.add_argument("--seed", type=int, help="override train.seed")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
    common.add_argument("--epochs", type=int, help="override train.epochs")
    common.add_argument("--batch", type=int, help="override train.batch_size (and the bench batch grid)")
    common.add_argument("--steps", type=int, help="fix every rollout step count (train, eval and bench)")
    common.add_argument("--model", choices=MODEL_KINDS, help="override train.model (and the bench model list)")
    common.add_argument("--byte-budget", type=_byte_count, metavar="BYTES", help="override bench.byte_budget")
    common.add_argument("--images", metavar="DIR", help="image folder or make-dataset output (toy set if omitted)")
    common.add_argument("--checkpoint", metavar="PATH", help="checkpoint to read")
    common.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    parser = argparse.ArgumentParser(prog="lnca", description="Latent neural cellular automata for image restoration.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "make-dataset": "write clean/corrupted image pairs and a manifest",
        "train-ae": "train the autoencoder (automaton frozen)",
        "train-nca": "train the automaton (autoencoder frozen)",
        "restore": "restore every image in --images",
        "eval": "SSIM/PSNR/MSE report on the test split",
        "bench": "peak memory and latency grid",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _config(args: argparse.Namespace) -> LncaConfig:
    cfg = load_config(args.config)
    return apply_overrides(cfg, seed=args.seed, epochs=args.epochs, batch=args.batch, steps=args.steps,
                           model=args.model, byte_budget=args.byte_budget)


def _toy_dataset(cfg: LncaConfig) -> Dataset:
    h, w, _ = cfg.autoencoder.input_shape
    images = toy_images(cfg.corruption.toy_images, size=h, seed=cfg.train.seed)
    if w != h:
        images = np.stack([resize_bilinear(im, (h, w)) for im in images])
    names = [f"toy_{i:03d}.png" for i in range(images.shape[0])]
    return build_dataset(images, names, cfg.train)


def _dataset(args: argparse.Namespace, cfg: LncaConfig) -> Dataset:
    if not args.images:
        return _toy_dataset(cfg)
    h, w, _ = cfg.autoencoder.input_shape
    return load_dataset(args.images, (h, w), cfg.corruption, cfg.train)


def _checkpoint_path(args: argparse.Namespace, default_name: str) -> str:
    return args.checkpoint or os.path.join(args.out, default_name)


# ──────────────────────────────────────────────────────────────────────────────
# Commands
# ──────────────────────────────────────────────────────────────────────────────

def cmd_make_dataset(args: argparse.Namespace, cfg: LncaConfig) -> int:
    if args.images:
        h, w, _ = cfg.autoencoder.input_shape
        images, names = load_folder(args.images, (h, w), cfg.corruption)
        dataset = build_dataset(images, names, cfg.train)
    else:
        dataset = _toy_dataset(cfg)
    write_dataset(args.out, dataset, cfg.corruption, cfg.train.seed)
    return 0


def cmd_train_ae(args: argparse.Namespace, cfg: LncaConfig) -> int:
    dataset = _dataset(args, cfg)
    model = build_model(cfg)
    check_phase(model, "ae")
    result = train_ae(model, dataset, cfg)
    save_model(os.path.join(args.out, AE_CHECKPOINT), model, cfg)
    write_loss_csv(os.path.join(args.out, "ae_losses.csv"), result.records)
    log.info("autoencoder trained: %d optimizer steps", result.optimizer_steps)
    return 0


def cmd_train_nca(args: argparse.Namespace, cfg: LncaConfig) -> int:
    dataset = _dataset(args, cfg)
    model = build_model(cfg)
    if isinstance(model, LatentNCA):
        model = load_autoencoder(_checkpoint_path(args, AE_CHECKPOINT), cfg, kind=model.kind)
    elif args.checkpoint:
        model, _ = load_model(args.checkpoint, cfg)
    result = train_nca(model, dataset, cfg)
    save_model(os.path.join(args.out, FULL_CHECKPOINT), model, cfg)
    write_loss_csv(os.path.join(args.out, "nca_losses.csv"), result.records)
    log.info("automaton trained: %d optimizer steps", result.optimizer_steps)
    return 0


def _load_trained(args: argparse.Namespace, cfg: LncaConfig):
    model, run_cfg = load_model(_checkpoint_path(args, FULL_CHECKPOINT), cfg)
    if not model.nca_trained:
        raise CheckpointError("checkpoint holds no trained automaton; run train-nca first")
    return model, run_cfg


def _restore_batches(model, images: np.ndarray, steps: int, batch_size: int, seed: int) -> np.ndarray:
    out = [model.restore(images[i:i + batch_size], steps, seed) for i in range(0, images.shape[0], batch_size)]
    return np.clip(np.concatenate(out), 0.0, 1.0)


def cmd_restore(args: argparse.Namespace, cfg: LncaConfig) -> int:
    if not args.images:
        raise InvalidArgument("restore needs --images")
    model, run_cfg = _load_trained(args, cfg)
    h, w, _ = model.input_shape
    paths = list_images(args.images)
    if not paths:
        raise DatasetError(f"no images found in {args.images}")
    images = np.stack([resize_bilinear(load_image(p), (h, w)) for p in paths]).astype(np.float32)
    restored = _restore_batches(model, images, run_cfg.train.eval_steps, run_cfg.train.batch_size,
                                derive_seed(run_cfg.train.seed, _TAG_EVAL))
    os.makedirs(args.out, exist_ok=True)
    for path, image in zip(paths, restored):
        save_image(os.path.join(args.out, os.path.basename(path)), image)
    log.info("restored %d images into %s", len(paths), args.out)
    return 0


def cmd_eval(args: argparse.Namespace, cfg: LncaConfig) -> int:
    model, run_cfg = _load_trained(args, cfg)
    h, w, _ = model.input_shape
    shape = (int(h), int(w), int(model.input_shape[2]))
    run_cfg = with_changes(run_cfg, autoencoder=with_changes(run_cfg.autoencoder, input_shape=shape))
    dataset = _dataset(args, run_cfg)
    split = "test" if dataset.split("test").shape[0] else "train"
    clean = dataset.split(split)
    names = dataset.split_names(split)

    t = run_cfg.train
    spec = CorruptionSpec(run_cfg.corruption.kind, run_cfg.corruption.severity, derive_seed(t.seed, _TAG_EVAL, 1))
    corrupted = corrupt(clean, spec)
    restored = _restore_batches(model, corrupted, t.eval_steps, t.batch_size, derive_seed(t.seed, _TAG_EVAL))

    per_ssim, mean_ssim = ssim(restored, clean)
    per_psnr = psnr_mse_per_image(restored, clean)
    os.makedirs(args.out, exist_ok=True)
    report = os.path.join(args.out, "eval_report.csv")
    with open(report, "w", encoding="utf-8", newline="") as f:
        f.write(CSV_HEADER_LINE + "\n")
        writer = csv.writer(f)
        writer.writerow(["image_id", "ssim", "psnr", "mse"])
        for name, s, (p, m) in zip(names, per_ssim, per_psnr):
            writer.writerow([name, f"{s:.6f}", "inf" if p == float("inf") else f"{p:.4f}", f"{m:.8f}"])

    baseline = ssim(corrupted, clean)[1]
    log.info("%s split, %d images: ssim %.4f (corrupted %.4f), psnr %.2f dB",
             split, clean.shape[0], mean_ssim, baseline, psnr_mse(restored, clean)[0])
    return 0


def cmd_bench(args: argparse.Namespace, cfg: LncaConfig) -> int:
    os.makedirs(args.out, exist_ok=True)
    run_bench(cfg, args.out)
    return 0


_HANDLERS = {
    "make-dataset": cmd_make_dataset,
    "train-ae": cmd_train_ae,
    "train-nca": cmd_train_nca,
    "restore": cmd_restore,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def format_error(err: LncaError) -> str:
    reason = " ".join(str(err).split()).replace('"', "'")
    return f'lnca: error kind={err.kind} code={err.exit_code} reason="{reason}"'


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        os.makedirs(args.out, exist_ok=True)
        return _HANDLERS[args.command](args, cfg)
    except LncaError as err:
        print(format_error(err), file=sys.stderr)
        return err.exit_code
    except Exception as err:
        log.debug("unexpected failure", exc_info=True)
        print(format_error(LncaError(f"{type(err).__name__}: {err}")), file=sys.stderr)
        return LncaError.exit_code
