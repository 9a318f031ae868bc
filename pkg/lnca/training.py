from __future__ import annotations

"""
training.py
───────────
The two training phases.

  train_ae  : automaton frozen. Per batch, one optimizer step on the
              reconstruction/distance/task objective, then one on the
              swapped-latent equivalence objective.
  train_nca : autoencoder frozen (and in eval mode). Batches alternate between
              freshly encoded corrupted inputs (odd) and states retrieved
              from the replay pool (even); every rolled-out state goes back
              into the pool.

Both use Adam with cosine annealing stepped once per epoch and return one
loss record per (epoch, split, term).
"""

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .config import LncaConfig
from .constants import CSV_HEADER_LINE
from .corruption import CorruptionSpec, corrupt, curriculum_severity, make_triplets
from .dataset import Dataset
from .errors import CheckpointError, DatasetError, FrozenParameterError, InvalidArgument
from .losses import input_space_loss, loss_phase1_step1, loss_phase1_step2, loss_phase2_state
from .metrics import ssim
from .model import LatentNCA, Model
from .nca import PoolBatch, ReplayPool, pool_sample, seed_state
from .nn import Module
from .optim import Adam, CosineAnnealing
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

# Seed stream tags
_TAG_BATCHES = 1
_TAG_CORRUPT = 2
_TAG_EQ_NOISE = 3
_TAG_POOL = 4
_TAG_STEPS = 5
_TAG_ROLLOUT = 6
_TAG_EVAL = 7


@dataclass
class LossRecord:
    epoch: int
    split: str
    term: str
    value: float


@dataclass
class TrainResult:
    records: list[LossRecord]
    optimizer_steps: int

    def curve(self, split: str, term: str) -> list[float]:
        return [r.value for r in self.records if r.split == split and r.term == term]


def derive_seed(*parts: int) -> int:
    """Independent 32-bit seed for a (run seed, tag, ...) tuple."""
    return int(np.random.SeedSequence([abs(int(p)) for p in parts]).generate_state(1)[0])


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator | None = None) -> list[np.ndarray]:
    """Shuffled (or ordered, without rng) index batches; a trailing single-sample batch is dropped."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    return [b for b in batches if b.size >= 2]


def _severity(cfg: LncaConfig, epoch: int) -> float:
    c = cfg.corruption
    if not cfg.train.curriculum:
        return c.severity
    return curriculum_severity(epoch, cfg.train.epochs, c.min_severity, c.max_severity)


def _assert_untouched(part: Module, label: str) -> None:
    if any(p.grad is not None for p in part.parameters()):
        raise FrozenParameterError(f"{label} parameters received gradients")


def _optimizer(part: Module, cfg: LncaConfig) -> tuple[Adam, CosineAnnealing]:
    t = cfg.train
    opt = Adam(part.parameters(), lr=t.lr, betas=t.betas, eps=t.eps)
    return opt, CosineAnnealing(opt, t_max=t.epochs, eta_min=t.eta_min)


def _mean_records(epoch: int, split: str, sums: dict[str, float], count: int) -> list[LossRecord]:
    return [LossRecord(epoch, split, term, total / count) for term, total in sums.items()] if count else []


# ──────────────────────────────────────────────────────────────────────────────
# Autoencoder phase
# ──────────────────────────────────────────────────────────────────────────────

def _ae_batch_terms(triplets, model: LatentNCA, cfg: LncaConfig, eq_seed: int,
                    optimizer: Adam | None) -> dict[str, float]:
    ae = model.autoencoder
    w = cfg.loss_weights
    first = loss_phase1_step1(triplets, ae, w)
    if optimizer is not None:
        optimizer.zero_grad()
        first.total.backward()
        _assert_untouched(model.transition, "automaton")
        optimizer.step()
    second = loss_phase1_step2(triplets, ae, w, eq_seed)
    if optimizer is not None:
        optimizer.zero_grad()
        second.total.backward()
        _assert_untouched(model.transition, "automaton")
        optimizer.step()
    terms = {**first.terms, **second.terms}
    terms["total"] = first.weighted_sum() + second.weighted_sum()
    return terms


def train_ae(model: LatentNCA, dataset: Dataset, cfg: LncaConfig) -> TrainResult:
    train_images = dataset.split("train")
    if train_images.shape[0] < 2:
        raise DatasetError("autoencoder training needs at least 2 training images")
    t = cfg.train
    ae = model.autoencoder
    model.transition.freeze()
    ae.unfreeze().train()
    frozen_sum = model.transition.checksum()
    optimizer, scheduler = _optimizer(ae, cfg)
    records: list[LossRecord] = []

    for epoch in range(t.epochs):
        severity = _severity(cfg, epoch)
        rng = np.random.default_rng(derive_seed(t.seed, _TAG_BATCHES, epoch))
        sums: dict[str, float] = defaultdict(float)
        batches = iterate_batches(train_images.shape[0], t.batch_size, rng)
        for b, idx in enumerate(batches):
            spec = CorruptionSpec(cfg.corruption.kind, severity, derive_seed(t.seed, _TAG_CORRUPT, epoch, b))
            terms = _ae_batch_terms(make_triplets(train_images[idx], spec), model, cfg,
                                    derive_seed(t.seed, _TAG_EQ_NOISE, epoch, b), optimizer)
            for k, v in terms.items():
                sums[k] += v
        records += _mean_records(epoch, "train", sums, len(batches))
        records += _evaluate_ae(model, dataset.split("val"), cfg, epoch)
        scheduler.step()
        log.info("ae epoch %d/%d: loss %.5f (lr %.2e)", epoch + 1, t.epochs,
                 sums["total"] / max(1, len(batches)), optimizer.lr)

    if model.transition.checksum() != frozen_sum:
        raise FrozenParameterError("automaton parameters changed during autoencoder training")
    model.ae_trained = True
    ae.eval()
    return TrainResult(records, optimizer.t)


def _evaluate_ae(model: LatentNCA, images: np.ndarray, cfg: LncaConfig, epoch: int) -> list[LossRecord]:
    batches = iterate_batches(images.shape[0], cfg.train.batch_size)
    if not batches:
        return []
    ae = model.autoencoder
    ae.eval()
    sums: dict[str, float] = defaultdict(float)
    with no_grad():
        for b, idx in enumerate(batches):
            spec = CorruptionSpec(cfg.corruption.kind, cfg.corruption.severity, derive_seed(cfg.train.seed, _TAG_EVAL, b))
            for k, v in _ae_batch_terms(make_triplets(images[idx], spec), model, cfg,
                                        derive_seed(cfg.train.seed, _TAG_EVAL, b, 1), None).items():
                sums[k] += v
    ae.train()
    return _mean_records(epoch, "val", sums, len(batches))


# ──────────────────────────────────────────────────────────────────────────────
# Automaton phase
# ──────────────────────────────────────────────────────────────────────────────

def validation_ssim(model: Model, clean: np.ndarray, cfg: LncaConfig) -> float | None:
    """Mean SSIM(restored, clean) at the fixed severity and eval step count."""
    if clean.shape[0] == 0:
        return None
    spec = CorruptionSpec(cfg.corruption.kind, cfg.corruption.severity, derive_seed(cfg.train.seed, _TAG_EVAL))
    restored = model.restore(corrupt(clean, spec), cfg.train.eval_steps, derive_seed(cfg.train.seed, _TAG_EVAL, 1))
    return ssim(restored, clean)[1]


def _fresh_batch(model: Model, corrupted: np.ndarray, target_ids: np.ndarray) -> PoolBatch:
    if isinstance(model, LatentNCA):
        with no_grad():
            state, enc = model.encode_state(corrupted)
        return PoolBatch(state, target_ids, enc.skip.numpy(), None)
    return PoolBatch(seed_state(Tensor(corrupted), model.transition.cfg.hidden_channels), target_ids, None, None)


def train_nca(model: Model, dataset: Dataset, cfg: LncaConfig, pool: ReplayPool | None = None) -> TrainResult:
    """
    Automaton phase. For latent models the autoencoder must already be
    trained (loaded from its checkpoint) and stays frozen throughout.
    """
    t = cfg.train
    w = cfg.loss_weights
    images = dataset.images
    train_ids = dataset.splits.get("train", np.zeros(0, dtype=int))
    if train_ids.size < 2:
        raise DatasetError("automaton training needs at least 2 training images")
    latent = isinstance(model, LatentNCA)
    if latent:
        if not model.ae_trained:
            raise CheckpointError("automaton training needs a trained autoencoder checkpoint")
        model.autoencoder.freeze().eval()
        frozen_sum = model.autoencoder.checksum()
    transition = model.transition
    transition.unfreeze().train()
    pool = pool if pool is not None else ReplayPool(t.pool_size, seed=derive_seed(t.seed, _TAG_POOL))
    optimizer, scheduler = _optimizer(transition, cfg)
    records: list[LossRecord] = []
    phase_counter = 0

    for epoch in range(t.epochs):
        severity = _severity(cfg, epoch)
        rng = np.random.default_rng(derive_seed(t.seed, _TAG_BATCHES, epoch))
        step_rng = np.random.default_rng(derive_seed(t.seed, _TAG_STEPS, epoch))
        sums: dict[str, float] = defaultdict(float)
        batches = iterate_batches(train_ids.size, t.batch_size, rng)
        for b, local in enumerate(batches):
            ids = train_ids[local]
            phase = "odd" if phase_counter % 2 == 0 else "even"
            phase_counter += 1
            spec = CorruptionSpec(cfg.corruption.kind, severity, derive_seed(t.seed, _TAG_CORRUPT, epoch, b))
            fresh = _fresh_batch(model, corrupt(images[ids], spec), ids)
            batch = pool_sample(pool, fresh, phase, derive_seed(t.seed, _TAG_POOL, epoch, b))

            steps = int(step_rng.integers(t.steps_min, t.steps_max + 1))
            final = transition.rollout(batch.state, steps, "train", derive_seed(t.seed, _TAG_ROLLOUT, epoch, b))
            y = images[batch.target_ids]
            if latent:
                report = loss_phase2_state(final, batch.skip, y, model, w)
            else:
                report = input_space_loss(final, y, w)
            optimizer.zero_grad()
            report.total.backward()
            if latent:
                _assert_untouched(model.autoencoder, "autoencoder")
            optimizer.step()
            pool.commit(batch, final.detach())

            for k, v in report.terms.items():
                sums[k] += v
            sums["total"] += report.weighted_sum()
        records += _mean_records(epoch, "train", sums, len(batches))

        score = validation_ssim(model, dataset.split("val"), cfg)
        if score is not None:
            records.append(LossRecord(epoch, "val", "ssim", score))
        transition.train()
        scheduler.step()
        log.info("nca epoch %d/%d: loss %.5f, pool %d/%d%s", epoch + 1, t.epochs,
                 sums["total"] / max(1, len(batches)), len(pool), pool.capacity,
                 "" if score is None else f", val ssim {score:.4f}")

    if latent and model.autoencoder.checksum() != frozen_sum:
        raise FrozenParameterError("autoencoder parameters changed during automaton training")
    model.nca_trained = True
    return TrainResult(records, optimizer.t)


# ──────────────────────────────────────────────────────────────────────────────
# Loss curves
# ──────────────────────────────────────────────────────────────────────────────

def write_loss_csv(path: str, records: list[LossRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(CSV_HEADER_LINE + "\n")
        writer = csv.writer(f)
        writer.writerow(["epoch", "split", "term", "value"])
        for r in records:
            writer.writerow([r.epoch, r.split, r.term, f"{r.value:.8g}"])


def check_phase(model: Model, phase: str) -> None:
    if phase not in ("ae", "nca"):
        raise InvalidArgument(f"unknown training phase {phase!r}")
    if phase == "ae" and not isinstance(model, LatentNCA):
        raise InvalidArgument(f"{model.kind} has no autoencoder to train")
