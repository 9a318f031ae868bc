from __future__ import annotations

"""
bench.py
────────
Efficiency harness: peak tracked state bytes and wall-clock latency of one
training step and of an inference rollout, over a model × resolution × batch
grid.

Every measured run happens inside its own `Tape`, which counts live tensor
bytes (parameters and optimizer moments are adopted up front). A run that
crosses the byte budget stops at the allocation that crossed it and the cell
is reported as "--". Each cell does repeats + 1 runs and drops the first.
"""

import csv
import logging
import os
import statistics
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import LncaConfig
from .constants import CSV_HEADER_LINE
from .corruption import CorruptionSpec, corrupt, make_triplets
from .dataset import toy_images
from .errors import ByteBudgetExceeded
from .images import write_pnm
from .losses import input_space_loss, loss_phase1_step1, loss_phase1_step2, loss_phase2
from .metrics import difference_image
from .model import LatentNCA, Model, build_model
from .optim import Adam
from .tensor import Tape, no_grad
from .training import derive_seed

log = logging.getLogger(__name__)

BENCH_COLUMNS = ("model", "resolution", "batch", "steps", "peak_state_bytes",
                 "mean_latency_s", "stddev_latency_s", "repeats")
OVER_BUDGET = "--"

# Seed stream tags (distinct from training's)
_TAG_IMAGES = 11
_TAG_ROLLOUT = 12


@dataclass
class BenchRecord:
    model: str
    resolution: tuple[int, int]
    batch: int
    steps: int
    peak_state_bytes: int | None
    mean_latency_s: float | None
    stddev_latency_s: float | None
    repeats: int

    @property
    def exceeded(self) -> bool:
        return self.peak_state_bytes is None

    @classmethod
    def over_budget(cls, model: str, resolution: int, batch: int, steps: int, repeats: int) -> BenchRecord:
        return cls(model, (resolution, resolution), batch, steps, None, None, None, repeats)

    def row(self) -> list[str]:
        def cell(v, fmt: str) -> str:
            return OVER_BUDGET if v is None else format(v, fmt)
        return [
            self.model, f"{self.resolution[0]}x{self.resolution[1]}", str(self.batch), str(self.steps),
            cell(self.peak_state_bytes, "d"), cell(self.mean_latency_s, ".6f"),
            cell(self.stddev_latency_s, ".6f"), str(self.repeats),
        ]


@dataclass
class _Phase:
    """One timed unit of work plus the long-lived arrays it keeps resident."""
    name: str
    prepare: Callable[[], None]
    step: Callable[[int], None]
    resident: Callable[[], list[np.ndarray]]


def _bench_images(cfg: LncaConfig, resolution: int, batch: int) -> tuple[np.ndarray, np.ndarray]:
    seed = derive_seed(cfg.train.seed, _TAG_IMAGES, resolution, batch)
    clean = toy_images(batch, resolution, seed)
    spec = CorruptionSpec(cfg.corruption.kind, cfg.corruption.severity, seed)
    return clean, corrupt(clean, spec)


def _prime_statistics(model: Model, clean: np.ndarray) -> None:
    """Give the batch norms running statistics so eval-mode passes work on an untrained autoencoder."""
    if isinstance(model, LatentNCA):
        model.autoencoder.train()
        with no_grad():
            model.autoencoder.forward_bypass(clean)


def _params(part) -> list[np.ndarray]:
    return [p.data for p in part.parameters()]


def _training_phases(model: Model, cfg: LncaConfig, clean: np.ndarray, corrupted: np.ndarray,
                     steps: int) -> list[_Phase]:
    w = cfg.loss_weights
    t = cfg.train
    transition = model.transition
    nca_opt = Adam(transition.parameters(), lr=t.lr, betas=t.betas, eps=t.eps)
    phases = []

    if isinstance(model, LatentNCA):
        ae = model.autoencoder
        if cfg.bench.include_ae_phase:
            ae_opt = Adam(ae.parameters(), lr=t.lr, betas=t.betas, eps=t.eps)

            def prepare_ae() -> None:
                transition.freeze()
                ae.unfreeze().train()

            def step_ae(run: int) -> None:
                spec = CorruptionSpec(cfg.corruption.kind, cfg.corruption.severity, derive_seed(t.seed, run))
                batch = make_triplets(clean, spec)
                ae_opt.zero_grad()
                loss_phase1_step1(batch, ae, w).total.backward()
                ae_opt.step()
                ae_opt.zero_grad()
                loss_phase1_step2(batch, ae, w, derive_seed(t.seed, run, 1)).total.backward()
                ae_opt.step()

            phases.append(_Phase("ae", prepare_ae, step_ae, lambda: _params(ae) + ae_opt.moments()))

        def prepare_nca() -> None:
            ae.freeze().eval()
            transition.unfreeze().train()

        def step_nca(run: int) -> None:
            nca_opt.zero_grad()
            loss_phase2(corrupted, clean, model, w, steps, derive_seed(t.seed, _TAG_ROLLOUT, run)).total.backward()
            nca_opt.step()

        phases.append(_Phase("nca", prepare_nca, step_nca,
                             lambda: _params(ae) + _params(transition) + nca_opt.moments()))
        return phases

    def prepare_input() -> None:
        transition.unfreeze().train()

    def step_input(run: int) -> None:
        nca_opt.zero_grad()
        final = transition.rollout(model.encode_state(corrupted), steps, "train",
                                   derive_seed(t.seed, _TAG_ROLLOUT, run))
        input_space_loss(final, clean, w).total.backward()
        nca_opt.step()

    phases.append(_Phase("nca", prepare_input, step_input, lambda: _params(transition) + nca_opt.moments()))
    return phases


def _summarise(model_kind: str, resolution: int, batch: int, steps: int,
               peak: int, timings: list[float]) -> BenchRecord:
    kept = timings[1:]
    spread = statistics.stdev(kept) if len(kept) > 1 else 0.0
    return BenchRecord(model_kind, (resolution, resolution), batch, steps, peak,
                       statistics.fmean(kept), spread, len(kept))


def bench_training_step(cfg: LncaConfig, model_kind: str, resolution: int, batch: int, steps: int,
                        repeats: int, byte_budget: int | None = None) -> BenchRecord:
    """
    Latency and peak bytes of full forward + loss + backward + update steps.
    For latent models the autoencoder step is included when configured: the
    latency is the sum of both phases and the peak is the larger one.
    Raises ByteBudgetExceeded when a run crosses `byte_budget`.
    """
    model = build_model(cfg, kind=model_kind, resolution=resolution)
    clean, corrupted = _bench_images(cfg, resolution, batch)
    _prime_statistics(model, clean)
    phases = _training_phases(model, cfg, clean, corrupted, steps)

    peak = 0
    timings = []
    for run in range(repeats + 1):
        elapsed = 0.0
        for phase in phases:
            phase.prepare()
            with Tape(byte_budget) as tape:
                tape.adopt(phase.resident())
                start = time.perf_counter()
                phase.step(run)
                elapsed += time.perf_counter() - start
            peak = max(peak, tape.peak_bytes)
        timings.append(elapsed)
    return _summarise(model_kind, resolution, batch, steps, peak, timings)


def _inference_runs(cfg: LncaConfig, model_kind: str, resolution: int, batch: int, steps: int,
                    repeats: int, byte_budget: int | None) -> tuple[BenchRecord, np.ndarray, np.ndarray]:
    model = build_model(cfg, kind=model_kind, resolution=resolution)
    clean, corrupted = _bench_images(cfg, resolution, batch)
    _prime_statistics(model, clean)
    seed = derive_seed(cfg.train.seed, _TAG_ROLLOUT)

    peak = 0
    timings = []
    restored = corrupted
    for _ in range(repeats + 1):
        with Tape(byte_budget) as tape:
            tape.adopt(_params(model))
            start = time.perf_counter()
            restored = model.restore(corrupted, steps, seed)
            timings.append(time.perf_counter() - start)
        peak = max(peak, tape.peak_bytes)
    return _summarise(model_kind, resolution, batch, steps, peak, timings), restored, clean


def bench_inference(cfg: LncaConfig, model_kind: str, resolution: int, batch: int, steps: int = 64,
                    repeats: int = 10, byte_budget: int | None = None) -> BenchRecord:
    """Forward-only restoration timing; nothing is recorded for backward."""
    return _inference_runs(cfg, model_kind, resolution, batch, steps, repeats, byte_budget)[0]


def inference_flops(cfg: LncaConfig, model_kind: str, resolution: int, steps: int) -> int:
    """Engine-counted floating point operations to restore one image."""
    model = build_model(cfg, kind=model_kind, resolution=resolution)
    clean, corrupted = _bench_images(cfg, resolution, 2)
    _prime_statistics(model, clean)
    with Tape() as tape:
        model.restore(corrupted[:1], steps, derive_seed(cfg.train.seed, _TAG_ROLLOUT))
    return tape.flops


# ──────────────────────────────────────────────────────────────────────────────
# Grid
# ──────────────────────────────────────────────────────────────────────────────

@dataclass
class BenchReport:
    training: list[BenchRecord]
    inference: list[BenchRecord]
    flops: list[tuple[str, int, int, int]]

    @property
    def all_exceeded(self) -> bool:
        cells = self.training + self.inference
        return bool(cells) and all(r.exceeded for r in cells)


def write_bench_csv(path: str, records: list[BenchRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(CSV_HEADER_LINE + "\n")
        writer = csv.writer(f)
        writer.writerow(BENCH_COLUMNS)
        for r in records:
            writer.writerow(r.row())


def write_flops_csv(path: str, rows: list[tuple[str, int, int, int]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(CSV_HEADER_LINE + "\n")
        writer = csv.writer(f)
        writer.writerow(["model", "resolution", "steps", "flops_per_image"])
        for model, res, steps, flops in rows:
            writer.writerow([model, f"{res}x{res}", steps, flops])


def run_bench(cfg: LncaConfig, out_dir: str | None = None) -> BenchReport:
    """
    The configured grid, one cell at a time. Writes bench_training.csv,
    bench_inference.csv, inference_flops.csv and one difference image per
    (model, resolution, batch) inference cell when `out_dir` is given.
    Raises ByteBudgetExceeded only if every cell went over budget.
    """
    b = cfg.bench
    report = BenchReport([], [], [])
    diff_dir = None
    if out_dir is not None:
        diff_dir = os.path.join(out_dir, "diffs")
        os.makedirs(diff_dir, exist_ok=True)
    smallest_overrun: ByteBudgetExceeded | None = None

    for kind in b.models:
        for res in b.resolutions:
            for batch in b.batches:
                try:
                    rec = bench_training_step(cfg, kind, res, batch, b.train_steps, b.repeats, b.byte_budget)
                except ByteBudgetExceeded as e:
                    log.info("train %s %dx%d batch %d: over budget (%d bytes)", kind, res, res, batch, e.needed)
                    smallest_overrun = e if smallest_overrun is None or e.needed < smallest_overrun.needed else smallest_overrun
                    rec = BenchRecord.over_budget(kind, res, batch, b.train_steps, b.repeats)
                else:
                    log.info("train %s %dx%d batch %d: %d bytes, %.4fs", kind, res, res, batch,
                             rec.peak_state_bytes, rec.mean_latency_s)
                report.training.append(rec)

                try:
                    rec, restored, clean = _inference_runs(cfg, kind, res, batch, b.inference_steps,
                                                           b.repeats, b.byte_budget)
                except ByteBudgetExceeded as e:
                    log.info("infer %s %dx%d batch %d: over budget (%d bytes)", kind, res, res, batch, e.needed)
                    smallest_overrun = e if smallest_overrun is None or e.needed < smallest_overrun.needed else smallest_overrun
                    rec = BenchRecord.over_budget(kind, res, batch, b.inference_steps, b.repeats)
                else:
                    log.info("infer %s %dx%d batch %d: %d bytes, %.4fs", kind, res, res, batch,
                             rec.peak_state_bytes, rec.mean_latency_s)
                    if diff_dir is not None:
                        write_pnm(os.path.join(diff_dir, f"{kind}_{res}_b{batch}.pgm"),
                                  difference_image(restored[0], clean[0]))
                report.inference.append(rec)
            report.flops.append((kind, res, b.inference_steps, inference_flops(cfg, kind, res, b.inference_steps)))

    if out_dir is not None:
        write_bench_csv(os.path.join(out_dir, "bench_training.csv"), report.training)
        write_bench_csv(os.path.join(out_dir, "bench_inference.csv"), report.inference)
        write_flops_csv(os.path.join(out_dir, "inference_flops.csv"), report.flops)
    if report.all_exceeded and smallest_overrun is not None:
        raise smallest_overrun
    return report
