import csv
import os
import tempfile
import unittest

from lnca.bench import (
    BENCH_COLUMNS, OVER_BUDGET, BenchRecord, bench_inference, bench_training_step, inference_flops, run_bench,
)
from lnca.config import AEConfig, BenchConfig, LncaConfig, TransitionConfig
from lnca.constants import CSV_HEADER_LINE, INPUT_VITCA, LATENT_NAFCA, LATENT_VITCA
from lnca.errors import ByteBudgetExceeded


def _small_cfg(**bench):
    defaults = dict(models=(LATENT_NAFCA,), resolutions=(16,), batches=(2,), train_steps=2, inference_steps=2,
                    repeats=1)
    defaults.update(bench)
    return LncaConfig(
        autoencoder=AEConfig(base_filters=4, latent_channels=4, skip_channels=4),
        transition=TransitionConfig(hidden_channels=4, embed_dim=8, heads=2, mlp_hidden=8),
        bench=BenchConfig(**defaults),
    )


def _read(path):
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        return header, list(csv.reader(f))


class BenchRecordTests(unittest.TestCase):
    def test_row_formatting(self):
        rec = BenchRecord(LATENT_NAFCA, (32, 32), 8, 16, 1234, 0.5, 0.25, 10)
        self.assertEqual(rec.row(), [LATENT_NAFCA, "32x32", "8", "16", "1234", "0.500000", "0.250000", "10"])
        self.assertFalse(rec.exceeded)

    def test_over_budget_row(self):
        rec = BenchRecord.over_budget(INPUT_VITCA, 64, 16, 16, 10)
        self.assertTrue(rec.exceeded)
        self.assertEqual(rec.row()[4:7], [OVER_BUDGET] * 3)
        self.assertEqual(rec.row()[1], "64x64")


class MeasurementTests(unittest.TestCase):
    def test_repeats_bookkeeping(self):
        cfg = _small_cfg()
        one = bench_training_step(cfg, LATENT_NAFCA, 16, 2, steps=2, repeats=1)
        self.assertEqual(one.repeats, 1)
        self.assertEqual(one.stddev_latency_s, 0.0)
        three = bench_inference(cfg, LATENT_NAFCA, 16, 2, steps=2, repeats=3)
        self.assertEqual(three.repeats, 3)
        self.assertGreaterEqual(three.stddev_latency_s, 0.0)
        self.assertGreater(three.mean_latency_s, 0.0)
        self.assertGreater(three.peak_state_bytes, 0)

    def test_inference_holds_less_than_training(self):
        cfg = _small_cfg()
        for kind in (LATENT_NAFCA, LATENT_VITCA, INPUT_VITCA):
            with self.subTest(kind=kind):
                train = bench_training_step(cfg, kind, 16, 2, steps=2, repeats=1)
                infer = bench_inference(cfg, kind, 16, 2, steps=2, repeats=1)
                self.assertLess(infer.peak_state_bytes, train.peak_state_bytes)

    def test_latent_training_holds_less_than_input_space(self):
        cfg = LncaConfig()
        latent = bench_training_step(cfg, LATENT_NAFCA, 32, 8, steps=16, repeats=1)
        pixels = bench_training_step(cfg, INPUT_VITCA, 32, 8, steps=16, repeats=1)
        self.assertLess(latent.peak_state_bytes, pixels.peak_state_bytes)

    def test_latent_restoration_costs_fewer_flops(self):
        cfg = _small_cfg()
        latent = inference_flops(cfg, LATENT_VITCA, 32, steps=4)
        pixels = inference_flops(cfg, INPUT_VITCA, 32, steps=4)
        self.assertGreater(latent, 0)
        self.assertLess(latent, pixels)

    def test_flops_grow_with_steps(self):
        cfg = _small_cfg()
        self.assertLess(inference_flops(cfg, LATENT_NAFCA, 16, steps=2), inference_flops(cfg, LATENT_NAFCA, 16, steps=4))

    def test_byte_budget(self):
        with self.assertRaises(ByteBudgetExceeded):
            bench_training_step(_small_cfg(), LATENT_NAFCA, 16, 2, steps=2, repeats=1, byte_budget=1000)


class GridTests(unittest.TestCase):
    def test_writes_reports(self):
        cfg = _small_cfg(models=(LATENT_NAFCA, INPUT_VITCA))
        with tempfile.TemporaryDirectory() as tmp:
            report = run_bench(cfg, tmp)
            header, rows = _read(os.path.join(tmp, "bench_training.csv"))
            self.assertEqual(header, CSV_HEADER_LINE)
            self.assertEqual(tuple(rows[0]), BENCH_COLUMNS)
            self.assertEqual([r[0] for r in rows[1:]], [LATENT_NAFCA, INPUT_VITCA])
            _, inference = _read(os.path.join(tmp, "bench_inference.csv"))
            self.assertEqual(len(inference), 3)
            _, flops = _read(os.path.join(tmp, "inference_flops.csv"))
            self.assertEqual(flops[0], ["model", "resolution", "steps", "flops_per_image"])
            self.assertEqual(flops[1][:3], [LATENT_NAFCA, "16x16", "2"])
            diffs = sorted(os.listdir(os.path.join(tmp, "diffs")))
            self.assertEqual(diffs, [f"{LATENT_NAFCA}_16_b2.pgm", f"{INPUT_VITCA}_16_b2.pgm"])
        self.assertEqual(len(report.training), 2)
        self.assertFalse(report.all_exceeded)

    def test_everything_over_budget_raises(self):
        cfg = _small_cfg(byte_budget=1000)
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ByteBudgetExceeded):
                run_bench(cfg, tmp)
            _, rows = _read(os.path.join(tmp, "bench_training.csv"))
        self.assertEqual(rows[1][4:7], [OVER_BUDGET] * 3)

    def test_grid_size(self):
        cfg = _small_cfg(resolutions=(16, 32), batches=(2, 3))
        report = run_bench(cfg)
        self.assertEqual(len(report.training), 4)
        self.assertEqual(len(report.inference), 4)
        self.assertEqual(len(report.flops), 2)


if __name__ == "__main__":
    unittest.main()
