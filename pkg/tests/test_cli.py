import csv
import io
import json
import os
import re
import tempfile
import unittest
from contextlib import redirect_stderr
from unittest import mock

os.environ.setdefault("SDL_VIDEODRIVER", "dummy")

from lnca.cli import COMMANDS, build_parser, format_error, run
from lnca.constants import CSV_HEADER_LINE, INPUT_VITCA, LATENT_NAFCA
from lnca.errors import ByteBudgetExceeded, ConfigError

ERROR_LINE = re.compile(r'^lnca: error kind=(\w+) code=(\d+) reason="[^"]*"$')

SMALL = {
    "autoencoder": {"input_shape": [16, 16, 3], "downsample_stages": 1, "base_filters": 4,
                    "latent_channels": 4, "skip_channels": 4},
    "transition": {"hidden_channels": 4, "embed_dim": 8, "heads": 2, "mlp_hidden": 8},
    "train": {"epochs": 1, "batch_size": 2, "steps_min": 1, "steps_max": 2, "eval_steps": 2, "pool_size": 8,
              "test_fraction": 0.34, "validation_fraction": 0.0},
    "corruption": {"toy_images": 6},
    "bench": {"resolutions": [16, 32, 48], "batches": [2, 3, 4], "train_steps": 1, "inference_steps": 1,
              "repeats": 1},
}


def _invoke(*argv):
    err = io.StringIO()
    with redirect_stderr(err):
        code = run(list(argv))
    return code, err.getvalue()


def _error_line(stderr):
    lines = [line for line in stderr.splitlines() if line.startswith("lnca: error")]
    return lines[-1] if lines else ""


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name
        self.config = os.path.join(self.tmp, "small.json")
        with open(self.config, "w", encoding="utf-8") as f:
            json.dump(SMALL, f)

    def tearDown(self):
        self._tmp.cleanup()

    def path(self, *parts):
        return os.path.join(self.tmp, *parts)


class ParserTests(unittest.TestCase):
    def test_every_command_has_the_shared_options(self):
        parser = build_parser()
        for command in COMMANDS:
            args = parser.parse_args([command, "--seed", "3", "--byte-budget", "100"])
            self.assertEqual((args.command, args.seed, args.byte_budget, args.out), (command, 3, 100, "."))

    def test_bad_arguments_exit_through_argparse(self):
        parser = build_parser()
        for argv in (["train"], ["bench", "--model", "unet"], ["bench", "--byte-budget", "0"]):
            with self.subTest(argv=argv), redirect_stderr(io.StringIO()), self.assertRaises(SystemExit):
                parser.parse_args(argv)

    def test_error_line_format(self):
        line = format_error(ConfigError('bad "value"\n in train'))
        self.assertRegex(line, ERROR_LINE)
        self.assertIn("kind=config code=2", line)
        self.assertEqual(format_error(ByteBudgetExceeded(10, 5)).split()[3], "code=4")


class ExitCodeTests(CliTestCase):
    def test_config_error_is_2(self):
        code, err = _invoke("train-ae", "--config", self.path("absent.json"), "--out", self.tmp)
        self.assertEqual(code, 2)
        m = ERROR_LINE.match(_error_line(err))
        self.assertIsNotNone(m)
        self.assertEqual(m.groups(), ("config", "2"))

    def test_invalid_override_is_2(self):
        code, _ = _invoke("train-ae", "--config", self.config, "--epochs", "0", "--out", self.tmp)
        self.assertEqual(code, 2)

    def test_missing_checkpoint_is_3(self):
        code, err = _invoke("eval", "--config", self.config, "--out", self.path("empty"))
        self.assertEqual(code, 3)
        self.assertEqual(ERROR_LINE.match(_error_line(err)).group(1), "checkpoint")

    def test_byte_budget_is_4(self):
        code, err = _invoke("bench", "--config", self.config, "--model", LATENT_NAFCA, "--byte-budget", "1000",
                            "--out", self.path("bench"))
        self.assertEqual(code, 4)
        self.assertEqual(ERROR_LINE.match(_error_line(err)).groups(), ("byte_budget", "4"))

    def test_other_errors_are_1(self):
        code, err = _invoke("train-ae", "--config", self.config, "--model", INPUT_VITCA, "--out", self.tmp)
        self.assertEqual(code, 1)
        self.assertRegex(_error_line(err), ERROR_LINE)
        code, _ = _invoke("restore", "--config", self.config, "--out", self.tmp)
        self.assertEqual(code, 1)

    def test_malformed_image_is_a_one_line_error(self):
        folder = self.path("bad_images")
        os.makedirs(folder)
        with open(os.path.join(folder, "a.ppm"), "wb") as f:
            f.write(b"P6\n16 16\n255\n" + bytes(20))
        code, err = _invoke("make-dataset", "--config", self.config, "--images", folder, "--out", self.path("ds"))
        self.assertEqual(code, 1)
        self.assertEqual(ERROR_LINE.match(_error_line(err)).groups(), ("dataset", "1"))
        self.assertNotIn("Traceback", err)

    def test_unexpected_exceptions_are_reported_not_raised(self):
        with mock.patch("lnca.cli.run_bench", side_effect=ValueError("buffer is smaller than requested size")):
            code, err = _invoke("bench", "--config", self.config, "--out", self.path("bench"))
        self.assertEqual(code, 1)
        line = _error_line(err)
        self.assertEqual(ERROR_LINE.match(line).groups(), ("runtime", "1"))
        self.assertIn("ValueError", line)
        self.assertNotIn("Traceback", err)

    def test_train_nca_without_autoencoder_is_3(self):
        code, _ = _invoke("train-nca", "--config", self.config, "--out", self.path("fresh"))
        self.assertEqual(code, 3)


class PipelineTests(CliTestCase):
    def test_end_to_end(self):
        data, run_dir, restored = self.path("data"), self.path("run"), self.path("restored")
        common = ("--config", self.config)

        self.assertEqual(_invoke("make-dataset", *common, "--out", data)[0], 0)
        with open(os.path.join(data, "manifest.jsonl"), "r", encoding="utf-8") as f:
            records = [json.loads(line) for line in f if line.strip()]
        self.assertEqual(len(records), 6)
        self.assertEqual(sum(r["split"] == "test" for r in records), 2)

        self.assertEqual(_invoke("train-ae", *common, "--images", data, "--out", run_dir)[0], 0)
        self.assertTrue(os.path.exists(os.path.join(run_dir, "ae.lnca")))
        self.assertEqual(_invoke("train-nca", *common, "--images", data, "--out", run_dir)[0], 0)
        self.assertTrue(os.path.exists(os.path.join(run_dir, "lnca.lnca")))
        for name in ("ae_losses.csv", "nca_losses.csv"):
            with open(os.path.join(run_dir, name), "r", encoding="utf-8") as f:
                self.assertEqual(f.readline().strip(), CSV_HEADER_LINE)
                self.assertEqual(f.readline().strip(), "epoch,split,term,value")

        code, _ = _invoke("restore", *common, "--images", os.path.join(data, "corrupted"),
                          "--checkpoint", os.path.join(run_dir, "lnca.lnca"), "--out", restored)
        self.assertEqual(code, 0)
        self.assertEqual(sorted(os.listdir(restored)), sorted(os.listdir(os.path.join(data, "corrupted"))))

        self.assertEqual(_invoke("eval", *common, "--images", data, "--out", run_dir)[0], 0)
        with open(os.path.join(run_dir, "eval_report.csv"), "r", encoding="utf-8") as f:
            self.assertEqual(f.readline().strip(), CSV_HEADER_LINE)
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ["image_id", "ssim", "psnr", "mse"])
        self.assertEqual(len(rows), 3)
        for row in rows[1:]:
            self.assertTrue(-1.0 <= float(row[1]) <= 1.0)

    def test_input_space_model_trains_without_autoencoder(self):
        code, _ = _invoke("train-nca", "--config", self.config, "--model", INPUT_VITCA, "--out", self.tmp)
        self.assertEqual(code, 0)
        code, _ = _invoke("eval", "--config", self.config, "--out", self.tmp)
        self.assertEqual(code, 0)

    def test_bench_grid(self):
        out = self.path("bench")
        code, _ = _invoke("bench", "--config", self.config, "--model", LATENT_NAFCA, "--out", out)
        self.assertEqual(code, 0)
        for name in ("bench_training.csv", "bench_inference.csv"):
            with open(os.path.join(out, name), "r", encoding="utf-8") as f:
                self.assertEqual(f.readline().strip(), CSV_HEADER_LINE)
                rows = list(csv.reader(f))
            self.assertEqual(len(rows), 1 + 9)
            self.assertTrue(all(r[0] == LATENT_NAFCA for r in rows[1:]))
            self.assertEqual({r[1] for r in rows[1:]}, {"16x16", "32x32", "48x48"})
        self.assertEqual(len(os.listdir(os.path.join(out, "diffs"))), 9)


if __name__ == "__main__":
    unittest.main()
