import unittest

import numpy as np

from lnca.config import AEConfig, LncaConfig, LossWeights, TransitionConfig
from lnca.constants import LATENT_NAFCA
from lnca.corruption import NOISE, CorruptionSpec, make_triplets
from lnca.errors import FrozenParameterError
from lnca.gradcheck import gradcheck
from lnca.losses import (
    distance_loss, input_space_loss, latent_loss, loss_phase1_step1, loss_phase1_step2, loss_phase2, masked_mse,
    overflow_loss, reconstruction_loss, task_loss,
)
from lnca.model import build_model
from lnca.nca import CAState, seed_state
from lnca.tensor import Tensor, default_dtype


def _small_cfg():
    return LncaConfig(
        autoencoder=AEConfig(input_shape=(8, 8, 3), downsample_stages=1, base_filters=4, latent_channels=4,
                             skip_channels=4),
        transition=TransitionConfig(hidden_channels=4),
    )


def _images(n=3, seed=0):
    return np.random.default_rng(seed).uniform(0.1, 0.9, size=(n, 8, 8, 3)).astype(np.float32)


class TermTests(unittest.TestCase):
    def test_distance_equals_margin_for_equal_latents(self):
        z = Tensor(np.full((2, 2, 2, 3), 0.4, dtype=np.float32))
        self.assertAlmostEqual(distance_loss(z, z, z, 0.2).item(), 0.2, places=6)

    def test_distance_is_zero_once_margin_is_met(self):
        a = Tensor(np.zeros((1, 2, 2, 1), dtype=np.float32))
        n = Tensor(np.ones((1, 2, 2, 1), dtype=np.float32))
        self.assertEqual(distance_loss(a, a, n, 0.2).item(), 0.0)

    def test_task_loss_with_empty_mask(self):
        pos = _images()
        rec = Tensor(np.zeros_like(pos))
        self.assertEqual(task_loss(pos, rec, np.zeros(pos.shape, dtype=bool)).item(), 0.0)

    def test_masked_mse_is_mean_over_every_element(self):
        target = np.zeros((1, 2, 2, 1), dtype=np.float32)
        out = Tensor(np.ones((1, 2, 2, 1), dtype=np.float32))
        mask = np.array([True, False, False, False]).reshape(1, 2, 2, 1)
        self.assertAlmostEqual(masked_mse(target, out, mask).item(), 0.25)

    def test_overflow_zero_inside_ranges(self):
        s = CAState(Tensor(np.full((1, 2, 2, 2), 0.5, dtype=np.float32)),
                    Tensor(np.full((1, 2, 2, 3), -0.9, dtype=np.float32)))
        self.assertEqual(overflow_loss(s).item(), 0.0)

    def test_overflow_hand_value(self):
        visible = np.zeros((1, 2, 2, 1), dtype=np.float32)
        visible[0, 0, 0, 0] = 1.5
        hidden = np.zeros((1, 2, 2, 1), dtype=np.float32)
        hidden[0, 1, 1, 0] = -1.25
        # (0.5 + 0.25) over 8 elements
        self.assertAlmostEqual(overflow_loss(CAState(Tensor(visible), Tensor(hidden))).item(), 0.09375)

    def test_hidden_channels_use_the_wider_range(self):
        hidden = np.full((1, 1, 1, 2), 0.8, dtype=np.float32)
        visible = np.full((1, 1, 1, 2), 0.8, dtype=np.float32)
        self.assertEqual(overflow_loss(CAState(Tensor(visible), Tensor(hidden))).item(), 0.0)
        self.assertGreater(overflow_loss(CAState(Tensor(visible), Tensor(-hidden * 2))).item(), 0.0)

    def test_reconstruction_and_latent(self):
        y = np.zeros((1, 2, 2, 1), dtype=np.float32)
        out = Tensor(np.full((1, 2, 2, 1), 0.5, dtype=np.float32))
        self.assertAlmostEqual(reconstruction_loss(y, out).item(), 0.25)
        self.assertAlmostEqual(latent_loss(Tensor(y), out).item(), 0.25)


class LossGradcheckTests(unittest.TestCase):
    def test_distance_loss(self):
        rng = np.random.default_rng(0)
        with default_dtype(np.float64):
            for trial in range(10):
                a, p, n = (Tensor(rng.standard_normal((2, 2, 2, 2)), requires_grad=True) for _ in range(3))
                # keep the hinge active so the gradient is defined
                p.data[...] = a.data + 0.1 * rng.standard_normal(a.shape)
                result = gradcheck(lambda a, p, n: distance_loss(a, p, n, 5.0), [a, p, n], seed=trial)
                self.assertTrue(result.passed(), result.max_rel_error)

    def test_overflow_loss(self):
        rng = np.random.default_rng(1)
        with default_dtype(np.float64):
            for trial in range(10):
                v = Tensor(rng.uniform(-0.8, 1.8, (1, 3, 3, 2)), requires_grad=True)
                h = Tensor(rng.uniform(-1.8, 1.8, (1, 3, 3, 2)), requires_grad=True)
                for t in (v, h):
                    # keep clear of the kinks
                    for bound in (-1.0, 0.0, 1.0):
                        near = np.abs(t.data - bound) < 1e-3
                        t.data[near] += 1e-2
                result = gradcheck(lambda v, h: overflow_loss(CAState(v, h)), [v, h], seed=trial)
                self.assertTrue(result.passed(), result.max_rel_error)

    def test_masked_mse(self):
        rng = np.random.default_rng(2)
        with default_dtype(np.float64):
            for trial in range(10):
                out = Tensor(rng.standard_normal((2, 3, 3, 3)), requires_grad=True)
                target = rng.standard_normal((2, 3, 3, 3))
                mask = rng.random((2, 3, 3, 3)) < 0.5
                result = gradcheck(lambda o: masked_mse(target, o, mask), [out], seed=trial)
                self.assertTrue(result.passed(), result.max_rel_error)


class PhaseLossTests(unittest.TestCase):
    def _triplets(self):
        return make_triplets(_images(), CorruptionSpec(NOISE, 0.1, 3))

    def test_step1_terms_and_total(self):
        model = build_model(_small_cfg(), LATENT_NAFCA)
        report = loss_phase1_step1(self._triplets(), model.autoencoder, LossWeights(w_dist=2.0))
        self.assertEqual(set(report.terms), {"rec_ae", "dist", "task"})
        self.assertAlmostEqual(report.total.item(), report.weighted_sum(), places=5)
        self.assertEqual(report.weights["dist"], 2.0)
        report.total.backward()
        self.assertIsNotNone(model.autoencoder.encoder.stem.conv.weight.grad)
        self.assertTrue(all(p.grad is None for p in model.transition.parameters()))

    def test_step1_normalizes_over_the_joint_triplet_batch(self):
        model = build_model(_small_cfg(), LATENT_NAFCA)
        batch = self._triplets()
        stem = model.autoencoder.encoder.stem
        self.assertFalse(stem.norm.stats.ready)
        loss_phase1_step1(batch, model.autoencoder, LossWeights())
        joint = np.concatenate([batch.anchor, batch.positive, batch.negative])
        pre = stem.conv(Tensor(joint)).data
        np.testing.assert_allclose(np.ravel(stem.norm.stats.mean), pre.mean(axis=(0, 1, 2)), rtol=1e-4, atol=1e-6)
        anchor_only = stem.conv(Tensor(batch.anchor)).data.mean(axis=(0, 1, 2))
        self.assertFalse(np.allclose(np.ravel(stem.norm.stats.mean), anchor_only, rtol=1e-4, atol=1e-6))

    def test_step2_reaches_both_halves(self):
        model = build_model(_small_cfg(), LATENT_NAFCA)
        report = loss_phase1_step2(self._triplets(), model.autoencoder, LossWeights(), rng_seed=1)
        self.assertEqual(set(report.terms), {"eq"})
        self.assertGreaterEqual(report.terms["eq"], 0.0)
        report.total.backward()
        self.assertIsNotNone(model.autoencoder.decoder.out.conv.weight.grad)

    def test_phase2_needs_frozen_autoencoder(self):
        model = build_model(_small_cfg(), LATENT_NAFCA)
        with self.assertRaises(FrozenParameterError):
            loss_phase2(_images(), _images(), model, LossWeights(), steps=2)

    def test_phase2_trains_only_the_automaton(self):
        model = build_model(_small_cfg(), LATENT_NAFCA)
        model.autoencoder.freeze()
        report = loss_phase2(_images(seed=1), _images(), model, LossWeights(), steps=3, rng_seed=4)
        self.assertEqual(set(report.terms), {"rec_nca", "lat", "over"})
        report.total.backward()
        self.assertTrue(all(p.grad is None for p in model.autoencoder.parameters()))
        self.assertIsNotNone(model.transition.head.weight.grad)

    def test_input_space_terms(self):
        y = _images()
        final = seed_state(Tensor(y), 4)
        report = input_space_loss(final, y, LossWeights())
        self.assertEqual(report.terms, {"rec_nca": 0.0, "over": 0.0})


if __name__ == "__main__":
    unittest.main()
