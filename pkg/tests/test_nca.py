import unittest

import numpy as np

from lnca.config import AEConfig, LncaConfig, TransitionConfig
from lnca.constants import INPUT_VITCA, LATENT_NAFCA, LATENT_VITCA
from lnca.errors import ConfigError, EmptyPoolError, InvalidArgument, ShapeError
from lnca.model import InputSpaceNCA, LatentNCA, build_model
from lnca.nca import (
    NAFCA, CAState, PoolBatch, ReplayPool, ViTCA, make_transition, pool_sample, positional_encoding, rollout,
    seed_state, step_nafca, step_vitca,
)
from lnca.tensor import Tensor, no_grad


def _state(batch=1, size=8, visible=16, hidden=32, seed=0):
    rng = np.random.default_rng(seed)
    return CAState(
        Tensor(rng.uniform(size=(batch, size, size, visible)).astype(np.float32)),
        Tensor(rng.uniform(-0.5, 0.5, size=(batch, size, size, hidden)).astype(np.float32)),
    )


def _live_transition(kind, visible=16, **overrides):
    """A transition in eval mode with a random (non-zero) output head."""
    t = make_transition(TransitionConfig(kind=kind, **overrides), visible, seed=1)
    rng = np.random.default_rng(2)
    t.head.weight.data[...] = rng.standard_normal(t.head.weight.shape) * 0.1
    return t.eval()


class TransitionShapeTests(unittest.TestCase):
    def test_parameter_counts(self):
        self.assertEqual(make_transition(TransitionConfig(kind="nafca"), 16).num_parameters(), 17185)
        self.assertEqual(make_transition(TransitionConfig(kind="vitca"), 16).num_parameters(), 39472)
        with_pe = make_transition(TransitionConfig(kind="vitca", use_positional_encoding=True), 16)
        self.assertEqual(with_pe.num_parameters(), 39472 + 128)

    def test_kinds(self):
        self.assertIsInstance(make_transition(TransitionConfig(kind="nafca"), 3), NAFCA)
        self.assertIsInstance(make_transition(TransitionConfig(kind="vitca"), 3), ViTCA)

    def test_zero_head_leaves_state_untouched(self):
        for kind in ("nafca", "vitca"):
            t = make_transition(TransitionConfig(kind=kind), 16)
            s = _state()
            out = t.step(s, rng_seed=0, cell_mask=np.ones((1, 8, 8), dtype=bool))
            np.testing.assert_array_equal(out.visible.data, s.visible.data)
            np.testing.assert_array_equal(out.hidden.data, s.hidden.data)
            self.assertEqual(out.step, 1)

    def test_channel_mismatch(self):
        t = make_transition(TransitionConfig(kind="nafca"), 16)
        with self.assertRaises(ShapeError):
            t.step(_state(visible=3), rng_seed=0)

    def test_state_validation(self):
        with self.assertRaises(ShapeError):
            CAState(Tensor(np.zeros((1, 4, 4, 3))), Tensor(np.zeros((1, 5, 4, 2))))
        with self.assertRaises(InvalidArgument):
            CAState(Tensor(np.zeros((1, 4, 4, 3))), Tensor(np.zeros((1, 4, 4, 2))), step=-1)

    def test_seed_state(self):
        latent = Tensor(np.ones((2, 4, 4, 16), dtype=np.float32))
        s = seed_state(latent, 32)
        self.assertEqual(s.hidden.shape, (2, 4, 4, 32))
        self.assertFalse(np.any(s.hidden.data))
        self.assertEqual(s.step, 0)

    def test_named_steps_check_kind(self):
        nafca = make_transition(TransitionConfig(kind="nafca"), 16)
        step_nafca(_state(), nafca, 0)
        with self.assertRaises(InvalidArgument):
            step_vitca(_state(), nafca, 0)

    def test_positional_encoding(self):
        pe = positional_encoding(2, 3, 5, np.float32)
        self.assertEqual(pe.shape, (2, 3, 5, 2))
        np.testing.assert_allclose(pe.data[0, :, 0, 0], [-1.0, 0.0, 1.0])
        np.testing.assert_allclose(pe.data[1, 0, :, 1], [-1.0, -0.5, 0.0, 0.5, 1.0])


class LocalityTests(unittest.TestCase):
    def _check(self, transition, trials=100):
        rng = np.random.default_rng(42)
        base = _state(seed=7)
        mask = np.ones((1, 8, 8), dtype=bool)
        with no_grad():
            ref = transition.step(base, 0, mask)
            for _ in range(trials):
                i, j = (int(v) for v in rng.integers(0, 8, size=2))
                visible = base.visible.data.copy()
                visible[0, i, j, int(rng.integers(0, 16))] += 0.5
                out = transition.step(CAState(Tensor(visible), base.hidden), 0, mask)
                diff = np.abs(np.concatenate([out.visible.data - ref.visible.data,
                                              out.hidden.data - ref.hidden.data], axis=-1)).sum(axis=-1)[0]
                outside = np.ones((8, 8), dtype=bool)
                outside[max(0, i - 1):i + 2, max(0, j - 1):j + 2] = False
                self.assertFalse(np.any(diff[outside]), f"update leaked outside the 3x3 around {(i, j)}")
                self.assertGreater(diff[i, j], 0.0)

    def test_nafca_is_local(self):
        self._check(_live_transition("nafca"))

    def test_vitca_is_local(self):
        self._check(_live_transition("vitca"))


class StochasticUpdateTests(unittest.TestCase):
    def test_masked_cells_are_bit_exact(self):
        for kind in ("nafca", "vitca"):
            t = _live_transition(kind)
            s = _state(batch=2, seed=3)
            mask = np.random.default_rng(4).random((2, 8, 8)) < 0.5
            with no_grad():
                out = t.step(s, 0, mask)
                full = t.step(s, 0, np.ones((2, 8, 8), dtype=bool))
            np.testing.assert_array_equal(out.visible.data[~mask], s.visible.data[~mask])
            np.testing.assert_array_equal(out.hidden.data[~mask], s.hidden.data[~mask])
            np.testing.assert_array_equal(out.visible.data[mask], full.visible.data[mask])

    def test_mask_follows_update_probability(self):
        t = _live_transition("nafca", update_probability=0.5)
        s = _state(size=16)
        with no_grad():
            out = t.step(s, rng_seed=9)
        changed = np.any(out.visible.data != s.visible.data, axis=-1) | np.any(out.hidden.data != s.hidden.data, axis=-1)
        self.assertTrue(0.3 < changed.mean() < 0.7)

    def test_rollout_composes(self):
        for kind in ("nafca", "vitca"):
            t = _live_transition(kind)
            s = _state(seed=5)
            whole = rollout(t, s, 5, "eval", rng_seed=3)
            part = t.rollout(t.rollout(s, 2, "eval", rng_seed=3), 3, "eval", rng_seed=3)
            self.assertEqual(whole.step, 5)
            np.testing.assert_array_equal(whole.visible.data, part.visible.data)
            np.testing.assert_array_equal(whole.hidden.data, part.hidden.data)

    def test_train_mode_dropout_is_seeded(self):
        t = _live_transition("nafca").train()
        s = _state()
        with no_grad():
            a = t.rollout(s, 2, "train", rng_seed=1).visible.data
            b = t.rollout(s, 2, "train", rng_seed=1).visible.data
        np.testing.assert_array_equal(a, b)

    def test_eval_rollout_records_nothing_and_restores_mode(self):
        t = _live_transition("vitca").train()
        s = _state()
        s = CAState(Tensor(s.visible.data, requires_grad=True), s.hidden)
        out = t.rollout(s, 2, "eval")
        self.assertFalse(out.visible.requires_grad)
        self.assertTrue(t.training)

    def test_rollout_arguments(self):
        t = _live_transition("nafca")
        with self.assertRaises(InvalidArgument):
            t.rollout(_state(), 0)
        with self.assertRaises(InvalidArgument):
            t.rollout(_state(), 1, mode="fast")


class ReplayPoolTests(unittest.TestCase):
    @staticmethod
    def _labelled(target_ids, size=4):
        ids = np.asarray(target_ids)
        vis = np.broadcast_to(ids[:, None, None, None], (ids.size, size, size, 2)).astype(np.float32)
        return CAState(Tensor(vis), Tensor(np.zeros((ids.size, size, size, 3), dtype=np.float32)))

    def test_capacity_and_targets_over_many_phases(self):
        pool = ReplayPool(capacity=64, seed=0)
        rng = np.random.default_rng(1)
        for phase in range(1, 301):
            ids = rng.integers(0, 16, size=8)
            fresh = PoolBatch(self._labelled(ids), ids)
            batch = pool_sample(pool, fresh, "odd" if phase % 2 else "even", rng_seed=phase)
            pool.commit(batch, batch.state)
            self.assertLessEqual(len(pool), 64)
            for entry in pool.entries:
                self.assertTrue(0 <= entry.target_id < 16)
                self.assertTrue(np.all(entry.visible == entry.target_id))
        self.assertEqual(len(pool), 64)

    def test_fills_before_replacing(self):
        pool = ReplayPool(capacity=10)
        pool.store(self._labelled([0, 1, 2, 3]), [0, 1, 2, 3])
        self.assertEqual(len(pool), 4)
        pool.store(self._labelled(list(range(8))), list(range(8)))
        self.assertEqual(len(pool), 10)

    def test_overflow_never_evicts_entries_of_the_same_store(self):
        fresh = list(range(100, 108))
        for seed in range(20):
            pool = ReplayPool(capacity=10, seed=seed)
            pool.store(self._labelled([0, 1, 2, 3]), [0, 1, 2, 3])
            pool.store(self._labelled(fresh), fresh)
            kept = sorted(entry.target_id for entry in pool.entries)
            self.assertEqual(len(kept), 10)
            self.assertEqual(kept[-8:], fresh, seed)
            self.assertEqual(len(set(kept[:2]) & {0, 1, 2, 3}), 2, seed)

    def test_sample_is_distinct_and_commit_is_in_place(self):
        pool = ReplayPool(capacity=8)
        pool.store(self._labelled(range(8)), list(range(8)))
        batch = pool.sample(5, rng_seed=2)
        self.assertEqual(len(set(batch.slots.tolist())), 5)
        self.assertEqual(batch.batch_size, 5)
        np.testing.assert_array_equal(batch.target_ids, [pool.entries[int(s)].target_id for s in batch.slots])
        updated = CAState(Tensor(batch.state.visible.data + 100.0), batch.state.hidden, batch.state.step + 4)
        pool.commit(batch, updated)
        self.assertEqual(len(pool), 8)
        for slot in batch.slots:
            entry = pool.entries[int(slot)]
            self.assertTrue(np.all(entry.visible == entry.target_id + 100.0))
            self.assertEqual(entry.step, batch.state.step + 4)

    def test_sample_never_exceeds_size(self):
        pool = ReplayPool(capacity=8)
        pool.store(self._labelled([0, 1, 2]), [0, 1, 2])
        self.assertEqual(pool.sample(8, rng_seed=0).batch_size, 3)

    def test_skip_tensors_travel_with_entries(self):
        pool = ReplayPool(capacity=4)
        skip = np.arange(2 * 3, dtype=np.float32).reshape(2, 3)
        pool.store(self._labelled([5, 6]), [5, 6], skip=skip)
        batch = pool.sample(2, rng_seed=0)
        for b, target in enumerate(batch.target_ids):
            np.testing.assert_array_equal(batch.skip[b], skip[int(target) - 5])

    def test_errors(self):
        with self.assertRaises(InvalidArgument):
            ReplayPool(capacity=0)
        with self.assertRaises(EmptyPoolError):
            ReplayPool().sample(2, rng_seed=0)
        with self.assertRaises(ShapeError):
            ReplayPool().store(self._labelled([0, 1]), [0])
        with self.assertRaises(InvalidArgument):
            pool_sample(ReplayPool(), PoolBatch(self._labelled([0, 1]), np.array([0, 1])), "both", 0)


class ModelTests(unittest.TestCase):
    def test_build_model_kinds(self):
        cfg = LncaConfig()
        latent = build_model(cfg, LATENT_VITCA)
        self.assertIsInstance(latent, LatentNCA)
        self.assertIsInstance(latent.transition, ViTCA)
        self.assertEqual(latent.transition.state_channels, 48)
        self.assertIsInstance(build_model(cfg, LATENT_NAFCA).transition, NAFCA)
        pixels = build_model(cfg, INPUT_VITCA)
        self.assertIsInstance(pixels, InputSpaceNCA)
        self.assertEqual(pixels.transition.state_channels, 3 + 32)
        with self.assertRaises(ConfigError):
            build_model(cfg, "latent-unet")

    def test_unknown_kind_is_rejected_without_assertions(self):
        for kind in ("latent-unet", "vitca", "pixels-nafca"):
            with self.subTest(kind=kind), self.assertRaises(ConfigError):
                build_model(LncaConfig(), kind)

    def test_resolution_must_fit_the_downsampling(self):
        with self.assertRaises(ConfigError):
            build_model(LncaConfig(), LATENT_NAFCA, resolution=30)

    def test_resolution_override(self):
        model = build_model(LncaConfig(), LATENT_NAFCA, resolution=64)
        self.assertEqual(model.input_shape, (64, 64, 3))

    def test_latent_forward_and_restore(self):
        model = build_model(LncaConfig(autoencoder=AEConfig(input_shape=(16, 16, 3))), LATENT_NAFCA)
        images = np.random.default_rng(0).uniform(size=(2, 16, 16, 3)).astype(np.float32)
        state, enc = model.encode_state(images)
        self.assertEqual(state.visible.shape, (2, 4, 4, 16))
        self.assertEqual(state.hidden.shape, (2, 4, 4, 32))
        with no_grad():
            out = model(images, steps=2)
        self.assertEqual(out.shape, (2, 16, 16, 3))
        restored = model.restore(images, steps=3)
        self.assertEqual(restored.shape, (2, 16, 16, 3))
        self.assertFalse(model.training)
        self.assertTrue(0.0 <= restored.min() and restored.max() <= 1.0)

    def test_input_space_restore_is_clipped(self):
        model = build_model(LncaConfig(autoencoder=AEConfig(input_shape=(8, 8, 3))), INPUT_VITCA)
        model.transition.head.bias.data[...] = 5.0
        restored = model.restore(np.full((2, 8, 8, 3), 0.5, dtype=np.float32), steps=2)
        self.assertEqual(restored.shape, (2, 8, 8, 3))
        self.assertLessEqual(float(restored.max()), 1.0)


if __name__ == "__main__":
    unittest.main()
