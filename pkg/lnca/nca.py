from __future__ import annotations

"""
nca.py
──────
Cellular automaton on a BHWC lattice.

A state is `visible` channels (the image or latent being restored) plus
`hidden` working channels. One step:

  1. x = visible ⧺ hidden
  2. Δ = transition(x)               shared weights, 3×3 receptive field
  3. x' = x + Δ on cells drawn by a per-cell Bernoulli(update_probability) mask,
     x' = x bit-exactly everywhere else

The generator for step t is seeded from (rng_seed, t), so a rollout split
into pieces draws exactly the same masks and dropout as one long rollout.
"""

from contextlib import nullcontext
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import functional as F
from .config import TransitionConfig
from .constants import HIDDEN_CHANNELS
from .errors import EmptyPoolError, InvalidArgument, ShapeError
from .nn import Conv, LayerNorm, Module
from .tensor import Tensor, no_grad


@dataclass
class CAState:
    visible: Tensor
    hidden: Tensor
    step: int = 0

    def __post_init__(self) -> None:
        if self.visible.ndim != 4 or self.visible.shape[:3] != self.hidden.shape[:3]:
            raise ShapeError(f"visible {self.visible.shape} and hidden {self.hidden.shape} lattices differ")
        if self.step < 0:
            raise InvalidArgument(f"step counter must be >= 0, got {self.step}")

    @property
    def batch_size(self) -> int:
        return self.visible.shape[0]

    def detach(self) -> CAState:
        return CAState(self.visible.detach(), self.hidden.detach(), self.step)


def seed_state(latent: Tensor, hidden_channels: int = HIDDEN_CHANNELS) -> CAState:
    visible = latent if latent.requires_grad else latent.detach()
    hidden = Tensor(np.zeros(latent.shape[:-1] + (hidden_channels,), dtype=latent.dtype))
    return CAState(visible, hidden, 0)


def positional_encoding(batch: int, height: int, width: int, dtype: np.dtype) -> Tensor:
    """Two constant channels: row and column coordinate scaled to [-1, 1]."""
    rows = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    cols = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    grid = np.stack(np.meshgrid(rows, cols, indexing="ij"), axis=-1)
    return Tensor(np.broadcast_to(grid, (batch, height, width, 2)).astype(dtype))


# ──────────────────────────────────────────────────────────────────────────────
# Transition functions
# ──────────────────────────────────────────────────────────────────────────────

class Transition(Module):
    kind = ""

    def __init__(self, cfg: TransitionConfig, visible_channels: int):
        self.cfg = cfg
        self.visible_channels = visible_channels
        self.state_channels = visible_channels + cfg.hidden_channels

    def update(self, x: Tensor, rng: np.random.Generator) -> Tensor:
        """Per-cell update vector Δ with the same shape as x."""
        raise NotImplementedError

    def step(self, state: CAState, rng_seed: int, cell_mask: np.ndarray | None = None) -> CAState:
        if state.visible.shape[-1] != self.visible_channels or state.hidden.shape[-1] != self.cfg.hidden_channels:
            raise ShapeError(
                f"state has {state.visible.shape[-1]}+{state.hidden.shape[-1]} channels, "
                f"transition expects {self.visible_channels}+{self.cfg.hidden_channels}"
            )
        rng = np.random.default_rng([rng_seed, state.step])
        x = F.concat([state.visible, state.hidden])
        if cell_mask is None:
            cell_mask = rng.random(x.shape[:-1]) < self.cfg.update_probability
        delta = self.update(x, rng)
        x = F.masked_update(x, delta, cell_mask)
        visible, hidden = F.split(x, [self.visible_channels, self.cfg.hidden_channels])
        return CAState(visible, hidden, state.step + 1)

    def rollout(self, state: CAState, steps: int, mode: str = "train", rng_seed: int = 0) -> CAState:
        """
        `steps` transition steps. Train mode keeps the whole unrolled graph for
        backpropagation; eval mode disables dropout and records nothing.
        """
        if steps < 1:
            raise InvalidArgument(f"rollout needs at least one step, got {steps}")
        if mode not in ("train", "eval"):
            raise InvalidArgument(f"unknown mode {mode!r}")
        was_training = self.training
        self.train(mode == "train")
        try:
            with no_grad() if mode == "eval" else nullcontext():
                for _ in range(steps):
                    state = self.step(state, rng_seed)
        finally:
            self.train(was_training)
        return state

    def forward(self, state: CAState, rng_seed: int) -> CAState:
        return self.step(state, rng_seed)


class NAFCA(Transition):
    """Attention-free transition: gated perception block, update block, head."""

    kind = "nafca"

    def __init__(self, cfg: TransitionConfig, visible_channels: int, rng: np.random.Generator):
        super().__init__(cfg, visible_channels)
        c = self.state_channels
        pw = cfg.perception_width or 2 * c
        uw = cfg.update_width or 2 * c
        self.perceive_norm = LayerNorm(c)
        self.perceive_in = Conv(c, pw, 1, rng=rng)
        self.gate = Conv(pw // 2, 1, 3, rng=rng)
        self.perceive_out = Conv(pw // 2, c, 1, rng=rng)
        self.update_norm = LayerNorm(c)
        self.update_in = Conv(c, uw, 1, rng=rng)
        self.update_out = Conv(uw // 2, c, 1, rng=rng)
        self.head_norm = LayerNorm(c)
        self.head = Conv(c, c, 1, rng=rng, zero_init=True)

    def update(self, x: Tensor, rng: np.random.Generator) -> Tensor:
        keep = self.cfg.dropout_keep
        h = F.simple_gate(self.perceive_in(self.perceive_norm(x)))
        h = F.scale_cells(h, self.gate(h))
        x = x + F.dropout(self.perceive_out(h), keep, self.training, rng)

        h = F.simple_gate(self.update_in(self.update_norm(x)))
        x = x + F.dropout(self.update_out(h), keep, self.training, rng)
        return self.head(self.head_norm(x))


class ViTCA(Transition):
    """Transformer transition with self-attention restricted to the Moore neighbourhood."""

    kind = "vitca"

    def __init__(self, cfg: TransitionConfig, visible_channels: int, rng: np.random.Generator):
        super().__init__(cfg, visible_channels)
        c = self.state_channels
        d = cfg.embed_dim
        self.embed = Conv(c + (2 if cfg.use_positional_encoding else 0), d, 1, rng=rng)
        self.norm1 = LayerNorm(d)
        self.query = Conv(d, d, 1, bias=False, rng=rng)
        self.key = Conv(d, d, 1, bias=False, rng=rng)
        self.value = Conv(d, d, 1, bias=False, rng=rng)
        self.output = Conv(d, d, 1, bias=False, rng=rng)
        self.norm2 = LayerNorm(d)
        self.mlp_in = Conv(d, cfg.mlp_hidden, 1, rng=rng)
        self.mlp_out = Conv(cfg.mlp_hidden, d, 1, rng=rng)
        self.head = Conv(d, c, 1, rng=rng, zero_init=True)

    def update(self, x: Tensor, rng: np.random.Generator) -> Tensor:
        if self.cfg.use_positional_encoding:
            b, h, w, _ = x.shape
            x = F.concat([x, positional_encoding(b, h, w, x.dtype)])
        e = self.embed(x)
        weights = F.AttentionWeights(self.query.weight, self.key.weight, self.value.weight, self.output.weight)
        e = e + F.attention_local(self.norm1(e), weights, self.cfg.heads)
        e = e + self.mlp_out(F.activation(self.mlp_in(self.norm2(e)), "gelu"))
        return self.head(e)


def make_transition(cfg: TransitionConfig, visible_channels: int, seed: int = 0) -> Transition:
    rng = np.random.default_rng(seed)
    if cfg.kind == "nafca":
        return NAFCA(cfg, visible_channels, rng)
    return ViTCA(cfg, visible_channels, rng)


def _require_kind(transition: Transition, kind: str) -> None:
    if transition.kind != kind:
        raise InvalidArgument(f"transition is {transition.kind!r}, not {kind!r}")


def step_vitca(state: CAState, transition: Transition, rng_seed: int,
               cell_mask: np.ndarray | None = None) -> CAState:
    _require_kind(transition, "vitca")
    return transition.step(state, rng_seed, cell_mask)


def step_nafca(state: CAState, transition: Transition, rng_seed: int,
               cell_mask: np.ndarray | None = None) -> CAState:
    _require_kind(transition, "nafca")
    return transition.step(state, rng_seed, cell_mask)


def rollout(transition: Transition, state: CAState, steps: int, mode: str = "train", rng_seed: int = 0) -> CAState:
    return transition.rollout(state, steps, mode, rng_seed)


# ──────────────────────────────────────────────────────────────────────────────
# Replay pool
# ──────────────────────────────────────────────────────────────────────────────

@dataclass
class PoolEntry:
    visible: np.ndarray
    hidden: np.ndarray
    step: int
    target_id: int
    skip: np.ndarray | None = None


@dataclass
class PoolBatch:
    """A batch of states plus where they came from. `slots` is None for fresh states."""
    state: CAState
    target_ids: np.ndarray
    skip: np.ndarray | None = None
    slots: np.ndarray | None = None

    @property
    def batch_size(self) -> int:
        return self.state.batch_size


class ReplayPool:
    def __init__(self, capacity: int = 1024, seed: int = 0):
        if capacity < 1:
            raise InvalidArgument(f"pool capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.entries: list[PoolEntry] = []
        self._rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self.entries)

    def store(self, state: CAState, target_ids: Sequence[int], skip: np.ndarray | None = None,
              slots: Sequence[int] | None = None) -> None:
        """
        Put a batch of states into the pool. With `slots`, each state overwrites
        the entry it was sampled from; otherwise states are appended and, once
        the pool is full, replace distinct randomly chosen entries that were
        already there before this call.
        """
        if len(target_ids) != state.batch_size:
            raise ShapeError(f"{len(target_ids)} target ids for a batch of {state.batch_size}")
        new = [
            PoolEntry(
                visible=state.visible.data[b].copy(),
                hidden=state.hidden.data[b].copy(),
                step=state.step,
                target_id=int(target_ids[b]),
                skip=None if skip is None else np.array(skip[b], copy=True),
            )
            for b in range(state.batch_size)
        ]
        if slots is not None:
            for slot, entry in zip(slots, new):
                self.entries[int(slot)] = entry
            return

        new = new[-self.capacity:]
        existing = len(self.entries)
        room = self.capacity - existing
        self.entries.extend(new[:room])
        overflow = new[room:] if room < len(new) else []
        if overflow:
            victims = self._rng.choice(existing, size=len(overflow), replace=False)
            for slot, entry in zip(victims, overflow):
                self.entries[int(slot)] = entry

    def sample(self, batch_size: int, rng_seed: int) -> PoolBatch:
        """Up to `batch_size` distinct entries, drawn uniformly."""
        if not self.entries:
            raise EmptyPoolError("cannot sample from an empty replay pool")
        rng = np.random.default_rng(rng_seed)
        slots = rng.choice(len(self.entries), size=min(batch_size, len(self.entries)), replace=False)
        picked = [self.entries[int(s)] for s in slots]
        state = CAState(
            Tensor(np.stack([e.visible for e in picked])),
            Tensor(np.stack([e.hidden for e in picked])),
            max(e.step for e in picked),
        )
        skip = None if picked[0].skip is None else np.stack([e.skip for e in picked])
        return PoolBatch(state, np.array([e.target_id for e in picked]), skip, slots)

    def commit(self, batch: PoolBatch, updated: CAState) -> None:
        """Store the updated states of a batch (new entries for fresh states, in place for pooled ones)."""
        self.store(updated, batch.target_ids, batch.skip, batch.slots)


def pool_sample(pool: ReplayPool, fresh: PoolBatch, phase: str, rng_seed: int) -> PoolBatch:
    """Odd phase: the freshly seeded batch. Even phase: a batch of the same size from the pool."""
    if phase == "odd":
        return fresh
    if phase == "even":
        return pool.sample(fresh.batch_size, rng_seed)
    raise InvalidArgument(f"pool phase must be 'odd' or 'even', got {phase!r}")
