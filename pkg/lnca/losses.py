from __future__ import annotations

"""
Training objectives.

Autoencoder phase, step 1 : w_rec_ae·REC + w_dist·DIST + w_task·TASK
Autoencoder phase, step 2 : w_eq·EQ (swapped latents/skips)
Automaton phase           : w_rec_nca·REC + w_lat·LAT + w_over·OVER

Masked terms are the plain mean over every element of the masked tensors.
"""

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .autoencoder import Autoencoder
from .config import LossWeights
from .constants import HIDDEN_RANGE, VISIBLE_RANGE
from .corruption import TripletBatch
from .errors import FrozenParameterError, InvalidArgument
from .model import LatentNCA
from .nca import CAState
from .tensor import Tensor, as_tensor, no_grad


@dataclass
class LossReport:
    total: Tensor
    terms: dict[str, float]
    weights: dict[str, float]

    def weighted_sum(self) -> float:
        return sum(self.weights[k] * v for k, v in self.terms.items())


def _report(parts: dict[str, tuple[float, Tensor]]) -> LossReport:
    total = None
    for weight, term in parts.values():
        piece = term * weight
        total = piece if total is None else total + piece
    return LossReport(
        total=total,
        terms={name: term.item() for name, (_, term) in parts.items()},
        weights={name: weight for name, (weight, _) in parts.items()},
    )


# ──────────────────────────────────────────────────────────────────────────────
# Terms
# ──────────────────────────────────────────────────────────────────────────────

def reconstruction_loss(target: Tensor | np.ndarray, output: Tensor) -> Tensor:
    return F.mse(as_tensor(target), output)


def distance_loss(anchor: Tensor, positive: Tensor, negative: Tensor, alpha: float) -> Tensor:
    """Triplet hinge on latent MSE distances: max(0, d(A, P) - d(A, N) + alpha)."""
    return F.hinge(F.mse(anchor, positive) - F.mse(anchor, negative) + alpha)


def masked_mse(target: np.ndarray, output: Tensor, mask: np.ndarray) -> Tensor:
    m = mask.astype(output.dtype)
    return F.mse(Tensor((target * m).astype(output.dtype)), output * Tensor(m))


def task_loss(positive: np.ndarray, positive_rec: Tensor, mask: np.ndarray) -> Tensor:
    return masked_mse(positive, positive_rec, mask)


def latent_loss(target_latent: Tensor, latent: Tensor) -> Tensor:
    return F.mse(target_latent, latent)


def overflow_loss(state: CAState) -> Tensor:
    """Mean L1 excess of the state over [0, 1] (visible) and [-1, 1] (hidden)."""
    cv = state.visible.shape[-1]
    ch = state.hidden.shape[-1]
    lo = [VISIBLE_RANGE[0]] * cv + [HIDDEN_RANGE[0]] * ch
    hi = [VISIBLE_RANGE[1]] * cv + [HIDDEN_RANGE[1]] * ch
    return F.l1_clip_norm(F.concat([state.visible, state.hidden]), lo, hi)


# ──────────────────────────────────────────────────────────────────────────────
# Autoencoder phase
# ──────────────────────────────────────────────────────────────────────────────

def loss_phase1_step1(batch: TripletBatch, ae: Autoencoder, w: LossWeights) -> LossReport:
    """
    Reconstruction over all three roles, latent triplet distance and masked
    task loss in one encoder pass.

    Anchor, positive and negative go through the autoencoder as a single
    3B batch, so in train mode every BatchNorm layer normalizes with (and
    updates its running statistics from) the pooled statistics of all three
    roles rather than per role.
    """
    if batch.mask is None:
        raise InvalidArgument("triplet batch has no corruption mask")
    b = batch.anchor.shape[0]
    x = Tensor(np.concatenate([batch.anchor, batch.positive, batch.negative]))
    enc = ae.encode(x)
    rec = ae.decode(enc.latent, enc.skip)
    lat_a, lat_p, lat_n = F.split(enc.latent, [b, b, b], axis=0)
    rec_p = F.narrow(rec, 0, b, 2 * b)
    return _report({
        "rec_ae": (w.w_rec_ae, reconstruction_loss(x, rec)),
        "dist": (w.w_dist, distance_loss(lat_a, lat_p, lat_n, w.margin_alpha)),
        "task": (w.w_task, task_loss(batch.positive, rec_p, batch.mask)),
    })


def loss_phase1_step2(batch: TripletBatch, ae: Autoencoder, w: LossWeights, rng_seed: int) -> LossReport:
    """
    Swap test: decode(latent_A + eps, skip_P) must give the anchor and
    decode(latent_P, skip_A) the positive, on the corrupted pixels.
    """
    b = batch.anchor.shape[0]
    enc = ae.encode(Tensor(np.concatenate([batch.anchor, batch.positive])))
    lat_a, lat_p = F.split(enc.latent, [b, b], axis=0)
    skip_a, skip_p = F.split(enc.skip, [b, b], axis=0)
    noise = np.random.default_rng(rng_seed).normal(0.0, np.sqrt(w.eq_noise_var), lat_a.shape)
    swapped = ae.decode(
        F.concat([lat_a + Tensor(noise.astype(lat_a.dtype)), lat_p], axis=0),
        F.concat([skip_p, skip_a], axis=0),
    )
    star_a, star_p = F.split(swapped, [b, b], axis=0)
    eq = masked_mse(batch.anchor, star_a, batch.mask) + masked_mse(batch.positive, star_p, batch.mask)
    return _report({"eq": (w.w_eq, eq)})


# ──────────────────────────────────────────────────────────────────────────────
# Automaton phase
# ──────────────────────────────────────────────────────────────────────────────

def phase2_terms(y: np.ndarray, restored: Tensor, target_latent: Tensor, final: CAState,
                 w: LossWeights) -> LossReport:
    return _report({
        "rec_nca": (w.w_rec_nca, reconstruction_loss(y, restored)),
        "lat": (w.w_lat, latent_loss(target_latent, final.visible)),
        "over": (w.w_over, overflow_loss(final)),
    })


def _require_frozen(ae: Autoencoder) -> None:
    if not ae.frozen:
        raise FrozenParameterError("the autoencoder must be frozen while the automaton trains")


def loss_phase2_state(final: CAState, skip: Tensor | np.ndarray, y: np.ndarray, model: LatentNCA,
                      w: LossWeights) -> LossReport:
    """Automaton losses for an already rolled-out latent state (pooled or fresh)."""
    ae = model.autoencoder
    _require_frozen(ae)
    restored = ae.decode(final.visible, as_tensor(skip))
    with no_grad():
        target_latent = ae.encode(y).latent
    return phase2_terms(y, restored, target_latent, final, w)


def loss_phase2(x: np.ndarray, y: np.ndarray, model: LatentNCA, w: LossWeights, steps: int,
                rng_seed: int = 0) -> LossReport:
    """Encode the corrupted batch, roll the automaton out in train mode and score against y."""
    _require_frozen(model.autoencoder)
    with no_grad():
        state, enc = model.encode_state(x)
    final = model.transition.rollout(state, steps, "train", rng_seed)
    return loss_phase2_state(final, enc.skip, y, model, w)


def input_space_loss(final: CAState, y: np.ndarray, w: LossWeights) -> LossReport:
    """Objective for the automaton running directly on pixels."""
    return _report({
        "rec_nca": (w.w_rec_nca, reconstruction_loss(y, final.visible)),
        "over": (w.w_over, overflow_loss(final)),
    })
