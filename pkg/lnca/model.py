from __future__ import annotations

import numpy as np

from .autoencoder import Autoencoder, EncodeOutput
from .config import AEConfig, LncaConfig, TransitionConfig, with_changes
from .constants import INPUT_VITCA, MODEL_KINDS
from .errors import ConfigError
from .nca import CAState, make_transition, seed_state
from .nn import Module
from .tensor import Tensor, as_tensor, no_grad


class LatentNCA(Module):
    """Autoencoder with a cellular automaton running on its latent lattice."""

    def __init__(self, kind: str, ae_cfg: AEConfig, tr_cfg: TransitionConfig, seed: int = 0):
        self.kind = kind
        self.autoencoder = Autoencoder(ae_cfg, seed)
        self.transition = make_transition(tr_cfg, ae_cfg.latent_channels, seed + 1)
        self.ae_trained = False
        self.nca_trained = False

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.autoencoder.cfg.input_shape)

    def encode_state(self, images: Tensor | np.ndarray) -> tuple[CAState, EncodeOutput]:
        enc = self.autoencoder.encode(images)
        return seed_state(enc.latent, self.transition.cfg.hidden_channels), enc

    def decode_state(self, state: CAState, skip: Tensor) -> Tensor:
        return self.autoencoder.decode(state.visible, skip)

    def forward(self, images: Tensor | np.ndarray, steps: int, mode: str = "train", rng_seed: int = 0) -> Tensor:
        state, enc = self.encode_state(images)
        final = self.transition.rollout(state, steps, mode, rng_seed)
        return self.decode_state(final, enc.skip)

    def restore(self, images: np.ndarray, steps: int, rng_seed: int = 0) -> np.ndarray:
        """Eval-mode restoration of an image batch; nothing is recorded for backward."""
        self.eval()
        with no_grad():
            out = self.forward(images, steps, "eval", rng_seed)
        return out.numpy()


class InputSpaceNCA(Module):
    """The cellular automaton applied straight to image pixels."""

    def __init__(self, kind: str, image_shape: tuple[int, int, int], tr_cfg: TransitionConfig, seed: int = 0):
        self.kind = kind
        self.image_shape = tuple(image_shape)
        self.transition = make_transition(tr_cfg, image_shape[2], seed + 1)
        self.nca_trained = False

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.image_shape

    def encode_state(self, images: Tensor | np.ndarray) -> CAState:
        return seed_state(as_tensor(images), self.transition.cfg.hidden_channels)

    def forward(self, images: Tensor | np.ndarray, steps: int, mode: str = "train", rng_seed: int = 0) -> Tensor:
        final = self.transition.rollout(self.encode_state(images), steps, mode, rng_seed)
        return final.visible

    def restore(self, images: np.ndarray, steps: int, rng_seed: int = 0) -> np.ndarray:
        self.eval()
        with no_grad():
            out = self.forward(images, steps, "eval", rng_seed)
        return np.clip(out.numpy(), 0.0, 1.0)


Model = LatentNCA | InputSpaceNCA


def build_model(cfg: LncaConfig, kind: str | None = None, seed: int | None = None,
                resolution: int | None = None) -> Model:
    """
    Model of the given family from a run configuration. `resolution` replaces
    the configured input height/width (benchmark grid).
    """
    kind = kind or cfg.train.model
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}")
    seed = cfg.train.seed if seed is None else seed
    ae_cfg = cfg.autoencoder
    if resolution is not None:
        ae_cfg = with_changes(ae_cfg, input_shape=(int(resolution), int(resolution), ae_cfg.input_shape[2]))
    tr_cfg = cfg.transition_for(kind)
    if kind == INPUT_VITCA:
        return InputSpaceNCA(kind, ae_cfg.input_shape, tr_cfg, seed)
    return LatentNCA(kind, ae_cfg, tr_cfg, seed)
