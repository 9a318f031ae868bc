from __future__ import annotations

"""
config.py
─────────
The JSON run configuration, one pydantic model per section.

Missing keys fall back to the defaults below. Unknown sections or keys, wrong
JSON types and violated invariants raise ConfigError before any work starts.
`config_schema()` is the published schema (data/config_schema.json).
"""

import json
from typing import Any, TypeVar

from pydantic import (
    BaseModel, ConfigDict, Field, StrictBool, StrictInt, StrictStr, ValidationError, model_validator,
)

from .constants import (
    BENCH_BATCHES, BENCH_REPEATS, BENCH_RESOLUTIONS, BENCH_TRAIN_STEPS, DEFAULT_BYTE_BUDGET,
    EVAL_STEPS, HIDDEN_CHANNELS, LATENT_NAFCA, MODEL_KINDS, POOL_SIZE,
    SCHEMA_VERSION, TRAIN_STEPS_MAX, TRAIN_STEPS_MIN,
)
from .corruption import CORRUPTION_KINDS
from .errors import ConfigError

Section = TypeVar("Section", bound=BaseModel)


def _require(ok: bool, message: str) -> None:
    if not ok:
        raise ValueError(message)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AEConfig(_Section):
    input_shape: tuple[StrictInt, StrictInt, StrictInt] = (32, 32, 3)
    downsample_stages: StrictInt = Field(2, ge=0)
    base_filters: StrictInt = Field(32, ge=1)
    latent_channels: StrictInt = Field(16, ge=1)
    skip_channels: StrictInt = Field(16, ge=1)

    @model_validator(mode="after")
    def _check(self) -> AEConfig:
        h, w, c = self.input_shape
        _require(min(h, w, c) >= 1, "autoencoder.input_shape entries must be >= 1")
        factor = 2 ** self.downsample_stages
        _require(h % factor == 0 and w % factor == 0,
                 f"autoencoder.input_shape {h}x{w} is not divisible by 2^{self.downsample_stages}")
        return self

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        h, w, _ = self.input_shape
        factor = 2 ** self.downsample_stages
        return h // factor, w // factor, self.latent_channels


class TransitionConfig(_Section):
    kind: StrictStr = "nafca"
    hidden_channels: StrictInt = Field(HIDDEN_CHANNELS, ge=1)
    embed_dim: StrictInt = Field(64, ge=1)
    heads: StrictInt = Field(4, ge=1)
    mlp_hidden: StrictInt = Field(128, ge=1)
    use_positional_encoding: StrictBool = False
    update_probability: float = Field(0.5, gt=0.0, le=1.0)
    # 0 selects twice the state channel count
    perception_width: StrictInt = Field(0, ge=0)
    update_width: StrictInt = Field(0, ge=0)
    dropout_keep: float = Field(0.9, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _check(self) -> TransitionConfig:
        _require(self.kind in ("vitca", "nafca"), f"transition.kind must be vitca or nafca, got {self.kind!r}")
        _require(self.embed_dim % self.heads == 0,
                 f"transition.embed_dim {self.embed_dim} is not divisible by {self.heads} heads")
        for name in ("perception_width", "update_width"):
            _require(getattr(self, name) % 2 == 0, f"transition.{name} must be even")
        return self


class TrainConfig(_Section):
    model: StrictStr = LATENT_NAFCA
    epochs: StrictInt = Field(20, ge=1)
    batch_size: StrictInt = Field(8, ge=2)
    lr: float = Field(1e-3, gt=0.0)
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0.0)
    eta_min: float = Field(1e-5, ge=0.0)
    seed: StrictInt = 0
    curriculum: StrictBool = True
    pool_size: StrictInt = Field(POOL_SIZE, ge=1)
    steps_min: StrictInt = Field(TRAIN_STEPS_MIN, ge=1)
    steps_max: StrictInt = Field(TRAIN_STEPS_MAX, ge=1)
    eval_steps: StrictInt = Field(EVAL_STEPS, ge=1)
    test_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    validation_fraction: float = Field(0.2, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check(self) -> TrainConfig:
        _require(self.model in MODEL_KINDS, f"train.model must be one of {', '.join(MODEL_KINDS)}")
        _require(all(0.0 <= b < 1.0 for b in self.betas), "train.betas must lie in [0, 1)")
        _require(self.steps_min <= self.steps_max, "train.steps_min must not exceed train.steps_max")
        return self


class LossWeights(_Section):
    w_rec_ae: float = Field(1.0, ge=0.0)
    w_dist: float = Field(1.0, ge=0.0)
    w_task: float = Field(1.0, ge=0.0)
    w_eq: float = Field(1.0, ge=0.0)
    w_rec_nca: float = Field(1.0, ge=0.0)
    w_lat: float = Field(1.0, ge=0.0)
    w_over: float = Field(1.0, ge=0.0)
    margin_alpha: float = Field(0.2, gt=0.0)
    eq_noise_var: float = Field(1e-3, ge=0.0)


class CorruptionConfig(_Section):
    kind: StrictStr = "gaussian_noise"
    # fixed severity for validation/test and for runs without curriculum
    severity: float = Field(0.1, ge=0.0)
    min_severity: float = Field(0.05, ge=0.0)
    max_severity: float = Field(0.1, ge=0.0)
    # (0, 0) disables tile-shrink-clean; large images are then resized
    tile_grid: tuple[StrictInt, StrictInt] = (0, 0)
    dedup_threshold: float = Field(1e-3, ge=0.0)
    toy_images: StrictInt = Field(16, ge=2)

    @model_validator(mode="after")
    def _check(self) -> CorruptionConfig:
        _require(self.kind in CORRUPTION_KINDS, f"corruption.kind must be one of {', '.join(CORRUPTION_KINDS)}")
        _require(self.min_severity <= self.max_severity, "corruption.min_severity must not exceed max_severity")
        _require(all(n >= 0 for n in self.tile_grid), "corruption.tile_grid entries must be >= 0")
        return self


class BenchConfig(_Section):
    models: tuple[StrictStr, ...] = Field(MODEL_KINDS, min_length=1)
    resolutions: tuple[StrictInt, ...] = Field(BENCH_RESOLUTIONS, min_length=1)
    batches: tuple[StrictInt, ...] = Field(BENCH_BATCHES, min_length=1)
    train_steps: StrictInt = Field(BENCH_TRAIN_STEPS, ge=1)
    inference_steps: StrictInt = Field(EVAL_STEPS, ge=1)
    repeats: StrictInt = Field(BENCH_REPEATS, ge=1)
    byte_budget: StrictInt = Field(DEFAULT_BYTE_BUDGET, ge=1)
    include_ae_phase: StrictBool = True

    @model_validator(mode="after")
    def _check(self) -> BenchConfig:
        _require(all(m in MODEL_KINDS for m in self.models), f"bench.models must be drawn from {', '.join(MODEL_KINDS)}")
        _require(all(r >= 4 and r % 4 == 0 for r in self.resolutions), "bench.resolutions must be multiples of 4")
        _require(all(b >= 2 for b in self.batches), "bench.batches must be >= 2")
        return self


class LncaConfig(_Section):
    autoencoder: AEConfig = Field(default_factory=AEConfig)
    transition: TransitionConfig = Field(default_factory=TransitionConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    loss_weights: LossWeights = Field(default_factory=LossWeights)
    corruption: CorruptionConfig = Field(default_factory=CorruptionConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    schema_version: StrictInt = SCHEMA_VERSION

    @model_validator(mode="after")
    def _check(self) -> LncaConfig:
        _require(self.schema_version == SCHEMA_VERSION,
                 f"config schema_version {self.schema_version} is not supported (expected {SCHEMA_VERSION})")
        return self

    def transition_for(self, model: str | None = None) -> TransitionConfig:
        """The transition settings with `kind` following the model family."""
        model = model or self.train.model
        kind = "nafca" if model == LATENT_NAFCA else "vitca"
        return with_changes(self.transition, kind=kind)


# ──────────────────────────────────────────────────────────────────────────────
# Loading and copying
# ──────────────────────────────────────────────────────────────────────────────

def _reason(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        where = ".".join(str(p) for p in e["loc"]) or "config"
        parts.append(f"{where}: {e['msg']}")
    return "; ".join(parts)


def _validated(cls: type[Section], data: Any) -> Section:
    try:
        return cls.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_reason(e)) from e


def with_changes(section: Section, **changes: Any) -> Section:
    """Validated copy of a config model with some fields replaced."""
    return _validated(type(section), {**section.model_dump(), **changes})


def config_from_dict(data: Any) -> LncaConfig:
    return _validated(LncaConfig, data)


def config_to_dict(cfg: LncaConfig) -> dict[str, Any]:
    """Plain JSON-ready dict; tuples become lists."""
    return cfg.model_dump(mode="json")


def load_config(path: str | None) -> LncaConfig:
    if path is None:
        return LncaConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e.msg} (line {e.lineno})") from e
    return config_from_dict(data)


def apply_overrides(cfg: LncaConfig, **overrides: Any) -> LncaConfig:
    """
    Command-line overrides. Keys: seed, epochs, batch, steps, model,
    byte_budget. `None` means "not given".
    """
    train: dict[str, Any] = {}
    bench: dict[str, Any] = {}
    if overrides.get("seed") is not None:
        train["seed"] = overrides["seed"]
    if overrides.get("epochs") is not None:
        train["epochs"] = overrides["epochs"]
    if overrides.get("batch") is not None:
        train["batch_size"] = overrides["batch"]
        bench["batches"] = (overrides["batch"],)
    if overrides.get("steps") is not None:
        steps = overrides["steps"]
        train.update(steps_min=steps, steps_max=steps, eval_steps=steps)
        bench.update(train_steps=steps, inference_steps=steps)
    if overrides.get("model") is not None:
        train["model"] = overrides["model"]
        bench["models"] = (overrides["model"],)
    if overrides.get("byte_budget") is not None:
        bench["byte_budget"] = overrides["byte_budget"]
    return with_changes(cfg, train=with_changes(cfg.train, **train), bench=with_changes(cfg.bench, **bench))


def config_schema() -> dict[str, Any]:
    """JSON-Schema document describing every section, key, type and default."""
    return LncaConfig.model_json_schema()
