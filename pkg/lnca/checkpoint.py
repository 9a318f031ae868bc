from __future__ import annotations

"""
Checkpoint container.

  b"LNCA" | uint32 format version | uint32 header length | JSON header | raw buffers

The header holds the run config, schema_version, free-form metadata and, per
section ("autoencoder", "transition"), every array's name, shape, dtype,
offset and byte length. Buffers are little-endian, in header order.
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .config import LncaConfig, config_from_dict, config_to_dict
from .constants import SCHEMA_VERSION
from .errors import CheckpointError, ConfigError
from .model import InputSpaceNCA, LatentNCA, Model, build_model

log = logging.getLogger(__name__)

MAGIC = b"LNCA"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sII")


@dataclass
class Checkpoint:
    config: LncaConfig
    sections: dict[str, dict[str, np.ndarray]]
    meta: dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: str, config: LncaConfig, sections: dict[str, dict[str, np.ndarray]],
                    meta: dict[str, Any] | None = None) -> None:
    index: dict[str, list[dict[str, Any]]] = {}
    buffers: list[bytes] = []
    offset = 0
    for section, arrays in sections.items():
        entries = []
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
            raw = arr.tobytes()
            entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str,
                            "offset": offset, "nbytes": len(raw)})
            buffers.append(raw)
            offset += len(raw)
        index[section] = entries

    header = json.dumps({
        "schema_version": SCHEMA_VERSION,
        "config": config_to_dict(config),
        "meta": meta or {},
        "sections": index,
    }).encode("utf-8")

    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header)))
        f.write(header)
        for raw in buffers:
            f.write(raw)
    os.replace(tmp, path)
    log.info("checkpoint written: %s (%d bytes of weights)", path, offset)


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if len(blob) < _PREAMBLE.size:
        raise CheckpointError(f"{path} is too short to be a checkpoint")
    magic, version, header_len = _PREAMBLE.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not an lnca checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format version {version}")
    start = _PREAMBLE.size + header_len
    try:
        header = json.loads(blob[_PREAMBLE.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt checkpoint header") from e
    if header.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(f"{path}: unsupported schema_version {header.get('schema_version')}")
    try:
        config = config_from_dict(header["config"])
    except ConfigError as e:
        raise CheckpointError(f"{path}: embedded config is invalid ({e})") from e

    payload = memoryview(blob)[start:]
    sections: dict[str, dict[str, np.ndarray]] = {}
    for section, entries in header.get("sections", {}).items():
        arrays = {}
        for e in entries:
            end = e["offset"] + e["nbytes"]
            if end > len(payload):
                raise CheckpointError(f"{path}: truncated data for {section}/{e['name']}")
            arr = np.frombuffer(payload[e["offset"]:end], dtype=np.dtype(e["dtype"]))
            arrays[e["name"]] = arr.reshape(e["shape"]).astype(arr.dtype.newbyteorder("="))
        sections[section] = arrays
    return Checkpoint(config=config, sections=sections, meta=header.get("meta", {}))


# ──────────────────────────────────────────────────────────────────────────────
# Models
# ──────────────────────────────────────────────────────────────────────────────

def save_model(path: str, model: Model, config: LncaConfig) -> None:
    sections = {"transition": model.transition.state_dict()}
    meta: dict[str, Any] = {"model": model.kind, "nca_trained": model.nca_trained}
    if isinstance(model, LatentNCA):
        sections = {"autoencoder": model.autoencoder.state_dict(), **sections}
        meta["ae_trained"] = model.ae_trained
    save_checkpoint(path, config, sections, meta)


def load_model(path: str, config: LncaConfig | None = None) -> tuple[Model, LncaConfig]:
    """
    Rebuild the model stored at `path`. Architecture settings always come from
    the checkpoint; `config` only contributes the run settings (train, loss
    weights, corruption, bench).
    """
    ckpt = load_checkpoint(path)
    stored = ckpt.config
    if config is not None:
        stored = LncaConfig(
            autoencoder=stored.autoencoder,
            transition=stored.transition,
            train=config.train,
            loss_weights=config.loss_weights,
            corruption=config.corruption,
            bench=config.bench,
        )
    kind = ckpt.meta.get("model", stored.train.model)
    model = build_model(stored, kind=kind)

    if isinstance(model, LatentNCA):
        if "autoencoder" not in ckpt.sections:
            raise CheckpointError(f"{path} holds no autoencoder weights")
        model.autoencoder.load_state_dict(ckpt.sections["autoencoder"])
        model.ae_trained = bool(ckpt.meta.get("ae_trained", True))
    if "transition" in ckpt.sections and ckpt.meta.get("nca_trained", True):
        model.transition.load_state_dict(ckpt.sections["transition"])
        model.nca_trained = bool(ckpt.meta.get("nca_trained", True))
    elif isinstance(model, InputSpaceNCA):
        raise CheckpointError(f"{path} holds no trained transition weights")
    log.info("loaded %s from %s", kind, path)
    return model, stored


def load_autoencoder(path: str, config: LncaConfig, kind: str | None = None) -> LatentNCA:
    """
    A fresh latent model of `kind` (default: the run's model) around the
    trained autoencoder stored at `path`. The automaton starts untrained.
    """
    ckpt = load_checkpoint(path)
    if "autoencoder" not in ckpt.sections:
        raise CheckpointError(f"{path} holds no autoencoder weights")
    if not ckpt.meta.get("ae_trained", True):
        raise CheckpointError(f"{path} holds an untrained autoencoder")
    run = LncaConfig(
        autoencoder=ckpt.config.autoencoder,
        transition=config.transition,
        train=config.train,
        loss_weights=config.loss_weights,
        corruption=config.corruption,
        bench=config.bench,
    )
    model = build_model(run, kind=kind)
    if not isinstance(model, LatentNCA):
        raise CheckpointError(f"{model.kind} does not use an autoencoder checkpoint")
    model.autoencoder.load_state_dict(ckpt.sections["autoencoder"])
    model.ae_trained = True
    return model
