"""Versioned binary container of named float64 arrays.

Layout::

    b"CMAMBACK" | u32 version | u64 header length | JSON header | array data

The JSON header holds free-form ``meta`` and one ``{name, shape, offset}``
entry per array; data are little-endian float64, C order, concatenated in
header order. Offsets are relative to the start of the data section.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import ColorMambaError

MAGIC = b"CMAMBACK"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DTYPE = np.dtype("<f8")


class CheckpointError(ColorMambaError, ValueError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.asarray(arr, dtype=_DTYPE, order="C")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = _PREFIX.size + hlen
    try:
        header = json.loads(raw[_PREFIX.size : start])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        lo = start + e["offset"]
        if lo + count * _DTYPE.itemsize > len(raw):
            raise CheckpointError(f"{path}: array {e['name']} runs past end of file")
        arrays[e["name"]] = np.frombuffer(raw, _DTYPE, count, lo).reshape(e["shape"]).astype(np.float64)
    return arrays, header["meta"]


def save_model(path, model, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta.setdefault("model", model.cfg.to_dict())
    save_arrays(path, {f"model.{k}": v for k, v in model.state_dict().items()}, meta)


def load_model(path):
    """Rebuild a ColorMamba from a checkpoint written by :func:`save_model` or :func:`save_training`."""
    from .networks import ColorMamba, ModelConfig

    arrays, meta = load_arrays(path)
    model = ColorMamba(ModelConfig(**meta["model"]))
    model.load_state_dict({k[6:]: v for k, v in arrays.items() if k.startswith("model.")})
    return model, meta


def save_training(path, state) -> None:
    """Everything needed to resume: weights, frozen encoder, optimizer moments, counters, RNG."""
    from dataclasses import asdict

    arrays = {f"model.{k}": v for k, v in state.model.state_dict().items()}
    arrays.update({f"encoder.{k}": v for k, v in state.encoder.state_dict().items()})
    arrays.update({f"opt_g.{k}": v for k, v in state.opt_g.state_arrays().items()})
    arrays.update({f"opt_d.{k}": v for k, v in state.opt_d.state_arrays().items()})
    meta = {
        "model": state.model.cfg.to_dict(),
        "train": asdict(state.cfg),
        "weights": asdict(state.weights),
        "augment": asdict(state.aug),
        "epoch": state.epoch,
        "d_steps": state.d_steps,
        "g_steps": state.g_steps,
        "opt_g_t": state.opt_g.t,
        "opt_d_t": state.opt_d.t,
        "epoch_losses": state.epoch_losses,
        "rng": state.rng.bit_generator.state,
    }
    save_arrays(path, arrays, meta)


def load_training(path):
    from .networks import ColorMamba, ModelConfig
    from .objectives import AugmentConfig, SurrogateAutoencoder
    from .training import LossWeights, TrainConfig, TrainState

    arrays, meta = load_arrays(path)

    def section(prefix):
        n = len(prefix)
        return {k[n:]: v for k, v in arrays.items() if k.startswith(prefix)}

    model = ColorMamba(ModelConfig(**meta["model"]))
    model.load_state_dict(section("model."))
    enc_state = section("encoder.")
    width = enc_state["enc1.weight"].shape[-1]
    encoder = SurrogateAutoencoder(np.random.default_rng(0), channels=3, width=width)
    encoder.load_state_dict(enc_state)
    encoder.freeze()
    aug = AugmentConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["augment"].items()})
    state = TrainState(model, TrainConfig(**meta["train"]), LossWeights(**meta["weights"]), encoder, aug)
    state.opt_g.load_state_arrays(section("opt_g."), meta["opt_g_t"])
    state.opt_d.load_state_arrays(section("opt_d."), meta["opt_d_t"])
    state.epoch = meta["epoch"]
    state.d_steps = meta["d_steps"]
    state.g_steps = meta["g_steps"]
    state.epoch_losses = list(meta["epoch_losses"])
    state.rng.bit_generator.state = meta["rng"]
    return state
