"""Self-describing binary checkpoint container.

Layout: an 8-byte magic+version prefix, an 8-byte little-endian header
length, a JSON header (sorted keys), then raw little-endian float64
payloads for every tensor in header order. Writing is fully deterministic,
so identical models produce byte-identical files, and floats in the JSON
section round-trip exactly via repr.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .data import ALPHABET
from .encoder import EncoderConfig, EncoderParams, named_tensors, with_tensors
from .trainer import init_encoder_params

MAGIC = b"PPGK"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """The file is not a readable checkpoint of a supported version."""


def _config_to_json(config: EncoderConfig) -> dict:
    return dataclasses.asdict(config)


def _config_from_json(blob: dict) -> EncoderConfig:
    return EncoderConfig(**blob)


def save_checkpoint(
    path,
    config: EncoderConfig,
    params: EncoderParams,
    forest: dict | None = None,
) -> None:
    tensors = named_tensors(params)
    header = {
        "format_version": FORMAT_VERSION,
        "alphabet": ALPHABET,
        "config": _config_to_json(config),
        "tensors": [{"name": k, "shape": list(t.shape)} for k, t in tensors.items()],
        "forest": forest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for tensor in tensors.values():
            fh.write(np.ascontiguousarray(tensor.array, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[EncoderConfig, EncoderParams, dict | None]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    config = _config_from_json(header["config"])

    offset = 16 + header_len
    from .tensor import Tensor

    loaded: dict[str, Tensor] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        loaded[entry["name"]] = Tensor(values.copy())
        offset += count * 8

    template = init_encoder_params(config, seed=0)
    expected = set(named_tensors(template).keys())
    if expected != set(loaded.keys()):
        raise CheckpointError(
            f"{path}: tensor names do not match the config "
            f"(missing {sorted(expected - set(loaded))[:3]}, "
            f"extra {sorted(set(loaded) - expected)[:3]})"
        )
    params = with_tensors(template, loaded)
    return config, params, header.get("forest")
