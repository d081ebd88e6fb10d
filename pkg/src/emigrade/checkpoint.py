"""EMIC checkpoint files.

Layout (little-endian): ``b"EMIC"``, u8 version (1), u8 model id, u32 epoch,
then for each parameter tensor in layer order (weights, then biases, per
conv/dense layer): u8 rank, rank x u32 dims, float32 values in row-major
order. A ``<checkpoint>.cfg`` text sidecar records the training config.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .models import build_model
from .nn import LayerState, Network, TrainConfig

MAGIC = b"EMIC"
VERSION = 1
_HEADER = struct.Struct("<4sBBI")


class CheckpointError(ValueError):
    pass


def encode(model_id: int, epoch: int, states: list[LayerState]) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, model_id, epoch)]
    for state in states:
        for p in state.params:
            parts.append(struct.pack(f"<B{p.ndim}I", p.ndim, *p.shape))
            parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(data: bytes) -> tuple[int, int, list[np.ndarray]]:
    if len(data) < _HEADER.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, model_id, epoch = _HEADER.unpack_from(data)
    if magic != MAGIC or version != VERSION:
        raise CheckpointError(f"not an EMIC v{VERSION} checkpoint")
    pos = _HEADER.size
    tensors = []
    while pos < len(data):
        rank = data[pos]
        pos += 1
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        n = int(np.prod(dims))
        if pos + 4 * n > len(data):
            raise CheckpointError("checkpoint ends inside a tensor")
        tensors.append(np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(dims).astype(np.float32))
        pos += 4 * n
    return model_id, epoch, tensors


def config_text(config: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(config).items())


def parse_config_text(text: str) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    kwargs = {}
    for line in text.splitlines():
        if "=" in line and not line.lstrip().startswith("#"):
            k, v = (s.strip() for s in line.split("=", 1))
            if k in types:
                kwargs[k] = int(v) if types[k] in ("int", int) else float(v)
    return TrainConfig(**kwargs)


def save(path, model_id: int, epoch: int, network: Network, config: TrainConfig | None = None) -> None:
    path = Path(path)
    path.write_bytes(encode(model_id, epoch, network.states))
    if config is not None:
        Path(f"{path}.cfg").write_text(config_text(config), encoding="utf-8")


def load(path) -> tuple[int, int, Network]:
    """Returns ``(model_id, epoch, network)``; shapes are checked against the architecture."""
    model_id, epoch, tensors = decode(Path(path).read_bytes())
    try:
        spec = build_model(model_id)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
    states = [LayerState(w, b) for w, b in zip(tensors[0::2], tensors[1::2])]
    if len(tensors) % 2:
        raise CheckpointError("odd number of parameter tensors")
    try:
        net = Network(spec.layers, spec.input_shape, states)
    except ValueError as exc:
        raise CheckpointError(f"{path}: checkpoint does not fit model {model_id}: {exc}") from None
    return model_id, epoch, net


def load_config(path) -> TrainConfig | None:
    side = Path(f"{path}.cfg")
    return parse_config_text(side.read_text(encoding="utf-8")) if side.exists() else None
