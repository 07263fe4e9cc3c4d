"""Checkpoint persistence.

File layout: magic bytes ``FCAIDE1\\n``, one ASCII header line per tensor
("<name> f32 <dim> <dim> ..."), a blank line, then the raw little-endian
float32 payloads concatenated in header order. The architecture is
recovered from the parameter names and shapes on load.
"""

from __future__ import annotations

import re
from typing import Dict, Optional, Tuple

import numpy as np

from .autodiff import Tensor
from .network import NetworkConfig, NetworkParams, parameter_layout

MAGIC = b"FCAIDE1\n"

_LAYER_RE = re.compile(r"^block1\.layer(\d+)\.q\.kernel$")
_HEAD_RE = re.compile(r"^block3\.head(\d+)\.kernel$")


def save_checkpoint(params: NetworkParams, path) -> None:
    """Serialize all tensors as float32 in their build order."""
    lines = []
    payload = bytearray()
    for name, tensor in params.items():
        dims = " ".join(str(d) for d in tensor.shape)
        lines.append(f"{name} f32 {dims}")
        payload += tensor.data.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(("\n".join(lines) + "\n\n").encode("ascii"))
        fh.write(bytes(payload))


def _infer_config(entries: Dict[str, Tuple[int, ...]]) -> NetworkConfig:
    depth = 0
    width = None
    for name, shape in entries.items():
        m = _LAYER_RE.match(name)
        if m:
            depth = max(depth, int(m.group(1)))
            if m.group(1) == "1":
                width = shape[0]
    heads = sum(1 for name in entries if _HEAD_RE.match(name))
    hidden_shape = entries.get("block3.res.conv1.kernel")
    if depth == 0 or width is None or heads < 2 or hidden_shape is None:
        raise ValueError("structural mismatch: checkpoint does not describe "
                         "a complete network")
    return NetworkConfig(depth=depth, width=width, degree=heads - 1,
                         resnet_hidden=hidden_shape[0])


def load_checkpoint(path, config: Optional[NetworkConfig] = None) -> NetworkParams:
    """Load a checkpoint, validating it against the (inferred) architecture."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(MAGIC):
        raise ValueError(f"bad checkpoint magic in {path}")
    body = data[len(MAGIC):]
    sep = body.find(b"\n\n")
    if sep < 0:
        raise ValueError("malformed checkpoint: missing blank line after header")
    header, payload = body[:sep], body[sep + 2:]

    entries: Dict[str, Tuple[int, ...]] = {}
    for line in header.decode("ascii").splitlines():
        parts = line.split()
        if len(parts) < 3:
            raise ValueError(f"malformed checkpoint header line {line!r}")
        name, dtype = parts[0], parts[1]
        if dtype != "f32":
            raise ValueError(f"unsupported dtype {dtype!r} for tensor {name!r}")
        if name in entries:
            raise ValueError(f"duplicate tensor name {name!r}")
        entries[name] = tuple(int(d) for d in parts[2:])

    cfg = config if config is not None else _infer_config(entries)
    expected = parameter_layout(cfg)
    for name in entries:
        if name not in expected:
            raise ValueError(f"structural mismatch: unknown parameter {name!r} "
                             f"for config {cfg}")
    for name, shape in expected.items():
        if name not in entries:
            raise ValueError(f"structural mismatch: missing parameter {name!r}")
        if entries[name] != shape:
            raise ValueError(f"structural mismatch: {name!r} has shape "
                             f"{entries[name]}, expected {shape}")

    arrays: Dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in entries.items():  # header order defines payload order
        count = int(np.prod(shape))
        need = count * 4
        if offset + need > len(payload):
            raise ValueError(f"truncated payload for tensor {name!r}")
        arrays[name] = np.frombuffer(
            payload, dtype="<f4", count=count, offset=offset
        ).reshape(shape).astype(np.float64)
        offset += need
    if offset != len(payload):
        raise ValueError("checkpoint payload longer than the header declares")

    tensors = {
        name: Tensor(arrays[name], requires_grad=True, name=name)
        for name in expected  # canonical build order
    }
    return NetworkParams(cfg, tensors)
