"""Binary model files: versioned magic, JSON header, float64 parameter blob.

Layout:
    bytes 0..11   magic b"CHAINREPNN1\\n"
    bytes 12..19  header length as little-endian uint64
    then          UTF-8 JSON header {meta, layers, param_shapes}
    then          all parameters raveled and concatenated, little-endian f64
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import Conv1D, Dense, Flatten, ReLU, Reshape, Sigmoid, Tanh, Upsample1D
from .network import Network

__all__ = ["MAGIC", "save_model", "load_model"]

MAGIC = b"CHAINREPNN1\n"


def _build_layer(spec: dict, rng: np.random.Generator):
    kind = spec["kind"]
    if kind == "Dense":
        return Dense(spec["in_dim"], spec["out_dim"], rng, bias=spec.get("bias", True))
    if kind == "Conv1D":
        return Conv1D(
            spec["in_channels"],
            spec["out_channels"],
            spec["kernel_size"],
            rng,
            stride=spec.get("stride", 1),
            padding=spec.get("padding", 0),
        )
    if kind == "ReLU":
        return ReLU()
    if kind == "Sigmoid":
        return Sigmoid()
    if kind == "Tanh":
        return Tanh()
    if kind == "Flatten":
        return Flatten()
    if kind == "Reshape":
        return Reshape(tuple(spec["shape"]))
    if kind == "Upsample1D":
        return Upsample1D(spec["factor"])
    raise ValueError(f"unknown layer kind in model file: {kind!r}")


def save_model(network: Network, path: str | Path, meta: dict | None = None) -> None:
    params = [p for p, _ in network.param_grad_pairs()]
    header = {
        "meta": meta or {},
        "layers": network.specs(),
        "param_shapes": [list(p.shape) for p in params],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in params)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(blob)


def load_model(path: str | Path) -> tuple[Network, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a chainrep model file (bad magic {magic!r})")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        blob = fh.read()

    rng = np.random.default_rng(0)  # placeholder init, overwritten below
    network = Network([_build_layer(spec, rng) for spec in header["layers"]])
    params = [p for p, _ in network.param_grad_pairs()]
    shapes = [tuple(s) for s in header["param_shapes"]]
    if [p.shape for p in params] != shapes:
        raise ValueError(f"{path}: parameter shapes do not match layer specs")

    expected = sum(int(np.prod(s)) for s in shapes) * 8
    if len(blob) != expected:
        raise ValueError(f"{path}: parameter blob is {len(blob)} bytes, expected {expected}")
    offset = 0
    for p in params:
        n = p.size * 8
        values = np.frombuffer(blob[offset : offset + n], dtype="<f8").reshape(p.shape)
        p[...] = values
        offset += n
    return network, header["meta"]
