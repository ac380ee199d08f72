"""Binary checkpoint format.

Layout (all integers little-endian u32 unless noted):

    magic   4 bytes  b"TCTN"
    version u32      currently 1
    clen    u32      length of the config JSON blob
    config  clen bytes, JSON with sorted keys
    count   u32      number of parameter records
    then per parameter, in model order:
        nlen    u32
        name    nlen bytes utf-8
        rank    u32
        extents rank x u32
        data    prod(extents) little-endian float32

Write -> read -> write reproduces the file byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from typing import BinaryIO

import numpy as np

from .autodiff import Parameter, Tensor
from .errors import DataFormatError
from .model import TCTNConfig, TCTNModel, parameter_specs

MAGIC = b"TCTN"
VERSION = 1


def _config_blob(config: TCTNConfig) -> bytes:
    raw = dataclasses.asdict(config)
    raw["tc_kernel"] = list(raw["tc_kernel"])
    return json.dumps(raw, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataFormatError(f"checkpoint truncated while reading {what}")
    return buf


def save_model(model: TCTNModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        blob = _config_blob(model.config)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(model.parameters)))
        for p in model.parameters:
            name = p.name.encode("utf-8")
            fh.write(struct.pack("<I", len(name)))
            fh.write(name)
            arr = np.ascontiguousarray(p.tensor.data, dtype="<f4")
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_model(path, dtype=np.float32) -> TCTNModel:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise DataFormatError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        try:
            raw = json.loads(_read_exact(fh, clen, "config").decode("utf-8"))
            config = TCTNConfig(**{k: tuple(v) if k == "tc_kernel" else v for k, v in raw.items()})
        except (ValueError, TypeError) as exc:
            raise DataFormatError(f"{path}: bad config blob: {exc}") from exc
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        params: dict[str, Parameter] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "extents"))
            nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if rank else 4
            data = np.frombuffer(_read_exact(fh, nbytes, f"data of {name}"), dtype="<f4")
            arr = data.reshape(shape).astype(dtype)
            if name in params:
                raise DataFormatError(f"{path}: duplicate parameter {name}")
            params[name] = Parameter(name, Tensor(arr, requires_grad=True))
        if fh.read(1):
            raise DataFormatError(f"{path}: trailing bytes after last parameter")

    specs = parameter_specs(config)
    if list(params) != list(specs):
        raise DataFormatError(f"{path}: parameter names do not match the config")
    for name, (shape, _) in specs.items():
        if params[name].tensor.shape != shape:
            raise DataFormatError(
                f"{path}: parameter {name} has shape {params[name].tensor.shape}, expected {shape}"
            )
    model = TCTNModel(config, params)
    if not config.qkv_bias:
        for p in model.parameters:
            if ".attn.w" in p.name and p.name.endswith(".bias"):
                p.tensor.requires_grad = False
    return model
