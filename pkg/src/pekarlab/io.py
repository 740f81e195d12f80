"""Binary state container and key=value config files.

Container layout (little-endian)::

    magic    5 bytes  b"PKLB1"
    version  uint8
    itemsize uint8    8 (complex64) or 16 (complex128)
    ndim     uint8
    dims     ndim x uint64
    payload  prod(dims) complex values, C order
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from pekarlab.model import HybridState, Model, ModelConfig

MAGIC = b"PKLB1"
VERSION = 1
_DTYPES = {8: np.dtype("<c8"), 16: np.dtype("<c16")}


class ContainerError(ValueError):
    pass


def encode_array(arr: np.ndarray, precision: int = 16) -> bytes:
    if precision not in _DTYPES:
        raise ContainerError(f"precision must be 8 or 16 bytes, got {precision}")
    arr = np.ascontiguousarray(arr, dtype=_DTYPES[precision])
    header = MAGIC + struct.pack("<BBB", VERSION, precision, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + arr.tobytes()


def decode_array(data: bytes) -> np.ndarray:
    if data[:5] != MAGIC:
        raise ContainerError("bad magic")
    version, precision, ndim = struct.unpack_from("<BBB", data, 5)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if precision not in _DTYPES:
        raise ContainerError(f"bad precision byte {precision}")
    offset = 8
    dims = struct.unpack_from(f"<{ndim}Q", data, offset)
    offset += 8 * ndim
    count = int(np.prod(dims, dtype=np.int64))
    if len(data) - offset != count * precision:
        raise ContainerError("payload size does not match header")
    return np.frombuffer(data, dtype=_DTYPES[precision], offset=offset).reshape(dims).copy()


def save_array(path, arr: np.ndarray, precision: int = 16) -> None:
    Path(path).write_bytes(encode_array(arr, precision))


def load_array(path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())


def save_state(path, state: HybridState, precision: int = 16) -> None:
    save_array(path, state.coeffs, precision)


def load_state(path, model: Model) -> HybridState:
    arr = load_array(path)
    if arr.shape != (model.nx, model.nf):
        raise ContainerError(f"state shape {arr.shape} does not match model {(model.nx, model.nf)}")
    return HybridState(model, arr.astype(complex))


def write_config(path, cfg: ModelConfig) -> None:
    Path(path).write_text(cfg.to_text())


def read_config(path) -> ModelConfig:
    return ModelConfig.from_text(Path(path).read_text())
