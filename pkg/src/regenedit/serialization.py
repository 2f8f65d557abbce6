"""Binary tensor and checkpoint IO.

Two little-endian container formats:

* single tensor, magic ``RDT1``: magic, u32 rank, u32 per-axis extents,
  then float32 payload in row-major order.
* named tensor bundle, magic ``RDMW``: magic, one version byte, then a
  run of records until end of file.  Each record is u32 name length, the
  UTF-8 name, u32 rank, u32 extents, float32 payload.  Records are written
  in sorted name order so equal content means equal bytes.

Model checkpoints are bundles holding every parameter; the architecture
is recovered from parameter shapes, so a checkpoint needs no side table.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from .denoiser import ToyDenoiser
from .errors import FormatError, ParameterError

Array = np.ndarray
PathLike = Union[str, Path]

MAGIC_TENSOR = b"RDT1"
MAGIC_BUNDLE = b"RDMW"
BUNDLE_VERSION = 1
_MAX_RANK = 8
_MAX_EXTENT = 2**31


def _pack_u32(value: int) -> bytes:
    return struct.pack("<I", value)


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file while reading {what}")
    return data


def _read_u32(f, what: str) -> int:
    return struct.unpack("<I", _read_exact(f, 4, what))[0]


def _check_array(arr: Array, what: str) -> Array:
    arr = np.asarray(arr)
    if arr.ndim > _MAX_RANK:
        raise ParameterError(f"{what}: rank {arr.ndim} exceeds {_MAX_RANK}")
    return np.ascontiguousarray(arr, dtype="<f4")


def _read_shape(f, what: str) -> tuple:
    rank = _read_u32(f, f"{what} rank")
    if rank > _MAX_RANK:
        raise FormatError(f"{what}: rank {rank} exceeds {_MAX_RANK}")
    dims = []
    for i in range(rank):
        extent = _read_u32(f, f"{what} extent {i}")
        if extent > _MAX_EXTENT:
            raise FormatError(f"{what}: extent {extent} is out of range")
        dims.append(extent)
    return tuple(dims)


def _read_payload(f, shape: tuple, what: str) -> Array:
    count = 1
    for extent in shape:
        count *= extent
    raw = _read_exact(f, 4 * count, f"{what} payload")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)


def save_tensor(path: PathLike, arr: Array) -> None:
    arr = _check_array(arr, "tensor")
    with open(path, "wb") as f:
        f.write(MAGIC_TENSOR)
        f.write(_pack_u32(arr.ndim))
        for extent in arr.shape:
            f.write(_pack_u32(extent))
        f.write(arr.tobytes(order="C"))


def load_tensor(path: PathLike) -> Array:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC_TENSOR:
            raise FormatError(f"bad tensor magic {magic!r}")
        shape = _read_shape(f, "tensor")
        arr = _read_payload(f, shape, "tensor")
        if f.read(1):
            raise FormatError("trailing bytes after tensor payload")
    return arr


def save_bundle(path: PathLike, tensors: Dict[str, Array]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC_BUNDLE)
        f.write(bytes([BUNDLE_VERSION]))
        for name in sorted(tensors):
            arr = _check_array(tensors[name], name)
            encoded = name.encode("utf-8")
            f.write(_pack_u32(len(encoded)))
            f.write(encoded)
            f.write(_pack_u32(arr.ndim))
            for extent in arr.shape:
                f.write(_pack_u32(extent))
            f.write(arr.tobytes(order="C"))


def load_bundle(path: PathLike) -> Dict[str, Array]:
    tensors: Dict[str, Array] = {}
    with open(path, "rb") as f:
        magic = _read_exact(f, 4, "magic")
        if magic != MAGIC_BUNDLE:
            raise FormatError(f"bad bundle magic {magic!r}")
        version = _read_exact(f, 1, "version")[0]
        if version != BUNDLE_VERSION:
            raise FormatError(f"unsupported bundle version {version}")
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise FormatError("truncated file while reading record header")
            (name_len,) = struct.unpack("<I", head)
            if name_len > 4096:
                raise FormatError(f"record name length {name_len} is out of range")
            name = _read_exact(f, name_len, "record name").decode("utf-8")
            shape = _read_shape(f, name)
            tensors[name] = _read_payload(f, shape, name)
    return tensors


def save_checkpoint(path: PathLike, model: ToyDenoiser) -> None:
    save_bundle(path, model.params)


def load_checkpoint(path: PathLike) -> ToyDenoiser:
    params = load_bundle(path)
    required = (
        "conv_in_w", "conv_in_b", "temb_table", "temb_w", "temb_b",
        "norm_gamma", "norm_beta", "wq", "wk", "wv", "wo",
        "conv_out_w", "conv_out_b",
    )
    missing = [name for name in required if name not in params]
    if missing:
        raise FormatError(f"checkpoint is missing tensors: {', '.join(missing)}")
    conv_in = params["conv_in_w"]
    if conv_in.ndim != 4:
        raise FormatError(f"conv_in_w has rank {conv_in.ndim}, expected 4")
    if params["wq"].ndim != 2 or params["temb_table"].ndim != 2:
        raise FormatError("projection tensors have unexpected rank")
    return ToyDenoiser(
        t_train=int(params["temb_table"].shape[0]),
        channels=int(conv_in.shape[2]),
        hidden=int(conv_in.shape[3]),
        context_dim=int(params["wq"].shape[1]),
        params=params,
    )
