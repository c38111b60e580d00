"""Binary named-tensor archive.

Layout, all little-endian::

    b"LU2N" | version u32 | tensor count u32
    per tensor: name length u16 | UTF-8 name | ndim u8 | dims u32 * ndim | float32 data
    CRC32 (u32) of every preceding byte
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path
from typing import Mapping

import numpy as np

from .autograd import Tensor
from .exceptions import (
    BadMagicError,
    ChecksumError,
    MissingTensorError,
    ShapeConflictError,
    VersionError,
)
from .network import Network, NetworkConfig, parameter_shapes

MAGIC = b"LU2N"
VERSION = 1


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_tensors(blob: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{source}: not an LU2N checkpoint")
    if len(blob) < 16:
        raise ChecksumError(f"{source}: truncated header ({len(blob)} bytes)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise VersionError(f"{source}: format version {version}, expected {VERSION}")
    if zlib.crc32(body) != crc:
        raise ChecksumError(f"{source}: CRC32 mismatch (file truncated or corrupted)")

    out: dict[str, np.ndarray] = {}
    pos = 12
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            dims = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * n > len(body):
                raise struct.error("tensor data runs past end of file")
            out[name] = np.frombuffer(body, dtype="<f4", count=n, offset=pos).reshape(dims).copy()
            pos += 4 * n
    except (struct.error, UnicodeDecodeError) as exc:
        raise ChecksumError(f"{source}: malformed payload: {exc}") from None
    if pos != len(body):
        raise ChecksumError(f"{source}: {len(body) - pos} trailing bytes after last tensor")
    return out


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    blob = encode_tensors(tensors)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    return decode_tensors(path.read_bytes(), str(path))


def network_tensors(net: Network) -> dict[str, np.ndarray]:
    return {name: t.data for name, t in net.params.items()}


def save_weights(net: Network, path, extra: Mapping[str, np.ndarray] | None = None) -> None:
    tensors = network_tensors(net)
    if extra:
        tensors.update(extra)
    save_tensors(path, tensors)


def infer_config(tensors: Mapping[str, np.ndarray], **overrides) -> NetworkConfig:
    """Recover widths, axial kernel size and reduction from tensor shapes."""
    widths = []
    i = 0
    while f"enc{i}.pw.weight" in tensors:
        widths.append(tensors[f"enc{i}.pw.weight"].shape[0])
        i += 1
    if not widths:
        raise MissingTensorError("enc0.pw.weight")
    k = tensors["enc0.axial.h"].shape[1]
    hidden = [tensors[f"enc{j}.ca.squeeze.weight"].shape[0] for j in range(len(widths))]
    fits = [r for r in range(1, max(widths) + 1) if all(w // r == h for w, h in zip(widths, hidden))]
    # several r can floor to the same hidden sizes; prefer one dividing every width
    exact = [r for r in fits if all(w % r == 0 for w in widths)]
    reduction = (exact or fits or [1])[0]
    fields = dict(stage_widths=tuple(widths), axial_k=k, ca_reduction=reduction,
                  input_channels=tensors["enc0.pw.weight"].shape[1],
                  output_channels=tensors["head.weight"].shape[0])
    fields.update(overrides)
    return NetworkConfig(**fields)


def network_from_tensors(tensors: Mapping[str, np.ndarray], config: NetworkConfig | None = None,
                         source: str = "<tensors>", dtype=np.float32) -> Network:
    if config is None:
        config = infer_config(tensors)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name not in tensors:
            raise MissingTensorError(f"{source}: missing tensor {name!r}")
        arr = tensors[name]
        if tuple(arr.shape) != shape:
            raise ShapeConflictError(
                f"{source}: tensor {name!r} has shape {tuple(arr.shape)}, config expects {shape}")
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    return Network(config, params)


def load_weights(path, config: NetworkConfig | None = None, dtype=np.float32) -> Network:
    """Load a network. Without ``config`` the architecture is inferred from
    tensor shapes (activations take their defaults)."""
    return network_from_tensors(load_tensors(path), config, str(path), dtype)
