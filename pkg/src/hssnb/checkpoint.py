"""Binary model checkpoints.

Layout::

    16 bytes   magic ``b"HSSNBCKPT\\0\\0\\0"`` + uint32 LE format version
    8 bytes    uint64 LE length of the JSON header
    N bytes    UTF-8 JSON header (architecture, seed, epoch, tensor table, extras)
    rest       every parameter tensor, in declaration order, float64 LE
"""

import json
import struct

import numpy as np

from .network import Architecture, build_model
from .tensor import make_rng

MAGIC = b"HSSNBCKPT\0\0\0"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, model, seed=0, epoch=0, extra=None):
    params = model.parameters()
    header = {
        "architecture": model.arch.to_dict(),
        "seed": int(seed),
        "epoch": int(epoch),
        "tensors": [[name, list(arr.shape)] for name, arr in params.items()],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(model, header)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 24 or data[:12] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", data[12:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack("<Q", data[16:24])
    header = json.loads(data[24:24 + hlen].decode("utf-8"))
    arch = Architecture.from_dict(header["architecture"])
    model = build_model(arch, make_rng(0))
    params = model.parameters()
    expected = [[k, list(v.shape)] for k, v in params.items()]
    if header["tensors"] != expected:
        raise CheckpointError(f"{path}: tensor table does not match architecture")
    offset = 24 + hlen
    for arr in params.values():
        n = arr.size * 8
        chunk = data[offset:offset + n]
        if len(chunk) != n:
            raise CheckpointError(f"{path}: truncated tensor data")
        arr[...] = np.frombuffer(chunk, dtype="<f8").reshape(arr.shape)
        offset += n
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return model, header
