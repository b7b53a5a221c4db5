"""Binary checkpoint format.

Little-endian layout::

    b"DECS"                     magic
    uint32                      format version
    uint32                      array count
    per array:
        uint32                  name length in bytes
        bytes                   UTF-8 name
        uint32                  ndim
        uint64 * ndim           dims
        float64 * prod(dims)    data, C order

Autoencoder layers are stored as ``encoder.<i>.weight`` / ``encoder.<i>.bias``
(and the same for ``decoder``); the last layer of each stack is linear, all
others ReLU. Clustering checkpoints add a ``centroids`` array.
"""

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"DECS"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(arrays):
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(buf):
    view = memoryview(buf)
    pos = 0

    def take(size):
        nonlocal pos
        if pos + size > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos:pos + size]
        pos += size
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, count = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    arrays = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(take(8 * size), dtype="<f8").astype(np.float64)
        arrays[name] = data.reshape(dims)
    if pos != len(view):
        raise CheckpointError("trailing bytes after last array")
    return arrays


def save(path, arrays):
    with open(path, "wb") as f:
        f.write(dumps(arrays))


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())
