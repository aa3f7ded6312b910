"""Named parameter store and the on-disk checkpoint container.

Parameters live in named partitions ("encoder", "decoder",
"shared_embedding") so the optimizer and the frozen-encoder training branch
can address subsets by role. Checkpoints are a single self-describing file:
a JSON header with model and tokenizer configuration plus per-parameter
metadata, followed by the raw little-endian array bytes. Round trips are
bit-exact.
"""

import json
import struct

import numpy as np

from .autodiff import Tensor

PARTITIONS = ("encoder", "decoder", "shared_embedding")

_MAGIC = b"TAEPCKPT"
_VERSION = 1


class ParameterStore:
    def __init__(self):
        self._params = {}     # name -> Tensor
        self._partition = {}  # name -> partition label

    def add(self, name, array, partition):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if partition not in PARTITIONS:
            raise ValueError(f"unknown partition {partition!r}")
        t = Tensor(np.asarray(array))
        self._params[name] = t
        self._partition[name] = partition
        return t

    def register(self, name, tensor, partition):
        """Add an existing Tensor without copying (for shared weights)."""
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if partition not in PARTITIONS:
            raise ValueError(f"unknown partition {partition!r}")
        self._params[name] = tensor
        self._partition[name] = partition
        return tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params.keys())

    def tensors(self):
        return list(self._params.values())

    def partition_of(self, name):
        return self._partition[name]

    def by_partition(self, *labels):
        return [self._params[n] for n in self._params
                if self._partition[n] in labels]

    def names_by_partition(self, *labels):
        return [n for n in self._params if self._partition[n] in labels]

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def snapshot(self):
        """Copies of all parameter values, for bitwise comparisons."""
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_values(self, values):
        for n, arr in values.items():
            t = self._params[n]
            if t.data.shape != arr.shape:
                raise ValueError(f"shape mismatch for {n!r}")
            t.data[...] = arr

    def astype(self, dtype):
        for t in self._params.values():
            t.data = t.data.astype(dtype)


def _le_dtype(dt):
    dt = np.dtype(dt)
    if dt.byteorder == ">":
        raise ValueError("big-endian arrays are not supported")
    return dt.newbyteorder("<")


def save_checkpoint(path, store, config):
    """Write parameters plus a JSON `config` blob to one file."""
    entries = []
    blobs = []
    offset = 0
    for name in store.names():
        t = store[name]
        arr = np.ascontiguousarray(t.data.astype(_le_dtype(t.data.dtype), copy=False))
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "partition": store.partition_of(name),
            "shape": list(arr.shape),
            "dtype": np.dtype(t.data.dtype).name,
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"version": _VERSION, "config": config,
                         "params": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path):
    """Return (values dict, partitions dict, config dict)."""
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header["version"] != _VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        body = f.read()
    values = {}
    partitions = {}
    for e in header["params"]:
        raw = body[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=_le_dtype(e["dtype"])).reshape(e["shape"])
        values[e["name"]] = arr.astype(e["dtype"])
        partitions[e["name"]] = e["partition"]
    return values, partitions, header["config"]
