"""Named parameter storage, seeded initialization and checkpoint files."""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import CheckpointError, ShapeError
from .tensor import DTYPE

FORMAT_VERSION = 1
_MAGIC = b"TLJDCKPT"


class ParamStore:
    """Ordered mapping ``name -> (value, gradient)`` of float64 arrays.

    Initialization draws come from one generator seeded with ``rng_seed``,
    consumed in registration order, so the same sequence of ``add_*`` calls
    always yields the same values.
    """

    def __init__(self, rng_seed=0):
        self.rng_seed = int(rng_seed)
        self._rng = np.random.default_rng(self.rng_seed)
        self._values = {}
        self._grads = {}

    def __contains__(self, name):
        return name in self._values

    def __len__(self):
        return len(self._values)

    def names(self):
        return list(self._values)

    def value(self, name):
        return self._values[name]

    def grad(self, name):
        return self._grads[name]

    def shape(self, name):
        return self._values[name].shape

    def size(self):
        return int(sum(v.size for v in self._values.values()))

    def add(self, name, value):
        if name in self._values:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=DTYPE)
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)
        return value

    def add_uniform(self, name, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(name, self._rng.uniform(-bound, bound, size=shape))

    def add_zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def add_ones(self, name, shape):
        return self.add(name, np.ones(shape))

    def set_value(self, name, value):
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != self._values[name].shape:
            raise ShapeError(f"{name}: value shape {value.shape} != {self._values[name].shape}")
        self._values[name] = value.copy()

    def set_grad(self, name, grad):
        ref = self._values[name]
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.ndim == 0:
            grad = np.full(ref.shape, float(grad))
        if grad.shape != ref.shape:
            raise ShapeError(f"{name}: gradient shape {grad.shape} != value shape {ref.shape}")
        self._grads[name] = grad.copy()

    def zero_grads(self):
        for name, v in self._values.items():
            self._grads[name] = np.zeros_like(v)

    def snapshot(self):
        return {name: v.copy() for name, v in self._values.items()}

    def load_snapshot(self, snap):
        for name, v in snap.items():
            self.set_value(name, v)

    def copy(self):
        other = ParamStore(self.rng_seed)
        for name, v in self._values.items():
            other.add(name, v)
        return other

    def flat_gradient(self):
        return np.concatenate([g.ravel() for g in self._grads.values()]) if self._grads else np.zeros(0)


# ------------------------------------------------------------------ checkpoints


def atomic_write(path, payload):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, params, buffers=None, meta=None):
    """Write parameters (and optional non-trainable ``buffers``) to ``path``.

    Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON
    header ``{format_version, rng_seed, entries: [{name, shape, kind}], meta}``,
    then each entry's values as little-endian float64 in header order.
    """
    buffers = buffers or {}
    entries, blobs = [], []
    for kind, items in (("param", ((n, params.value(n)) for n in params.names())), ("buffer", buffers.items())):
        for name, arr in items:
            arr = np.asarray(arr, dtype=DTYPE)
            entries.append({"name": name, "shape": list(arr.shape), "kind": kind})
            blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "rng_seed": params.rng_seed,
        "entries": entries,
        "meta": meta or {},
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    atomic_write(path, _MAGIC + struct.pack("<Q", len(raw)) + raw + b"".join(blobs))


def load_checkpoint(path):
    """Return ``(params, buffers, meta)`` from a file written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _MAGIC:
        raise CheckpointError(f"{path}: not a tljd checkpoint")
    (n,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + n].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} != supported {FORMAT_VERSION}"
        )
    params = ParamStore(header["rng_seed"])
    buffers = {}
    offset = 16 + n
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        arr = np.frombuffer(blob[offset:end], dtype="<f8").astype(DTYPE).reshape(shape)
        offset = end
        if entry["kind"] == "param":
            params.add(entry["name"], arr)
        else:
            buffers[entry["name"]] = arr
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    return params, buffers, header["meta"]
