"""Named parameter storage with a flat view and a binary checkpoint format.

Checkpoint layout (all integers little-endian)::

    8s   magic  b"DGUPARAM"
    u32  format version
    u32  number of entries
    per entry: u16 name length, utf-8 name, u8 ndim, ndim x u32 dims
    f64  values of every entry, flattened row-major, in manifest order
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .tape import DTYPE, Tensor

MAGIC = b"DGUPARAM"
VERSION = 1

Manifest = tuple[tuple[str, tuple[int, ...]], ...]


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[1]
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class ParamStore:
    """Ordered mapping of parameter name to float64 array.

    Iteration order is insertion order and defines the flat layout.
    """

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self._arrays: dict[str, np.ndarray] = {}
        for name, arr in (arrays or {}).items():
            self[name] = arr

    def __setitem__(self, name: str, value) -> None:
        arr = np.array(value, dtype=DTYPE)
        if name in self._arrays and self._arrays[name].shape != arr.shape:
            raise ValueError(
                f"parameter {name!r}: shape {arr.shape} differs from {self._arrays[name].shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"parameter {name!r} has non-finite entries")
        self._arrays[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    @property
    def manifest(self) -> Manifest:
        return tuple((name, arr.shape) for name, arr in self._arrays.items())

    @property
    def size(self) -> int:
        return manifest_size(self.manifest)

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._arrays.items()})

    def flatten(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0, dtype=DTYPE)
        return np.concatenate([a.ravel() for a in self._arrays.values()])

    @classmethod
    def unflatten(cls, flat: np.ndarray, manifest: Manifest) -> "ParamStore":
        flat = np.asarray(flat, dtype=DTYPE)
        n = manifest_size(manifest)
        if flat.shape != (n,):
            raise ValueError(f"flat vector has shape {flat.shape}, manifest needs ({n},)")
        store = cls()
        for name, shape, sl in manifest_slices(manifest):
            store[name] = flat[sl].reshape(shape)
        return store

    def tensors(self) -> dict[str, Tensor]:
        """Fresh leaf tensors (requiring gradients) over copies of the values."""
        return {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in self._arrays.items()}

    def equals(self, other: "ParamStore") -> bool:
        return self.manifest == other.manifest and all(
            np.array_equal(self[k], other[k]) for k in self
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(dumps(self))

    @classmethod
    def load(cls, path: str | Path) -> "ParamStore":
        return loads(Path(path).read_bytes())


def manifest_size(manifest: Manifest) -> int:
    return int(sum(int(np.prod(shape, dtype=np.int64)) for _, shape in manifest))


def manifest_slices(manifest: Manifest):
    offset = 0
    for name, shape in manifest:
        n = int(np.prod(shape, dtype=np.int64))
        yield name, shape, slice(offset, offset + n)
        offset += n


def dumps(store: ParamStore) -> bytes:
    header = [MAGIC, struct.pack("<II", VERSION, len(store))]
    for name, shape in store.manifest:
        raw = name.encode("utf-8")
        header.append(struct.pack("<H", len(raw)) + raw)
        header.append(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
    body = store.flatten().astype("<f8").tobytes()
    return b"".join(header) + body


def loads(data: bytes) -> ParamStore:
    if data[:8] != MAGIC:
        raise ValueError("not a parameter checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 16
    manifest = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        manifest.append((name, tuple(shape)))
    manifest = tuple(manifest)
    n = manifest_size(manifest)
    flat = np.frombuffer(data, dtype="<f8", count=n, offset=pos)
    if pos + 8 * n != len(data):
        raise ValueError("checkpoint length does not match its manifest")
    return ParamStore.unflatten(flat.astype(DTYPE), manifest)
