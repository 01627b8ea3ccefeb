"""Weight file serialization.

Layout, all integers little-endian:

    magic   4 bytes  "QCLW"
    version u32      currently 1
    count   u32      number of named tensors
    per tensor:
        name_len u32, name UTF-8 bytes
        rank     u32
        extents  rank x u64
        payload  product(extents) x f64 little-endian

Round-trips are bit-exact; names must be unique. Each failure mode has
its own exception type so callers can tell a foreign file from a stale
one from a mismatched one.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ShapeError, ValidationError

MAGIC = b"QCLW"
VERSION = 1


class BadMagicError(ValidationError):
    """The file does not start with the QCLW magic."""


class VersionMismatchError(ValidationError):
    """The file's format version is not supported."""


class TruncatedFileError(ValidationError):
    """The file ended before a declared tensor was complete."""


class DuplicateTensorError(ValidationError):
    """Two tensors in the file share a name."""


class WeightShapeError(ShapeError):
    """A stored tensor's shape does not match what the model expects."""


def save_weights(named, path: str) -> None:
    """Write (name, array) pairs; accepts a dict or an iterable of pairs."""
    items = list(named.items()) if hasattr(named, "items") else list(named)
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        dup = next(n for n in names if names.count(n) > 1)
        raise DuplicateTensorError(f"duplicate tensor name {dup!r}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(items)))
        for name, arr in items:
            arr = np.asarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            for e in arr.shape:
                f.write(struct.pack("<Q", e))
            f.write(arr.astype("<f8", copy=False).tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file ends inside {what} "
                                     f"(needed {n} bytes at offset {self.pos})")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def load_weights(path: str) -> dict:
    """Read a weight file into an ordered name -> float64 array dict."""
    with open(path, "rb") as f:
        r = _Reader(f.read())
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError(f"{path} is not a QCLW weight file")
    version = r.u32("version")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported weight format version {version}, "
                                   f"expected {VERSION}")
    count = r.u32("tensor count")
    out: dict = {}
    for _ in range(count):
        name_len = r.u32("name length")
        name = r.take(name_len, "tensor name").decode("utf-8")
        if name in out:
            raise DuplicateTensorError(f"duplicate tensor name {name!r}")
        rank = r.u32(f"rank of {name!r}")
        shape = tuple(r.u64(f"extent of {name!r}") for _ in range(rank))
        n = int(np.prod(shape)) if shape else 1
        payload = r.take(8 * n, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64) \
                      .reshape(shape)
    if r.pos != len(r.data):
        raise ValidationError(f"{len(r.data) - r.pos} trailing bytes after the "
                              f"last declared tensor")
    return out


def check_shapes(loaded: dict, expected) -> None:
    """expected: (name, shape) pairs. Raises naming the first mismatch."""
    for name, shape in expected:
        if name not in loaded:
            raise WeightShapeError(f"tensor {name!r} missing from weight file")
        if loaded[name].shape != tuple(shape):
            raise WeightShapeError(f"tensor {name!r} has shape "
                                   f"{loaded[name].shape}, expected {tuple(shape)}")
