"""Raster tensors, the deterministic RNG, tensor container I/O and previews.

Container layout (``.catt``), all integers little-endian::

    b"CATT" | version u8 = 1 | dtype u8 = 0x01 (float32) | ndim u8 |
    ndim x u32 dims | raw row-major float32 payload

Named-tensor files (``.catw``) hold ``u32 count`` followed, per tensor in
name order, by ``u16 name length | UTF-8 name | container``.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import FormatError, ShapeError, ValidationError

MAGIC = b"CATT"
VERSION = 1
DTYPE_F32 = 0x01

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)


class RasterTensor:
    """Immutable C x H x W float32 raster.

    A 2-D array is promoted to a single channel. The backing array is
    read-only so instances can be shared freely between workers.
    """

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float32, copy=True)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ShapeError(f"RasterTensor needs 2 or 3 dims, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("RasterTensor values must be finite")
        arr.flags.writeable = False
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._data.shape

    @property
    def channels(self) -> int:
        return self._data.shape[0]

    @property
    def height(self) -> int:
        return self._data.shape[1]

    @property
    def width(self) -> int:
        return self._data.shape[2]

    def as_f64(self) -> np.ndarray:
        return self._data.astype(np.float64)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._data
        return self._data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, RasterTensor):
            return NotImplemented
        return self.shape == other.shape and self._data.tobytes() == other._data.tobytes()

    def __hash__(self):
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self):
        return f"RasterTensor(channels={self.channels}, height={self.height}, width={self.width})"


def as_chw(x) -> np.ndarray:
    """Return ``x`` as a float64 C x H x W array (2-D inputs get one channel)."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"expected a C x H x W array, got shape {arr.shape}")
    return arr


# --------------------------------------------------------------------- RNG


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


def _key_to_u64(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """SplitMix64 generator evaluated in counter mode.

    Output ``i`` (0-based) is ``mix64(seed + (i + 1) * 0x9E3779B97F4A7C15)``,
    which is exactly the reference SplitMix64 sequence. Being counter based,
    blocks of outputs are computed vectorised with wrap-around uint64
    arithmetic, so streams are identical on every platform.

    Instances are single-owner. Use :meth:`spawn` to derive independent
    child streams for parallel work.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + 1 + n, dtype=_U64)
        self._counter += n
        with np.errstate(over="ignore"):
            state = _U64(self.seed) + idx * _GOLDEN
            return _mix64(state)

    def random(self, shape=()) -> np.ndarray | float:
        """Uniform doubles in [0, 1) from the top 53 bits of each output."""
        n = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
        u = (self.next_u64(n) >> _U64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return float(u[0]) if shape == () else u.reshape(shape)

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray | float:
        return low + (high - low) * self.random(shape)

    def normal(self, shape=(), scale: float = 1.0) -> np.ndarray | float:
        """Standard normals via Box-Muller, consuming two outputs per value."""
        n = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
        u = self.random((2, n))
        r = np.sqrt(-2.0 * np.log1p(-u[0]))
        z = scale * r * np.cos(2.0 * np.pi * u[1])
        return float(z[0]) if shape == () else z.reshape(shape)

    def integers(self, high: int, shape=()) -> np.ndarray | int:
        """Integers in [0, high) as ``floor(u * high)``."""
        vals = np.floor(self.random(shape) * high).astype(np.int64)
        return int(vals) if shape == () else vals

    def sample_without_replacement(self, population: int, k: int) -> list[int]:
        """``k`` distinct values from ``range(population)`` by partial Fisher-Yates."""
        if not 0 <= k <= population:
            raise ValidationError(f"cannot draw {k} distinct items from {population}")
        pool = list(range(population))
        for i in range(k):
            j = i + int(np.floor(self.random() * (population - i)))
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def spawn(self, key) -> "Rng":
        """Independent child generator keyed by an int or string."""
        with np.errstate(over="ignore"):
            mixed = _mix64(np.array([self.seed ^ _key_to_u64(key)], dtype=_U64) + _GOLDEN)
            mixed = _mix64(mixed ^ np.array([_key_to_u64(key)], dtype=_U64))
        return Rng(int(mixed[0]))


# --------------------------------------------------------------- container


def encode_array(arr) -> bytes:
    """Serialise an array of any rank (1..255) to container bytes."""
    a = np.asarray(arr)
    if a.ndim == 0 or a.ndim > 255:
        raise ShapeError(f"container rank must be 1..255, got {a.ndim}")
    a32 = np.ascontiguousarray(a, dtype="<f4")
    if not np.all(np.isfinite(a32)):
        raise ValidationError("tensor contains non-finite values")
    header = MAGIC + bytes([VERSION, DTYPE_F32, a32.ndim]) + struct.pack(f"<{a32.ndim}I", *a32.shape)
    return header + a32.tobytes()


def decode_array(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one container starting at ``offset``; returns (array, end offset)."""
    if len(buf) - offset < 7:
        raise FormatError("header", "truncated header")
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError("magic", f"expected {MAGIC!r}, got {bytes(buf[offset:offset + 4])!r}")
    version, dtype, ndim = buf[offset + 4], buf[offset + 5], buf[offset + 6]
    if version != VERSION:
        raise FormatError("version", f"unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError("dtype", f"unsupported dtype code 0x{dtype:02x}")
    pos = offset + 7
    if ndim == 0:
        raise FormatError("ndim", "rank 0 is not allowed")
    if len(buf) - pos < 4 * ndim:
        raise FormatError("dims", "truncated dimension list")
    dims = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    nbytes = 4 * int(np.prod(dims, dtype=np.int64))
    if len(buf) - pos < nbytes:
        have = (len(buf) - pos) // 4
        raise FormatError("payload length", f"dims {dims} need {nbytes // 4} values, found {have}")
    arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).reshape(dims)
    return arr.astype(np.float32), pos + nbytes


def tensor_write(t, path) -> None:
    """Write a raster (or any float array) as a single container file."""
    data = t.data if isinstance(t, RasterTensor) else t
    payload = encode_array(data)
    Path(path).write_bytes(payload)


def tensor_read(path) -> RasterTensor:
    arr = read_array(path)
    if arr.ndim not in (2, 3):
        raise FormatError("ndim", f"raster needs 2 or 3 dims, file has {arr.ndim}")
    return RasterTensor(arr)


def read_array(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    arr, end = decode_array(buf)
    if end != len(buf):
        raise FormatError("payload length", f"{len(buf) - end} trailing bytes after payload")
    return arr


def encode_named(tensors: Mapping[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValidationError(f"tensor name too long: {name[:40]}...")
        out.append(struct.pack("<H", len(raw)) + raw + encode_array(tensors[name]))
    return b"".join(out)


def decode_named(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 4:
        raise FormatError("count", "truncated tensor count")
    (count,) = struct.unpack_from("<I", buf, 0)
    pos = 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        if len(buf) - pos < 2:
            raise FormatError("name length", "truncated entry")
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = bytes(buf[pos:pos + nlen]).decode("utf-8")
        pos += nlen
        if name in tensors:
            raise FormatError("name", f"duplicate tensor name {name!r}")
        tensors[name], pos = decode_array(buf, pos)
    if pos != len(buf):
        raise FormatError("payload length", f"{len(buf) - pos} trailing bytes")
    return tensors


def write_named(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode_named(tensors))


def read_named(path) -> dict[str, np.ndarray]:
    return decode_named(Path(path).read_bytes())


# ----------------------------------------------------------------- preview


def stretch_to_u8(band: np.ndarray) -> np.ndarray:
    """Min-max stretch to 0..255, rounding half away from zero; flat bands map to 0."""
    b = np.asarray(band, dtype=np.float64)
    lo, hi = b.min(), b.max()
    if hi <= lo:
        return np.zeros(b.shape, dtype=np.uint8)
    scaled = (b - lo) / (hi - lo) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def export_preview(t, band_selection: Iterable[int], path) -> None:
    """Write three bands of ``t`` as a binary PPM (P6, maxval 255)."""
    data = t.data if isinstance(t, RasterTensor) else as_chw(t)
    bands = list(band_selection)
    if len(bands) != 3:
        raise ValidationError(f"need exactly three bands, got {bands}")
    for b in bands:
        if not 0 <= b < data.shape[0]:
            raise ValidationError(f"band index {b} out of range for {data.shape[0]} channels")
    rgb = np.stack([stretch_to_u8(data[b]) for b in bands], axis=-1)
    h, w = rgb.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())
