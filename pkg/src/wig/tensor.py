"""Dense float64 tensors, deterministic reductions, seeded RNG and NTF I/O.

Tensors are plain ``numpy.ndarray`` objects with dtype float64 in C order.
Images use channel-major ``C x H x W`` layout. A *feature* is a pixel
(spatial site): the channels of one pixel are attributed and masked together.
Inputs of rank 1 or 2 have no channel axis, so every entry is its own pixel.
"""

from __future__ import annotations

import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, NonFiniteError, ShapeError

NTF_MAGIC = "ntf v1"


def as_tensor(values, shape: Sequence[int] | None = None) -> np.ndarray:
    """Return ``values`` as a finite, C-contiguous float64 array.

    Raises NonFiniteError on NaN/Inf and ShapeError if ``shape`` is given and
    does not match.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        raise ShapeError("tensor must have at least one dimension")
    arr = np.ascontiguousarray(arr)
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise ShapeError(f"expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite value")
    return arr


def spatial_shape(shape: Sequence[int]) -> tuple[int, ...]:
    """Pixel grid of an input shape: drops the leading channel axis of C x H x W."""
    shape = tuple(shape)
    return shape[1:] if len(shape) == 3 else shape


def pixel_count(shape: Sequence[int]) -> int:
    return int(np.prod(spatial_shape(shape)))


def channel_sum(values: np.ndarray) -> np.ndarray:
    """Collapse per-scalar values to per-pixel values by summing channels."""
    return values.sum(axis=0) if values.ndim == 3 else values.copy()


def stable_sum(values: Iterable[float]) -> float:
    """Correctly rounded sum, independent of floating-point accumulation error.

    >>> stable_sum([1.0, 2.0, 3.0])
    6.0
    """
    vals = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                      dtype=np.float64).ravel()
    if vals.size == 0:
        return 0.0
    if not np.all(np.isfinite(vals)):
        raise NonFiniteError("non-finite value")
    return math.fsum(vals.tolist())


def compensated_sum(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise Neumaier summation of equally shaped arrays, in list order."""
    if len(arrays) == 0:
        raise ValueError("nothing to sum")
    total = np.array(arrays[0], dtype=np.float64, copy=True)
    comp = np.zeros_like(total)
    for a in arrays[1:]:
        a = np.asarray(a, dtype=np.float64)
        if a.shape != total.shape:
            raise ShapeError(f"shape mismatch in sum: {a.shape} vs {total.shape}")
        t = total + a
        big = np.abs(total) >= np.abs(a)
        comp += np.where(big, (total - t) + a, (a - t) + total)
        total = t
    out = total + comp
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite value")
    return out


def argsort_desc(values) -> np.ndarray:
    """Indices ordering ``values`` from largest to smallest.

    Ties are broken by ascending index, so the result is a total order.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(vals)):
        raise NonFiniteError("non-finite value")
    # lexsort sorts by the last key first; -0.0 and 0.0 compare equal here
    return np.lexsort((np.arange(vals.size), -vals)).astype(np.int64)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; identical seeds give identical streams."""
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.PCG64(seed))


def derived_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for (seed, key...), e.g. one per sample or trial."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


# -- NTF v1 file format ------------------------------------------------------

def ntf_bytes(tensor: np.ndarray) -> bytes:
    arr = as_tensor(tensor)
    header = f"{NTF_MAGIC} dtype=f64 shape={'x'.join(str(s) for s in arr.shape)}\n"
    return header.encode("ascii") + arr.astype("<f8").tobytes(order="C")


def parse_ntf(blob: bytes) -> np.ndarray:
    nl = blob.find(b"\n")
    if nl < 0:
        raise FormatError("header: missing newline terminator")
    try:
        header = blob[:nl].decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError("header: not ASCII") from exc
    parts = header.split(" ")
    if len(parts) != 4 or " ".join(parts[:2]) != NTF_MAGIC:
        raise FormatError(f"header: expected '{NTF_MAGIC} dtype=f64 shape=...', got {header!r}")
    if parts[2] != "dtype=f64":
        raise FormatError(f"dtype: unsupported {parts[2]!r}")
    if not parts[3].startswith("shape="):
        raise FormatError("shape: missing")
    try:
        shape = tuple(int(s) for s in parts[3][len("shape="):].split("x"))
    except ValueError as exc:
        raise FormatError(f"shape: malformed {parts[3]!r}") from exc
    if any(s <= 0 for s in shape):
        raise FormatError(f"shape: dimensions must be positive, got {shape}")
    payload = blob[nl + 1:]
    expected = int(np.prod(shape)) * 8
    if len(payload) != expected:
        raise FormatError(f"data: expected {expected} bytes for shape {shape}, got {len(payload)}")
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite value")
    return arr


def write_ntf(path, tensor: np.ndarray) -> None:
    atomic_write(path, ntf_bytes(tensor))


def read_ntf(path) -> np.ndarray:
    return parse_ntf(Path(path).read_bytes())


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
