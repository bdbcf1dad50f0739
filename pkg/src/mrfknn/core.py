"""Shared numeric primitives: unitary FFTs, a direct non-uniform DFT, seeded
random streams and the ``MRFT`` binary tensor format.

Arrays are plain numpy arrays. A "grid" is a square complex array indexed as
``grid[x, y]`` with pixel origin at ``(0, 0)``. k-space locations are in
cycles/pixel, inside ``[-0.5, 0.5)^2``.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

__all__ = [
    "DimensionError",
    "FormatError",
    "fft2",
    "dft2_direct",
    "rng",
    "save_tensor",
    "load_tensor",
    "is_pow2",
]


class DimensionError(ValueError):
    """Raised when an array extent violates an operation's shape contract."""


class FormatError(ValueError):
    """Raised when an MRFT file is malformed or truncated."""


_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "c64": np.dtype("<c8"),
    "c128": np.dtype("<c16"),
    "i32": np.dtype("<i4"),
    "u8": np.dtype("u1"),
}


def is_pow2(m: int) -> bool:
    return m > 0 and (m & (m - 1)) == 0


def rng(seed: int) -> np.random.Generator:
    """Seeded generator; the only source of randomness in the package."""
    return np.random.Generator(np.random.PCG64(np.uint64(seed)))


def fft2(grid: np.ndarray, direction: str = "forward") -> np.ndarray:
    """Unitary 2-D FFT of a square power-of-two grid.

    Parameters
    ----------
    grid : (M, M) complex array
    direction : {'forward', 'inverse'}
    """
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise DimensionError(f"expected a square grid, got shape {grid.shape}")
    if not is_pow2(grid.shape[0]):
        raise DimensionError(f"grid extent {grid.shape[0]} is not a power of two")
    if direction == "forward":
        return np.fft.fft2(grid, norm="ortho")
    if direction == "inverse":
        return np.fft.ifft2(grid, norm="ortho")
    raise ValueError(f"unknown direction {direction!r}")


def _check_locations(points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[-1] != 2:
        raise DimensionError(f"k-space locations must have 2 coordinates, got {points.shape}")
    # 0.5 is the same frequency as -0.5; spiral endpoints land there exactly
    if np.any(np.abs(points) > 0.5 + 1e-12):
        raise ValueError("k-space location outside [-0.5, 0.5]^2")
    return points


def dft2_direct(points: np.ndarray, image: np.ndarray) -> np.ndarray:
    """Exact non-uniform DFT by direct summation.

    ``out[j] = sum_{x,y} image[x, y] * exp(-2j*pi*(kx_j*x + ky_j*y))``

    Cost is O(N * M^2); meant for small grids and as a reference.
    """
    points = _check_locations(points)
    image = np.asarray(image, dtype=np.complex128)
    m0, m1 = image.shape
    ex = np.exp(-2j * np.pi * np.outer(points[:, 0], np.arange(m0)))
    ey = np.exp(-2j * np.pi * np.outer(points[:, 1], np.arange(m1)))
    return np.einsum("jx,xy,jy->j", ex, image, ey)


def save_tensor(path: str | os.PathLike, tensor: np.ndarray) -> None:
    """Write ``tensor`` as ``MRFT <dtype> <ndim> <ext...>\\n`` + little-endian payload."""
    arr = np.asarray(tensor)
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    code = next((c for c, dt in _DTYPES.items()
                 if dt.kind == arr.dtype.kind and dt.itemsize == arr.dtype.itemsize), None)
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    header = " ".join(["MRFT", code, str(arr.ndim), *map(str, arr.shape)]) + "\n"
    payload = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    Path(path).write_bytes(header.encode("ascii") + payload)


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    fields = raw[:nl].decode("ascii", errors="replace").split()
    if len(fields) < 3 or fields[0] != "MRFT" or fields[1] not in _DTYPES:
        raise FormatError(f"{path}: bad header {raw[:nl]!r}")
    try:
        ndim = int(fields[2])
        shape = tuple(int(s) for s in fields[3:])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header {raw[:nl]!r}") from exc
    if len(shape) != ndim:
        raise FormatError(f"{path}: header declares {ndim} dims but lists {len(shape)} extents")
    dtype = _DTYPES[fields[1]]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    actual = len(raw) - nl - 1
    if actual != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, found {actual}")
    return np.frombuffer(raw[nl + 1:], dtype=dtype).reshape(shape).copy()
